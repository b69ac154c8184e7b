"""Mesh-guided anchoring: merge and create deformed Gaussians so they cover the mesh faces.

Faces of the current mesh claim nearby deformed Gaussians. A face claiming
several Gaussians replaces them with their average, a face claiming none gets a
new Gaussian at its centroid, and a face claiming exactly one keeps it and adds
its squared centroid distance to the anchor loss. New and merged Gaussians are
mapped back to canonical space with the backward deformation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import CanonicalSet, Gaussian, QUAT_IDENTITY, quat_from_two_vectors, quat_normalize
from .deform import DeformationModel, deform_arrays, forward_deform
from .errors import DGMeshError
from .isosurface import TriMesh, face_centroids, face_normals, unique_edges
from .spatial import nearest, nearest_neighbor_distances, within_radius

MATCHING_MODES = ("radius", "nearest")


@dataclass(frozen=True)
class AnchorConfig:
    """``r_s=None`` means one mean face-edge length of the mesh being anchored to."""

    r_s: float | None = None
    interval: int = 100
    matching_mode: str = "radius"

    def __post_init__(self):
        if self.r_s is not None and not self.r_s > 0:
            raise DGMeshError("search radius must be positive")
        if int(self.interval) < 1:
            raise DGMeshError("anchoring interval must be at least 1")
        if self.matching_mode not in MATCHING_MODES:
            raise DGMeshError(f"unknown matching mode {self.matching_mode!r}")

    def radius_for(self, mesh: TriMesh) -> float:
        return float(self.r_s) if self.r_s is not None else face_edge_length(mesh)


def face_edge_length(mesh: TriMesh) -> float:
    e = unique_edges(mesh.faces)
    if len(e) == 0:
        raise DGMeshError("mesh has no edges")
    return float(np.mean(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)))


@dataclass(frozen=True)
class FaceAssignment:
    centroids: np.ndarray
    members: tuple  # per face: int array of gaussian indices
    ids: np.ndarray  # gaussian ids, parallel to the positions used for matching
    nearest_face: np.ndarray
    nearest_distance: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)

    def member_ids(self, face: int) -> np.ndarray:
        return self.ids[self.members[face]]

    def coverage(self) -> float:
        return float(np.mean(self.counts >= 1)) if len(self.members) else 0.0

    def one_to_one(self) -> tuple[np.ndarray, np.ndarray]:
        """(face indices, gaussian indices) of faces holding exactly one Gaussian."""
        faces = np.flatnonzero(self.counts == 1)
        gauss = np.array([self.members[f][0] for f in faces], dtype=np.int64)
        return faces, gauss


def match_gaussians_to_faces(positions, centroids, cfg: AnchorConfig, ids=None, exclusive: bool = False) -> FaceAssignment:
    """Associate Gaussians with faces.

    nearest mode: each Gaussian joins the face with the nearest centroid.
    radius mode: each face lists every Gaussian within ``cfg.r_s`` of its centroid;
    with ``exclusive=True`` a Gaussian within range of several faces is kept only by
    the nearest one, so no Gaussian is claimed twice.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 3)
    if len(centroids) == 0:
        raise DGMeshError("need at least one face centroid")
    n = len(positions)
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    near_face, near_d2 = nearest(positions, centroids)
    near_dist = np.sqrt(near_d2)
    m = len(centroids)
    if cfg.matching_mode == "nearest" or exclusive:
        take = np.ones(n, dtype=bool)
        if cfg.matching_mode == "radius":
            if cfg.r_s is None:
                raise DGMeshError("radius matching needs an explicit r_s")
            take = near_d2 <= cfg.r_s * cfg.r_s
        idx = np.flatnonzero(take)
        order = np.argsort(near_face[idx], kind="stable")
        idx = idx[order]
        bounds = np.searchsorted(near_face[idx], np.arange(m + 1))
        members = tuple(idx[bounds[f] : bounds[f + 1]] for f in range(m))
    else:
        if cfg.r_s is None:
            raise DGMeshError("radius matching needs an explicit r_s")
        members = tuple(within_radius(centroids, positions, cfg.r_s))
    return FaceAssignment(centroids, members, ids, near_face, near_dist)


class AnchorLoss(NamedTuple):
    value: float
    pairs: int

    @property
    def empty(self) -> bool:
        return self.pairs == 0


def anchor_loss(assignment: FaceAssignment, positions) -> AnchorLoss:
    """Mean squared Gaussian-to-centroid distance over one-to-one faces (0 and empty when none)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    faces, gauss = assignment.one_to_one()
    if len(faces) == 0:
        return AnchorLoss(0.0, 0)
    d = positions[gauss] - assignment.centroids[faces]
    return AnchorLoss(float(np.sum(d * d) / len(faces)), int(len(faces)))


def anchor_loss_gradient(assignment: FaceAssignment, positions, mesh: TriMesh):
    """Loss plus gradients w.r.t. Gaussian positions and mesh vertices."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    g_pos = np.zeros_like(positions)
    g_vert = np.zeros_like(mesh.vertices)
    faces, gauss = assignment.one_to_one()
    if len(faces) == 0:
        return 0.0, g_pos, g_vert
    d = positions[gauss] - assignment.centroids[faces]
    n = len(faces)
    g = 2.0 * d / n
    np.add.at(g_pos, gauss, g)
    for k in range(3):
        np.add.at(g_vert, mesh.faces[faces, k], -g / 3.0)
    return float(np.sum(d * d) / n), g_pos, g_vert


def uniformity_metric(positions) -> float:
    """Coefficient of variation of nearest-neighbour distances (0 for a perfect lattice)."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) < 2:
        raise DGMeshError("uniformity needs at least two points")
    d = nearest_neighbor_distances(positions)
    mean = d.mean()
    if mean == 0.0:
        return 0.0
    return float(d.std() / mean)


def merge_gaussians(group, new_id: int) -> Gaussian:
    """Average of a group; quaternions are sign-aligned to the first member before averaging."""
    group = list(group)
    if not group:
        raise DGMeshError("cannot merge an empty group")
    pos = np.mean([g.position for g in group], axis=0)
    scale = np.mean([g.scale for g in group], axis=0)
    opacity = float(np.mean([g.opacity for g in group]))
    quats = np.array([g.rotation for g in group])
    signs = np.where(quats @ quats[0] < 0, -1.0, 1.0)
    mean_q = np.mean(quats * signs[:, None], axis=0)
    if np.linalg.norm(mean_q) < 1e-9:
        mean_q = quats[0]
    return Gaussian(new_id, pos, quat_normalize(mean_q), scale, opacity)


def new_face_gaussian(centroid, normal, edge_length: float, new_id: int) -> Gaussian:
    """Surface-scaled Gaussian at a face centroid whose shortest axis is the face normal."""
    rotation = quat_from_two_vectors(np.array([0.0, 0.0, 1.0]), normal) if np.linalg.norm(normal) > 0 else QUAT_IDENTITY
    s = edge_length / 3.0
    return Gaussian(new_id, centroid, rotation, np.array([s, s, 0.1 * s]), 0.5)


@dataclass
class AnchorReport:
    merges: int = 0
    merged_gaussians: int = 0
    creations: int = 0
    kept: int = 0
    loss: float = 0.0
    pairs: int = 0
    coverage_before: float = 0.0
    r_s: float = 0.0
    uniformity_before: float = float("nan")
    uniformity_after: float = float("nan")
    removed_ids: list = field(default_factory=list)
    merged_into: dict = field(default_factory=dict)  # removed id -> surviving merged id
    created_ids: list = field(default_factory=list)


def anchor_step(
    canonical: CanonicalSet,
    forward: DeformationModel,
    backward: DeformationModel,
    mesh: TriMesh,
    t: float,
    cfg: AnchorConfig,
) -> tuple[CanonicalSet, float, AnchorReport]:
    if mesh.n_faces == 0:
        raise DGMeshError("cannot anchor to an empty mesh")
    r_s = cfg.radius_for(mesh)
    run_cfg = AnchorConfig(r_s, cfg.interval, cfg.matching_mode)
    deformed = deform_arrays(forward, canonical.positions, canonical.rotations, canonical.scales, canonical.opacities, t)
    centroids = face_centroids(mesh)
    normals = face_normals(mesh)
    edge = face_edge_length(mesh)
    assignment = match_gaussians_to_faces(deformed.positions, centroids, run_cfg, canonical.ids, exclusive=True)
    loss = anchor_loss(assignment, deformed.positions)

    report = AnchorReport(loss=loss.value, pairs=loss.pairs, coverage_before=assignment.coverage(), r_s=r_s)
    if len(canonical) >= 2:
        report.uniformity_before = uniformity_metric(deformed.positions)

    next_id = canonical.next_id
    removed = np.zeros(len(canonical), dtype=bool)
    added: list[Gaussian] = []
    for f, members in enumerate(assignment.members):
        k = len(members)
        if k > 1:
            group = [
                Gaussian(int(canonical.ids[i]), deformed.positions[i], deformed.rotations[i], deformed.scales[i], float(deformed.opacities[i]))
                for i in members
            ]
            merged = merge_gaussians(group, next_id)
            added.append(forward_deform(backward, merged, t))
            removed[members] = True
            for i in members:
                report.merged_into[int(canonical.ids[i])] = next_id
            report.removed_ids.extend(int(canonical.ids[i]) for i in members)
            report.merges += 1
            report.merged_gaussians += k
            next_id += 1
        elif k == 1:
            report.kept += 1
        else:
            created = new_face_gaussian(centroids[f], normals[f], edge, next_id)
            added.append(forward_deform(backward, created, t))
            report.created_ids.append(next_id)
            report.creations += 1
            next_id += 1

    keep = ~removed
    ids = np.concatenate([canonical.ids[keep], [g.id for g in added]]).astype(np.int64)
    stack = lambda arr, attr, width: np.concatenate([arr[keep], np.array([getattr(g, attr) for g in added]).reshape(-1, width)])
    updated = CanonicalSet(
        ids,
        stack(canonical.positions, "position", 3),
        stack(canonical.rotations, "rotation", 4),
        stack(canonical.scales, "scale", 3),
        np.concatenate([canonical.opacities[keep], [g.opacity for g in added]]),
        next_id=next_id,
    )
    if len(updated) >= 2:
        after = deform_arrays(forward, updated.positions, updated.rotations, updated.scales, updated.opacities, t)
        report.uniformity_after = uniformity_metric(after.positions)
    return updated, loss.value, report
