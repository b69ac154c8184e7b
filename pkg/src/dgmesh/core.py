"""Domain types and Gaussian algebra shared by the rest of the package.

Quaternions are always stored in (w, x, y, z) order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DGMeshError, InvalidRotation, InvalidScale

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for one named stream derived from a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream])))


def derive_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), *stream]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# quaternions


def quat_normalize(q, fallback=None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if fallback is None:
        if np.any(norm == 0.0):
            raise InvalidRotation("zero quaternion")
        return q / norm
    bad = norm[..., 0] < 1e-12
    out = q / np.where(norm == 0.0, 1.0, norm)
    if np.any(bad):
        out = np.where(bad[..., None], np.asarray(fallback, dtype=float), out)
    return out


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _rotation_from_unit(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (batch of) quaternion(s); input is renormalized first."""
    return _rotation_from_unit(quat_normalize(q))


def rotation_jacobian(q) -> np.ndarray:
    """d R / d q of the quadratic rotation formula at unit ``q``; shape (..., 3, 3, 4)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    zero = np.zeros_like(w)
    j = np.empty(q.shape[:-1] + (3, 3, 4))
    j[..., 0, 0, :] = np.stack([zero, zero, -4 * y, -4 * z], -1)
    j[..., 0, 1, :] = np.stack([-2 * z, 2 * y, 2 * x, -2 * w], -1)
    j[..., 0, 2, :] = np.stack([2 * y, 2 * z, 2 * w, 2 * x], -1)
    j[..., 1, 0, :] = np.stack([2 * z, 2 * y, 2 * x, 2 * w], -1)
    j[..., 1, 1, :] = np.stack([zero, -4 * x, zero, -4 * z], -1)
    j[..., 1, 2, :] = np.stack([-2 * x, -2 * w, 2 * z, 2 * y], -1)
    j[..., 2, 0, :] = np.stack([-2 * y, 2 * z, -2 * w, 2 * x], -1)
    j[..., 2, 1, :] = np.stack([2 * x, 2 * w, 2 * z, 2 * y], -1)
    j[..., 2, 2, :] = np.stack([zero, -4 * x, -4 * y, zero], -1)
    return j


def normalize_vjp(q, grad) -> np.ndarray:
    """Pull ``grad`` (w.r.t. q/|q|) back to ``q``."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    unit = q / norm
    return (grad - unit * np.sum(unit * grad, axis=-1, keepdims=True)) / norm


def quat_from_rotvec(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-6
    # sin(a/2)/a, series below 1e-6
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), k * omega], axis=-1)


def quat_from_rotvec_jacobian(omega) -> np.ndarray:
    """d quat_from_rotvec / d omega, shape (..., 4, 3)."""
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-6
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / safe)
    # dk/da / a, series: -1/24 + a^2/960
    dk_over_a = np.where(small, -1.0 / 24.0 + angle**2 / 960.0, (0.5 * np.cos(half) * safe - np.sin(half)) / safe**3)
    jac = np.empty(omega.shape[:-1] + (4, 3))
    jac[..., 0, :] = -0.5 * k * omega
    eye = np.eye(3)
    jac[..., 1:, :] = k[..., None] * eye + dk_over_a[..., None] * omega[..., :, None] * omega[..., None, :]
    return jac


def quat_from_two_vectors(a, b) -> np.ndarray:
    """Unit quaternion rotating unit vector ``a`` onto unit vector ``b`` (batched)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    d = np.sum(a * b, axis=-1)
    c = np.cross(a, b)
    q = np.concatenate([(1.0 + d)[..., None], c], axis=-1)
    opposite = d < -1.0 + 1e-12
    if np.any(opposite):
        # any axis orthogonal to a
        helper = np.where(np.abs(a[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        q = np.where(opposite[..., None], np.concatenate([np.zeros_like(d)[..., None], axis], -1), q)
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# Gaussians


@dataclass(frozen=True)
class Gaussian:
    id: int
    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = quat_normalize(np.asarray(self.rotation, dtype=float).reshape(4))
        scale = np.asarray(self.scale, dtype=float).reshape(3)
        if np.any(scale <= 0):
            raise InvalidScale(f"scale must be positive, got {scale}")
        if not 0.0 <= float(self.opacity) <= 1.0:
            raise DGMeshError(f"opacity {self.opacity} outside [0, 1]")
        for name, arr in (("position", pos), ("rotation", rot), ("scale", scale)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "opacity", float(self.opacity))

    def replace(self, **changes) -> "Gaussian":
        fields = dict(id=self.id, position=self.position, rotation=self.rotation, scale=self.scale, opacity=self.opacity)
        fields.update(changes)
        return Gaussian(**fields)


class CanonicalSet:
    """Ordered, id-unique Gaussian collection stored as parallel arrays."""

    def __init__(self, ids, positions, rotations, scales, opacities, next_id: int | None = None):
        self.ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        n = self.ids.shape[0]
        self.positions = np.asarray(positions, dtype=float).reshape(n, 3)
        self.rotations = quat_normalize(np.asarray(rotations, dtype=float).reshape(n, 4)) if n else np.zeros((0, 4))
        self.scales = np.asarray(scales, dtype=float).reshape(n, 3)
        self.opacities = np.asarray(opacities, dtype=float).reshape(n)
        if len(np.unique(self.ids)) != n:
            raise DGMeshError("gaussian ids must be unique")
        if n and np.any(self.scales <= 0):
            raise InvalidScale("scale components must be positive")
        if n and (np.any(self.opacities < 0) or np.any(self.opacities > 1)):
            raise DGMeshError("opacity outside [0, 1]")
        floor = int(self.ids.max()) + 1 if n else 0
        self.next_id = max(floor, int(next_id) if next_id is not None else 0)
        for arr in (self.ids, self.positions, self.rotations, self.scales, self.opacities):
            arr.setflags(write=False)

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian], next_id: int | None = None) -> "CanonicalSet":
        gs = list(gaussians)
        if not gs:
            return cls.empty(next_id or 0)
        return cls(
            [g.id for g in gs],
            np.stack([g.position for g in gs]),
            np.stack([g.rotation for g in gs]),
            np.stack([g.scale for g in gs]),
            [g.opacity for g in gs],
            next_id=next_id,
        )

    @classmethod
    def empty(cls, next_id: int = 0) -> "CanonicalSet":
        return cls(np.zeros(0, np.int64), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), next_id)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(int(self.ids[i]), self.positions[i], self.rotations[i], self.scales[i], float(self.opacities[i]))

    @property
    def gaussians(self) -> list[Gaussian]:
        return [self[i] for i in range(len(self))]

    def with_arrays(self, positions=None, rotations=None, scales=None, opacities=None) -> "CanonicalSet":
        return CanonicalSet(
            self.ids,
            self.positions if positions is None else positions,
            self.rotations if rotations is None else rotations,
            self.scales if scales is None else scales,
            self.opacities if opacities is None else opacities,
            next_id=self.next_id,
        )


# ---------------------------------------------------------------------------
# point clouds and grids


@dataclass(frozen=True)
class OrientedPointCloud:
    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if pos.shape != nrm.shape:
            raise DGMeshError(f"{len(pos)} positions but {len(nrm)} normals")
        if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
            raise DGMeshError("normals must be unit length")
        pos.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True)
class GridSpec:
    """Periodic cubic grid: nodes at ``origin + spacing * i`` for ``i`` in ``[0, resolution)``."""

    resolution: int
    origin: tuple[float, float, float]
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "origin", tuple(float(v) for v in np.asarray(self.origin, dtype=float).reshape(3)))
        object.__setattr__(self, "spacing", float(self.spacing))
        if self.resolution < 8:
            raise DGMeshError("grid resolution must be at least 8")
        if not self.spacing > 0:
            raise DGMeshError("grid spacing must be positive")

    @classmethod
    def cube(cls, lo: float, hi: float, resolution: int) -> "GridSpec":
        """Grid whose periodic cell spans ``[lo, hi)`` on every axis."""
        return cls(resolution, (lo, lo, lo), (hi - lo) / resolution)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.resolution,) * 3

    @property
    def h(self) -> float:
        return self.spacing

    def to_index(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.spacing

    def node_positions(self) -> np.ndarray:
        ax = np.asarray(self.origin)[None, :] + self.spacing * np.arange(self.resolution)[:, None]
        return np.stack(np.meshgrid(ax[:, 0], ax[:, 1], ax[:, 2], indexing="ij"), axis=-1)

    def contains(self, points, margin_cells: float = 0.0) -> np.ndarray:
        u = self.to_index(points)
        return np.all((u >= margin_cells) & (u <= self.resolution - 1 - margin_cells), axis=-1)


@dataclass(frozen=True)
class ScalarGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.spec.shape:
            raise DGMeshError(f"grid values shape {vals.shape} does not match {self.spec.shape}")
        if not np.all(np.isfinite(vals)):
            raise DGMeshError("grid values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class VectorGrid:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.spec.shape + (3,):
            raise DGMeshError(f"grid values shape {vals.shape} does not match {self.spec.shape + (3,)}")
        if not np.all(np.isfinite(vals)):
            raise DGMeshError("grid values must be finite")
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# geometry


def build_covariance(r, s) -> np.ndarray:
    """Covariance R S S^T R^T from a rotation quaternion and per-axis scales."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise InvalidScale(f"scale must be positive, got {s}")
    rot = quat_to_rotation(r)
    m = rot * s[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def shortest_axis(scales) -> np.ndarray:
    """Index of the smallest scale component; ties go to the lowest axis."""
    return np.argmin(np.asarray(scales, dtype=float), axis=-1)


def normals_from_rotations(rotations, scales) -> np.ndarray:
    """Rotation column of each Gaussian's shortest axis (sign carried by the rotation)."""
    rot = quat_to_rotation(rotations)
    axis = shortest_axis(scales)
    return np.take_along_axis(rot, axis[..., None, None].repeat(3, axis=-2), axis=-1)[..., 0]


def normals_vjp(rotations, scales, grad) -> np.ndarray:
    """Gradient w.r.t. (unnormalized) rotations of ``<grad, normals_from_rotations(...)>``."""
    rotations = np.asarray(rotations, dtype=float)
    unit = quat_normalize(rotations)
    jac = rotation_jacobian(unit)  # (N, 3, 3, 4)
    axis = shortest_axis(scales)
    col = np.take_along_axis(jac, axis[:, None, None, None].repeat(3, 1).repeat(4, 3), axis=2)[:, :, 0, :]
    g_unit = np.einsum("ni,nik->nk", grad, col)
    return normalize_vjp(rotations, g_unit)


def gaussian_normal(g: Gaussian) -> np.ndarray:
    return normals_from_rotations(g.rotation[None], g.scale[None])[0]


def orient_normals(cloud: OrientedPointCloud, centroid_mode: str = "outward") -> OrientedPointCloud:
    """Flip normals so they point away from (``outward``) or toward (``inward``) the centroid."""
    if len(cloud) == 0:
        raise DGMeshError("cannot orient an empty cloud")
    if centroid_mode not in ("outward", "inward"):
        raise DGMeshError(f"unknown centroid_mode {centroid_mode!r}")
    centroid = cloud.positions.mean(axis=0)
    side = np.sum(cloud.normals * (cloud.positions - centroid), axis=1)
    flip = side < 0 if centroid_mode == "outward" else side > 0
    return OrientedPointCloud(cloud.positions, np.where(flip[:, None], -cloud.normals, cloud.normals))


def gaussians_to_cloud(positions, rotations, scales) -> OrientedPointCloud:
    return OrientedPointCloud(positions, normals_from_rotations(rotations, scales))

