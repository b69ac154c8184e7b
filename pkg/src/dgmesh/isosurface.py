"""Marching cubes with fixed-topology gradients, plus mesh utilities."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._mc_table import CORNERS, EDGES, triangle_table
from .core import GridSpec, OrientedPointCloud, ScalarGrid, make_rng
from .errors import DegenerateMesh, NotDifferentiable

log = logging.getLogger(__name__)

ISO_NUDGE = 1e-12


@dataclass(frozen=True)
class MeshProvenance:
    """Where each marching-cubes vertex came from: grid edge endpoints and parameter t."""

    spec: GridSpec
    iso: float
    node_a: np.ndarray  # (V,) flat node index of the low endpoint
    node_b: np.ndarray
    t: np.ndarray
    values_a: np.ndarray  # chi at the endpoints (after the iso nudge)
    values_b: np.ndarray


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    provenance: MeshProvenance | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise DegenerateMesh("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise DegenerateMesh("face with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.faces)


# ---------------------------------------------------------------------------
# marching cubes


def _nudged(values: np.ndarray, iso: float) -> np.ndarray:
    exact = values == iso
    if not np.any(exact):
        return values
    scale = max(float(np.max(np.abs(values))), 1.0)
    return np.where(exact, iso + ISO_NUDGE * scale, values)


def marching_cubes(chi: ScalarGrid, iso: float = 0.0) -> TriMesh:
    """Indexed, watertight isosurface; faces point toward increasing chi."""
    spec = chi.spec
    n = spec.resolution
    vals = _nudged(chi.values, iso)
    below = vals < iso
    m = n - 1
    case = np.zeros((m, m, m), dtype=np.int64)
    for c, (ox, oy, oz) in enumerate(CORNERS):
        case |= below[ox : ox + m, oy : oy + m, oz : oz + m].astype(np.int64) << c
    table, counts = triangle_table()
    flat_case = case.ravel()
    cells = np.flatnonzero(counts[flat_case] > 0)
    if cells.size == 0:
        return _empty_mesh(spec, iso)
    ntri = counts[flat_case[cells]]
    cell_rep = np.repeat(cells, ntri)
    slot = np.arange(ntri.sum()) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    local = table[flat_case[cell_rep], slot]  # (F, 3) local edge ids

    ci, cj, ck = np.unravel_index(cell_rep, (m, m, m))
    edge_low = np.array([CORNERS[a] for a, _, _ in EDGES])
    edge_axis = np.array([ax for _, _, ax in EDGES])
    base = np.stack([ci, cj, ck], axis=-1)[:, None, :] + edge_low[local]  # (F, 3, 3)
    node_a = (base[..., 0] * n + base[..., 1]) * n + base[..., 2]
    keys = edge_axis[local] * n**3 + node_a
    uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
    faces = inverse.reshape(-1, 3)

    axis = uniq // n**3
    a_flat = uniq % n**3
    stride = np.array([n * n, n, 1])[axis]
    b_flat = a_flat + stride
    flat_vals = vals.ravel()
    va, vb = flat_vals[a_flat], flat_vals[b_flat]
    t = (iso - va) / (vb - va)
    pa = np.stack(np.unravel_index(a_flat, spec.shape), axis=-1).astype(float)
    offset = np.zeros_like(pa)
    offset[np.arange(len(axis)), axis] = 1.0
    verts = np.asarray(spec.origin) + spec.spacing * (pa + t[:, None] * offset)
    prov = MeshProvenance(spec, float(iso), a_flat, b_flat, t, va, vb)
    return TriMesh(verts, faces, prov)


def _empty_mesh(spec: GridSpec, iso: float) -> TriMesh:
    empty_i = np.zeros(0, dtype=np.int64)
    empty_f = np.zeros(0)
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), MeshProvenance(spec, float(iso), empty_i, empty_i, empty_f, empty_f, empty_f))


def mc_backprop(mesh: TriMesh, dL_dvertices) -> ScalarGrid:
    """Gradient on chi of a vertex-position loss, holding the triangulation fixed."""
    prov = mesh.provenance
    if prov is None:
        raise NotDifferentiable("mesh carries no marching-cubes provenance")
    spec = prov.spec
    g = np.asarray(dL_dvertices, dtype=float).reshape(-1, 3)
    size = spec.resolution**3
    direction = np.zeros_like(g)
    axis = np.argmax(
        np.stack([(prov.node_b - prov.node_a) == s for s in (spec.resolution**2, spec.resolution, 1)], axis=-1), axis=-1
    )
    direction[np.arange(len(axis)), axis] = spec.spacing
    dv = np.sum(g * direction, axis=1)  # dL/dt
    diff = prov.values_b - prov.values_a
    dt_da = (prov.iso - prov.values_b) / diff**2
    dt_db = -(prov.iso - prov.values_a) / diff**2
    out = np.bincount(prov.node_a, weights=dv * dt_da, minlength=size)
    out += np.bincount(prov.node_b, weights=dv * dt_db, minlength=size)
    return ScalarGrid(spec, out.reshape(spec.shape))


# ---------------------------------------------------------------------------
# mesh utilities


def face_centroids(mesh: TriMesh) -> np.ndarray:
    return mesh.vertices[mesh.faces].mean(axis=1)


def face_normals(mesh: TriMesh, normalize: bool = True) -> np.ndarray:
    tri = mesh.vertices[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    if not normalize:
        return cross
    norm = np.linalg.norm(cross, axis=1, keepdims=True)
    return cross / np.where(norm == 0, 1.0, norm)


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(mesh, normalize=False), axis=1)


def unique_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def mean_edge_length(mesh: TriMesh) -> float:
    e = unique_edges(mesh.faces)
    if len(e) == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)))


def _umbrella_operator(mesh: TriMesh):
    """Sparse L = I - D^-1 A with uniform weights; rows of isolated vertices are zero."""
    n = mesh.n_vertices
    e = unique_edges(mesh.faces)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    isolated = deg == 0
    if np.any(isolated):
        log.info("laplacian: %d isolated vertices contribute zero", int(isolated.sum()))
    inv = np.where(isolated, 0.0, 1.0 / np.where(isolated, 1.0, deg))
    keep = np.where(isolated, 0.0, 1.0)
    return sp.diags(keep) - sp.diags(inv) @ adj


def laplacian_energy(mesh: TriMesh) -> tuple[float, np.ndarray]:
    """Mean squared uniform-weight differential and the per-vertex differentials."""
    if mesh.n_vertices == 0:
        return 0.0, np.zeros((0, 3))
    lap = _umbrella_operator(mesh)
    delta = lap @ mesh.vertices
    return float(np.sum(delta**2) / mesh.n_vertices), delta


def laplacian_gradient(mesh: TriMesh) -> tuple[float, np.ndarray]:
    """Energy and its gradient with respect to vertex positions."""
    if mesh.n_vertices == 0:
        return 0.0, np.zeros((0, 3))
    lap = _umbrella_operator(mesh)
    delta = lap @ mesh.vertices
    n = mesh.n_vertices
    return float(np.sum(delta**2) / n), (2.0 / n) * (lap.T @ delta)


@dataclass(frozen=True)
class MeshDiagnostics:
    edge_manifold: bool
    consistent_orientation: bool
    components: int
    euler_characteristic: int
    genus: tuple[int, ...]  # per closed component, in component order
    boundary_edges: int
    nonmanifold_edges: int

    @property
    def watertight(self) -> bool:
        return self.edge_manifold and self.consistent_orientation

    @property
    def total_genus(self) -> int:
        return int(sum(self.genus))


def validate_mesh(mesh: TriMesh) -> MeshDiagnostics:
    faces = mesh.faces
    n_v = mesh.n_vertices
    if len(faces) == 0:
        return MeshDiagnostics(True, True, 0, n_v, (), 0, 0)
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    undirected, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    boundary = int(np.sum(counts == 1))
    nonmanifold = int(np.sum(counts > 2))
    edge_manifold = boundary == 0 and nonmanifold == 0
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    consistent = bool(np.all(dcounts == 1))
    euler = n_v - len(undirected) + len(faces)

    # components over vertices referenced by faces
    adj = sp.csr_matrix(
        (np.ones(len(undirected)), (undirected[:, 0], undirected[:, 1])), shape=(n_v, n_v)
    )
    _, labels = connected_components(adj, directed=False)
    used = np.unique(faces)
    comp_ids, comp_of_used = np.unique(labels[used], return_inverse=True)
    n_comp = len(comp_ids)
    genus = []
    if edge_manifold:
        face_comp = np.searchsorted(comp_ids, labels[faces[:, 0]])
        edge_comp = np.searchsorted(comp_ids, labels[undirected[:, 0]])
        v_count = np.bincount(comp_of_used, minlength=n_comp)
        e_count = np.bincount(edge_comp, minlength=n_comp)
        f_count = np.bincount(face_comp, minlength=n_comp)
        for c in range(n_comp):
            chi_c = int(v_count[c] - e_count[c] + f_count[c])
            genus.append((2 - chi_c) // 2)
    return MeshDiagnostics(edge_manifold, consistent, n_comp, int(euler), tuple(genus), boundary, nonmanifold)


def sample_surface(mesh: TriMesh, n: int, seed: int) -> OrientedPointCloud:
    """Area-weighted uniform samples with face normals."""
    if mesh.n_faces == 0:
        raise DegenerateMesh("cannot sample an empty mesh")
    areas = face_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise DegenerateMesh("mesh has zero total area")
    rng = make_rng(seed, 0x5A)
    cdf = np.cumsum(areas) / total
    chosen = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), mesh.n_faces - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    tri = mesh.vertices[mesh.faces[chosen]]
    pts = np.einsum("nk,nkc->nc", bary, tri)
    normals = face_normals(mesh)[chosen]
    return OrientedPointCloud(pts, normals)
