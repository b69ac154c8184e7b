"""Synthetic dynamic scenes with analytic signed distance fields and ground-truth meshes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import GridSpec, OrientedPointCloud, ScalarGrid, derive_seed
from ..errors import DGMeshError
from ..isosurface import TriMesh, marching_cubes, sample_surface

SHAPES = ("sphere", "torus", "sphere_to_torus", "bending_bar")
DOMAIN = (-1.5, 1.5)

SPHERE_RADIUS = 0.9
TORUS_MAJOR = 0.9
TORUS_MINOR = 0.35
BAR_HALF = np.array([1.0, 0.22, 0.22])
BAR_MAX_CURVATURE = 0.9


@dataclass(frozen=True)
class Frame:
    t: float
    cloud: OrientedPointCloud
    gt_mesh: TriMesh | None = None


@dataclass(frozen=True)
class FrameSequence:
    shape: str
    frames: tuple

    def __post_init__(self):
        if not self.frames:
            raise DGMeshError("a sequence needs at least one frame")
        times = np.array([f.t for f in self.frames])
        if np.any(np.diff(times) <= 0):
            raise DGMeshError("frame times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])


def sdf_sphere(p, radius: float = SPHERE_RADIUS) -> np.ndarray:
    return np.linalg.norm(p, axis=-1) - radius


def sdf_torus(p, major: float = TORUS_MAJOR, minor: float = TORUS_MINOR) -> np.ndarray:
    """Torus around the z axis."""
    q = np.hypot(p[..., 0], p[..., 1]) - major
    return np.hypot(q, p[..., 2]) - minor


def sdf_box(p, half) -> np.ndarray:
    q = np.abs(p) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def sdf_bent_bar(p, curvature: float) -> np.ndarray:
    """Box bar along x bent in the x-y plane into a circular arc of the given curvature."""
    if abs(curvature) < 1e-9:
        return sdf_box(p, BAR_HALF) - 0.05
    radius = 1.0 / curvature
    # unbend: polar coordinates about the arc centre (0, radius)
    dx, dy = p[..., 0], radius - p[..., 1]
    theta = np.arctan2(dx, dy)
    r = np.hypot(dx, dy)
    local = np.stack([theta * radius, radius - r, p[..., 2]], axis=-1)
    return sdf_box(local, BAR_HALF) - 0.05


def scene_sdf(shape: str, t: float):
    if shape == "sphere":
        return lambda p: sdf_sphere(p)
    if shape == "torus":
        return lambda p: sdf_torus(p)
    if shape == "sphere_to_torus":
        return lambda p: (1.0 - t) * sdf_sphere(p) + t * sdf_torus(p)
    if shape == "bending_bar":
        return lambda p: sdf_bent_bar(p, BAR_MAX_CURVATURE * t)
    raise DGMeshError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def frame_times(T: int) -> np.ndarray:
    return np.array([0.0]) if T == 1 else np.linspace(0.0, 1.0, T)


def gt_mesh_for(shape: str, t: float, resolution: int = 64) -> TriMesh:
    spec = GridSpec.cube(*DOMAIN, resolution)
    values = scene_sdf(shape, t)(spec.node_positions())
    return marching_cubes(ScalarGrid(spec, values), 0.0)


def generate_scene(shape: str, T: int, n_points: int, seed: int, gt_resolution: int = 64) -> FrameSequence:
    if shape not in SHAPES:
        raise DGMeshError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    if T < 1:
        raise DGMeshError("need at least one frame")
    if n_points < 100:
        raise DGMeshError("need at least 100 points per frame")
    frames = []
    for k, t in enumerate(frame_times(T)):
        mesh = gt_mesh_for(shape, float(t), gt_resolution)
        cloud = sample_surface(mesh, n_points, derive_seed(seed, k))
        frames.append(Frame(float(t), cloud, mesh))
    return FrameSequence(shape, tuple(frames))
