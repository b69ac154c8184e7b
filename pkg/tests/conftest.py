import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dgmesh.core import GridSpec, OrientedPointCloud, make_rng

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sphere_cloud(n: int, seed: int = 0, radius: float = 1.0) -> OrientedPointCloud:
    """Uniform samples of a sphere with exact outward normals."""
    rng = make_rng(seed, 1)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return OrientedPointCloud(radius * d, d)


def sphere_sdf_grid(resolution: int, radius: float = 1.0, lo: float = -1.5, hi: float = 1.5):
    from dgmesh.core import ScalarGrid

    spec = GridSpec.cube(lo, hi, resolution)
    return ScalarGrid(spec, np.linalg.norm(spec.node_positions(), axis=-1) - radius)


@pytest.fixture
def rng():
    return make_rng(1234)
