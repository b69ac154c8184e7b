"""Time-consistent mesh reconstruction from deforming oriented Gaussian sets."""
__version__ = "0.1.0"

from .core import CanonicalSet, Gaussian, GridSpec, OrientedPointCloud, ScalarGrid, VectorGrid
from .errors import DGMeshError
from .isosurface import TriMesh, marching_cubes, validate_mesh
from .psr import PsrConfig, psr_forward, psr_gradient

__all__ = [
    "__version__",
    "CanonicalSet",
    "Gaussian",
    "GridSpec",
    "OrientedPointCloud",
    "ScalarGrid",
    "VectorGrid",
    "DGMeshError",
    "TriMesh",
    "marching_cubes",
    "validate_mesh",
    "PsrConfig",
    "psr_forward",
    "psr_gradient",
]
