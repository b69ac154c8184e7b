"""Request and response models for the HTTP service and the CLI."""
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

Shape = Literal["sphere", "torus", "sphere_to_torus", "bending_bar"]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthRequest(Strict):
    shape: Shape = "sphere"
    frames: int = Field(1, ge=1)
    points: int = Field(2000, ge=100)
    seed: int = Field(0, ge=0)
    out: str = "synth"


class SynthResponse(BaseModel):
    out: str
    files: List[str]


class ReconstructRequest(Strict):
    config: str  # path to a flat TOML config
    seed: Optional[int] = Field(None, ge=0)
    out: Optional[str] = None
    threads: int = Field(1, ge=1)


class FrameSummary(BaseModel):
    frame: int
    t: float
    genus: List[int]
    watertight: bool
    n_gaussians: int
    cd: Optional[float] = None
    emd: Optional[float] = None


class ReconstructResponse(BaseModel):
    out: str
    frames: List[FrameSummary]
    failed: bool


class MetricsRequest(Strict):
    pred: str
    gt: str
    samples: int = Field(1024, ge=1)
    seed: int = Field(0, ge=0)
    emd_mode: Literal["exact", "entropic"] = "exact"


class MetricsResponse(BaseModel):
    cd: float
    emd: float
    n_samples: int
    seed: int
    units_scale: float
    cd_convention: str
    emd_mode: str


class GradcheckRequest(Strict):
    shape: Shape = "sphere"
    resolution: int = Field(32, ge=8)
    points: int = Field(2000, ge=100)
    probes: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)


class GradcheckResponse(BaseModel):
    max_rel_error: float
    probes: int


class ValidateRequest(Strict):
    mesh: str


class ValidateResponse(BaseModel):
    watertight: bool
    edge_manifold: bool
    consistent_orientation: bool
    components: int
    euler_characteristic: int
    genus: List[int]
    boundary_edges: int
    nonmanifold_edges: int
    vertices: int
    faces: int


class ErrorResponse(BaseModel):
    error: str
    message: str
    details: dict = {}


class Health(BaseModel):
    status: str = "ok"
    version: str
