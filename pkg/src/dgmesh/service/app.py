"""FastAPI wrapper around the handlers. Run with ``uvicorn dgmesh.service.app:app``."""
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import DGMeshError, FileNotFound
from . import handlers
from .schemas import (
    ErrorResponse,
    GradcheckRequest,
    GradcheckResponse,
    Health,
    MetricsRequest,
    MetricsResponse,
    ReconstructRequest,
    ReconstructResponse,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)

app = FastAPI(title="dgmesh", version=__version__)


@app.exception_handler(DGMeshError)
async def dgmesh_error(request: Request, exc: DGMeshError):
    status = 404 if isinstance(exc, FileNotFound) else 422
    body = ErrorResponse(error=exc.code, message=str(exc), details={k: str(v) for k, v in exc.details.items()})
    return JSONResponse(status_code=status, content=body.model_dump())


@app.get("/health", response_model=Health)
def health():
    return Health(version=__version__)


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest):
    return handlers.synth(req)


@app.post("/reconstruct", response_model=ReconstructResponse)
def reconstruct(req: ReconstructRequest):
    return handlers.reconstruct(req)


@app.post("/metrics", response_model=MetricsResponse)
def metrics(req: MetricsRequest):
    return handlers.metrics(req)


@app.post("/gradcheck", response_model=GradcheckResponse)
def gradcheck(req: GradcheckRequest):
    return handlers.gradcheck(req)


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest):
    return handlers.validate(req)
