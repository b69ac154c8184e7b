"""Request handlers shared by the HTTP app and the local CLI path."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from ..isosurface import validate_mesh
from ..metrics import mesh_metric_report
from ..pipeline import config as config_io
from ..pipeline import io
from ..pipeline.reconstruct import gradcheck_scene, load_sequence, reconstruct_sequence
from ..pipeline.scenes import generate_scene
from .schemas import (
    FrameSummary,
    GradcheckRequest,
    GradcheckResponse,
    MetricsRequest,
    MetricsResponse,
    ReconstructRequest,
    ReconstructResponse,
    SynthRequest,
    SynthResponse,
    ValidateRequest,
    ValidateResponse,
)


def synth(req: SynthRequest) -> SynthResponse:
    seq = generate_scene(req.shape, req.frames, req.points, req.seed)
    out = io.ensure_dir(req.out)
    files = []
    for k, frame in enumerate(seq.frames):
        cloud_path, mesh_path = out / f"frame_{k:03d}.ply", out / f"gt_{k:03d}.obj"
        io.export_ply(frame.cloud, cloud_path)
        io.export_mesh(frame.gt_mesh, mesh_path, "obj")
        files += [str(cloud_path), str(mesh_path)]
    return SynthResponse(out=str(out), files=files)


def reconstruct(req: ReconstructRequest) -> ReconstructResponse:
    cfg = config_io.load(req.config)
    overrides = {}
    if req.seed is not None:
        overrides["seed"] = req.seed
    if req.out is not None:
        overrides["output_dir"] = req.out
    cfg = replace(cfg, **overrides)
    seq = load_sequence(cfg)
    result = reconstruct_sequence(seq, cfg, threads=req.threads, out_dir=cfg.output_dir)
    frames = [
        FrameSummary(
            frame=r["frame"], t=r["t"], genus=r["genus"], watertight=r["watertight"], n_gaussians=r["n_gaussians"],
            cd=r.get("cd"), emd=r.get("emd"),
        )
        for r in result.log_rows
        if r["kind"] == "frame"
    ]
    return ReconstructResponse(out=str(Path(cfg.output_dir)), frames=frames, failed=result.failed)


def metrics(req: MetricsRequest) -> MetricsResponse:
    pred, gt = io.import_mesh(req.pred), io.import_mesh(req.gt)
    report = mesh_metric_report(pred, gt, req.samples, req.seed, req.emd_mode)
    return MetricsResponse(**report.to_dict())


def gradcheck(req: GradcheckRequest) -> GradcheckResponse:
    err = gradcheck_scene(req.shape, req.resolution, req.points, req.probes, req.seed)
    return GradcheckResponse(max_rel_error=err, probes=req.probes)


def validate(req: ValidateRequest) -> ValidateResponse:
    mesh = io.import_mesh(req.mesh)
    d = validate_mesh(mesh)
    return ValidateResponse(
        watertight=d.watertight, edge_manifold=d.edge_manifold, consistent_orientation=d.consistent_orientation,
        components=d.components, euler_characteristic=d.euler_characteristic, genus=list(d.genus),
        boundary_edges=d.boundary_edges, nonmanifold_edges=d.nonmanifold_edges, vertices=mesh.n_vertices,
        faces=mesh.n_faces,
    )


HANDLERS = {
    "synth": (SynthRequest, synth),
    "reconstruct": (ReconstructRequest, reconstruct),
    "metrics": (MetricsRequest, metrics),
    "gradcheck": (GradcheckRequest, gradcheck),
    "validate": (ValidateRequest, validate),
}
