"""Frame-sequence reconstruction with correspondence tracking."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..anchoring import AnchorConfig, match_gaussians_to_faces, uniformity_metric
from ..core import CanonicalSet, GridSpec, OrientedPointCloud, derive_seed, make_rng, quat_from_two_vectors
from ..deform import DeformationModel, deform_arrays
from ..errors import DGMeshError, DivergenceDetected, FileNotFound
from ..isosurface import TriMesh, face_centroids, validate_mesh
from ..metrics import mesh_metric_report
from ..optim import FitState, LossWeights, StepScales, evaluate, fit, grad_check
from ..psr import PsrConfig, psr_forward
from ..spatial import nearest_neighbor_distances
from . import io
from .config import PipelineConfig, dumps
from .scenes import Frame, FrameSequence, frame_times, generate_scene

log = logging.getLogger(__name__)

KNOBS = ("anchor_interval", "w_lap", "w_anchor", "w_cycle", "w_fit", "r_s", "matching_mode", "resolution", "sigma", "steps")


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    t: float
    position: tuple
    face: int  # -1 when no face claims the gaussian
    alive: bool


@dataclass
class CorrespondenceTrack:
    id: int
    records: list = field(default_factory=list)

    @property
    def alive(self) -> bool:
        return bool(self.records) and self.records[-1].alive


@dataclass
class ReconstructionResult:
    meshes: list
    tracks: dict  # id -> CorrespondenceTrack
    log_rows: list
    state: FitState | None
    failed: bool = False

    def track_list(self) -> list:
        return [self.tracks[k] for k in sorted(self.tracks)]


def init_canonical(cloud: OrientedPointCloud) -> CanonicalSet:
    """Samples become flat Gaussians whose short (z) axis follows the sample normal."""
    n = len(cloud)
    if n < 2:
        raise DGMeshError("need at least two samples to initialize")
    s = float(np.mean(nearest_neighbor_distances(cloud.positions)))
    z = np.array([0.0, 0.0, 1.0])
    rot = np.array([quat_from_two_vectors(z, nrm) for nrm in cloud.normals])
    scales = np.tile([s, s, 0.1 * s], (n, 1))
    return CanonicalSet(np.arange(n), cloud.positions, rot, scales, np.full(n, 0.5))


def build_state(cfg: PipelineConfig, canonical: CanonicalSet, threads: int = 1) -> FitState:
    grid = GridSpec.cube(cfg.domain_lo, cfg.domain_hi, cfg.resolution)
    psr = PsrConfig(grid, cfg.sigma, workers=threads)
    anchor = AnchorConfig(cfg.r_s or None, cfg.anchor_interval, cfg.matching_mode)
    model = DeformationModel.zeros(cfg.deform_kind)
    return FitState(canonical, model, model, psr, anchor, iso=cfg.iso)


def loss_weights(cfg: PipelineConfig) -> LossWeights:
    return LossWeights(w_anchor=cfg.w_anchor, w_cycle=cfg.w_cycle, w_lap=cfg.w_lap, w_fit=cfg.w_fit)


def load_sequence(cfg: PipelineConfig) -> FrameSequence:
    """Frames from ``cfg.input_dir`` (frame_###.ply, evenly spaced in [0, 1]) or a synthetic scene."""
    if not cfg.input_dir:
        return generate_scene(cfg.scene, cfg.frames, cfg.n_points, cfg.seed)
    root = Path(cfg.input_dir)
    if not root.is_dir():
        raise FileNotFound(f"input directory not found: {root}", path=str(root))
    paths = sorted(root.glob("frame_*.ply"))
    if not paths:
        raise FileNotFound(f"no frame_*.ply files in {root}", path=str(root))
    times = frame_times(len(paths))
    return FrameSequence("input", tuple(Frame(float(t), io.import_ply(p)) for t, p in zip(times, paths)))


def gradcheck_scene(
    shape: str = "sphere", resolution: int = 32, n_points: int = 2000, n_probes: int = 20, seed: int = 0,
    weights: LossWeights | None = None, jitter: float = 0.02,
) -> float:
    """Worst relative gradient error of the full loss on a perturbed scene state.

    Positions are jittered and both models get small random parameters so that every
    loss term, including the cycle term, is active.
    """
    seq = generate_scene(shape, 1, n_points, seed)
    cloud = seq.frames[0].cloud
    cfg = PipelineConfig(resolution=resolution, n_points=n_points, seed=seed)
    rng = make_rng(seed, 0x67)
    can = init_canonical(cloud)
    can = can.with_arrays(positions=can.positions + jitter * rng.standard_normal(can.positions.shape))
    state = build_state(cfg, can)
    fwd = state.forward.with_params(1e-3 * rng.standard_normal(state.forward.n_params))
    bwd = state.backward.with_params(1e-3 * rng.standard_normal(state.backward.n_params))
    state = FitState(can, fwd, bwd, state.psr, state.anchor, iso=state.iso)
    target, _ = psr_forward(cloud, state.psr)
    return grad_check(state, target, weights or loss_weights(cfg), n_probes=n_probes, t=0.5, seed=seed)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _row(kind: str, **values) -> dict:
    return {"kind": kind, **{k: _jsonable(v) for k, v in values.items()}}


def _face_of(state: FitState, mesh: TriMesh, positions: np.ndarray) -> np.ndarray:
    if mesh.n_faces == 0:
        return np.full(len(positions), -1, dtype=np.int64)
    r_s = state.anchor.radius_for(mesh)
    cfg = AnchorConfig(r_s, state.anchor.interval, state.anchor.matching_mode)
    asg = match_gaussians_to_faces(positions, face_centroids(mesh), cfg, exclusive=True)
    return np.where(asg.nearest_distance <= r_s, asg.nearest_face, -1)


def reconstruct_sequence(seq: FrameSequence, cfg: PipelineConfig, threads: int = 1, out_dir=None) -> ReconstructionResult:
    """Fit every frame in time order, carrying the canonical set and models forward.

    When ``out_dir`` is given the meshes, tracks, metrics log and the config used are
    written there (mesh_###.obj, tracks.csv, metrics.jsonl, config.toml).
    """
    if len(seq) == 0:
        raise DGMeshError("empty sequence")
    weights = loss_weights(cfg)
    scales = StepScales(forward=cfg.model_step_scale, backward=cfg.model_step_scale)
    state = build_state(cfg, init_canonical(seq.frames[0].cloud), threads)
    knobs = {k: getattr(cfg, k) for k in KNOBS}
    rows = [_row("config", **knobs, seed=cfg.seed, frames=len(seq), shape=seq.shape)]
    meshes: list[TriMesh] = []
    tracks: dict[int, CorrespondenceTrack] = {}
    prev_alive: set[int] = set()
    failed = False

    for k, frame in enumerate(seq.frames):
        target, _ = psr_forward(frame.cloud, state.psr)

        def on_anchor(it, rep, k=k):
            rows.append(
                _row(
                    "anchor", frame=k, iteration=it, merges=rep.merges, creations=rep.creations, kept=rep.kept,
                    loss=rep.loss, uniformity_before=rep.uniformity_before, uniformity_after=rep.uniformity_after,
                    r_s_used=rep.r_s, **knobs,
                )
            )

        try:
            state, trace = fit(
                state, target, weights, cfg.steps, cfg.step_size, cfg.anchor_interval, t=frame.t,
                momentum=cfg.momentum, scales=scales, on_anchor=on_anchor,
            )
        except DivergenceDetected as exc:
            log.error("frame %d diverged: %s", k, exc)
            rows.append(_row("failure", frame=k, t=frame.t, error=exc.code, message=str(exc), **knobs))
            failed = True
            if exc.best_state is not None:
                state = exc.best_state
            break

        ev = evaluate(state, target, weights, frame.t, need_grad=False)
        mesh = ev.mesh
        meshes.append(mesh)
        can = state.canonical
        deformed = deform_arrays(state.forward, can.positions, can.rotations, can.scales, can.opacities, frame.t)
        faces = _face_of(state, mesh, deformed.positions)

        alive = set(int(i) for i in can.ids)
        for i, gid in enumerate(can.ids):
            gid = int(gid)
            tr = tracks.setdefault(gid, CorrespondenceTrack(gid))
            tr.records.append(TrackRecord(k, frame.t, tuple(float(c) for c in deformed.positions[i]), int(faces[i]), True))
        for gid in sorted(prev_alive - alive):
            last = tracks[gid].records[-1]
            tracks[gid].records.append(TrackRecord(k, frame.t, last.position, -1, False))
        prev_alive = alive

        diag = validate_mesh(mesh) if mesh.n_faces else None
        watertight = bool(diag is not None and diag.watertight)
        metrics = {}
        if frame.gt_mesh is not None and mesh.n_faces:
            rep = mesh_metric_report(mesh, frame.gt_mesh, cfg.metric_samples, derive_seed(cfg.seed, k), cfg.emd_mode)
            metrics = {"cd": rep.cd, "emd": rep.emd, "units_scale": rep.units_scale}
        rows.append(
            _row(
                "frame", frame=k, t=frame.t, **metrics, fit=ev.components["fit"], anchor_loss=ev.components["anchor"],
                cycle_loss=ev.components["cycle"], lap=ev.components["lap"], total=ev.total,
                uniformity=uniformity_metric(deformed.positions), n_gaussians=len(can), n_faces=mesh.n_faces,
                genus=list(diag.genus) if diag else [], watertight=watertight, degraded=not watertight,
                anchoring_events=trace.anchoring_events, **knobs,
            )
        )

    result = ReconstructionResult(meshes, tracks, rows, state, failed)
    if out_dir is not None:
        write_outputs(result, cfg, out_dir)
    return result


def write_outputs(result: ReconstructionResult, cfg: PipelineConfig, out_dir) -> Path:
    out = io.ensure_dir(out_dir)
    for k, mesh in enumerate(result.meshes):
        io.export_mesh(mesh, out / f"mesh_{k:03d}.obj", "obj")
    io.export_tracks(result.track_list(), out / "tracks.csv")
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in result.log_rows)
    try:
        (out / "metrics.jsonl").write_text(text, encoding="utf-8")
        (out / "config.toml").write_text(dumps(cfg), encoding="utf-8")
    except OSError as exc:
        raise io.IoError(f"cannot write outputs in {out}: {exc.strerror}", path=str(out)) from exc
    return out
