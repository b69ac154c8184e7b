"""Gradient-based fitting of Gaussians and deformation models to a target indicator grid.

The objective is

    w_fit * mean((chi - target)^2) + w_lap * L_lap + w_anchor * L_anchor + w_cycle * L_cycle

where chi is reconstructed from the forward-deformed Gaussians, L_lap and the anchor
centroids come from the marching-cubes mesh of chi, and every term is differentiated
analytically through deformation, Poisson solve and marching cubes (topology held fixed).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .anchoring import AnchorConfig, anchor_loss_gradient, anchor_step, match_gaussians_to_faces
from .core import CanonicalSet, ScalarGrid, make_rng, normalize_vjp, normals_from_rotations, normals_vjp, quat_normalize
from .deform import DeformationModel, cycle_loss_gradient, cycle_residual, deform_arrays, deform_arrays_vjp
from .errors import DGMeshError, DivergenceDetected, GridMismatch, OutOfDomain
from .isosurface import TriMesh, face_centroids, laplacian_gradient, marching_cubes, mc_backprop
from .psr import PsrConfig, psr_forward_arrays, psr_gradient

log = logging.getLogger(__name__)

TERMS = ("fit", "lap", "anchor", "cycle")
# Each weight multiplies a fixed unit so the default weights (1, 1000, 1, 1) put every
# term on a comparable footing with the indicator fit for unit-sized scenes.
TERM_UNITS = {"fit": 1.0, "lap": 1e-8, "anchor": 1e-3, "cycle": 1e-6}


@dataclass(frozen=True)
class LossWeights:
    w_anchor: float = 1.0
    w_cycle: float = 1.0
    w_lap: float = 1000.0
    w_fit: float = 1.0

    def __post_init__(self):
        for name in ("w_anchor", "w_cycle", "w_lap", "w_fit"):
            if getattr(self, name) < 0:
                raise DGMeshError(f"{name} must be nonnegative")

    def of(self, term: str) -> float:
        return getattr(self, f"w_{term}")

    def effective(self, term: str) -> float:
        """Weight actually multiplying the unweighted component in the total."""
        return self.of(term) * TERM_UNITS[term]


@dataclass(frozen=True)
class FitState:
    canonical: CanonicalSet
    forward: DeformationModel
    backward: DeformationModel
    psr: PsrConfig
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    # groups updated by the optimizer; scales and opacities are carried untouched
    trainable: tuple = ("positions", "rotations", "forward", "backward")
    iso: float = 0.0


@dataclass(frozen=True)
class LossEvaluation:
    total: float
    components: dict
    chi: ScalarGrid
    mesh: TriMesh
    grad: dict | None = None  # group name -> gradient array
    # identifies the non-smooth choices (face membership, cycle residual signs)
    assignment_key: bytes = b""

    def flat_grad(self, groups) -> np.ndarray:
        return np.concatenate([np.asarray(self.grad[g]).ravel() for g in groups])


def _anchor_radius(anchor: AnchorConfig, mesh: TriMesh) -> AnchorConfig:
    return AnchorConfig(anchor.radius_for(mesh), anchor.interval, anchor.matching_mode)


def evaluate(state: FitState, target_chi: ScalarGrid, weights: LossWeights, t: float, need_grad: bool = True) -> LossEvaluation:
    cfg = state.psr
    if target_chi.spec != cfg.grid:
        raise GridMismatch("target grid does not match the reconstruction grid")
    can = state.canonical
    if len(can) == 0:
        raise DGMeshError("state holds no gaussians")
    deformed = deform_arrays(state.forward, can.positions, can.rotations, can.scales, can.opacities, t)
    normals = normals_from_rotations(deformed.rotations, deformed.scales)
    chi, adj = psr_forward_arrays(deformed.positions, normals, cfg)
    resid = chi.values - target_chi.values
    fit = float(np.mean(resid**2))
    mesh = marching_cubes(chi, state.iso)

    comps = {"fit": fit, "lap": 0.0, "anchor": 0.0, "cycle": 0.0}
    g_vert = np.zeros_like(mesh.vertices)
    g_pos_def = np.zeros_like(deformed.positions)
    if mesh.n_faces:
        lap, g_lap = laplacian_gradient(mesh)
        comps["lap"] = lap
        g_vert += weights.effective("lap") * g_lap
        anchor_cfg = _anchor_radius(state.anchor, mesh)
        assignment = match_gaussians_to_faces(deformed.positions, face_centroids(mesh), anchor_cfg, can.ids, exclusive=True)
        anc, g_anc_pos, g_anc_vert = anchor_loss_gradient(assignment, deformed.positions, mesh)
        comps["anchor"] = anc
        g_vert += weights.effective("anchor") * g_anc_vert
        g_pos_def += weights.effective("anchor") * g_anc_pos
    cyc, g_fwd_c, g_bwd_c, g_x_c, g_q_c = cycle_loss_gradient(
        state.forward, state.backward, can.positions, can.rotations, can.scales, can.opacities, t
    )
    comps["cycle"] = cyc
    key = _choice_key(assignment if mesh.n_faces else None, state, t)
    total = sum(weights.effective(k) * comps[k] for k in TERMS)
    if not need_grad:
        return LossEvaluation(total, comps, chi, mesh, assignment_key=key)

    g_chi = weights.effective("fit") * 2.0 * resid / resid.size
    if mesh.n_faces:
        g_chi = g_chi + mc_backprop(mesh, g_vert).values
    g_p, g_n = psr_gradient(adj, g_chi)
    g_pos_def += g_p
    g_rot_def = normals_vjp(deformed.rotations, deformed.scales, g_n)
    g_fwd, g_x, g_q = deform_arrays_vjp(state.forward, can.positions, can.rotations, can.scales, can.opacities, t, g_pos_def, g_rot_def)
    w = weights.effective("cycle")
    grad = {
        "positions": g_x + w * g_x_c,
        # stored quaternions are renormalized, so only the tangent component is meaningful
        "rotations": normalize_vjp(can.rotations, g_q + w * g_q_c),
        "forward": g_fwd + w * g_fwd_c,
        "backward": w * g_bwd_c,
    }
    return LossEvaluation(total, comps, chi, mesh, grad, key)


def _choice_key(assignment, state: FitState, t: float) -> bytes:
    can = state.canonical
    res = cycle_residual(state.forward, state.backward, can.positions, can.rotations, can.scales, can.opacities, t)
    parts = [np.sign(res).astype(np.int8).tobytes()]
    if assignment is not None:
        parts.append(assignment.counts.tobytes())
        parts.extend(m.tobytes() for m in assignment.members)
    return b"|".join(parts)


def total_loss(state: FitState, target_chi: ScalarGrid, weights: LossWeights, t: float) -> tuple[float, dict]:
    ev = evaluate(state, target_chi, weights, t, need_grad=False)
    return ev.total, ev.components


# ---------------------------------------------------------------------------
# flat parameter views


def _get(state: FitState, group: str) -> np.ndarray:
    if group == "positions":
        return np.array(state.canonical.positions)
    if group == "rotations":
        return np.array(state.canonical.rotations)
    if group == "forward":
        return np.array(state.forward.params)
    if group == "backward":
        return np.array(state.backward.params)
    raise DGMeshError(f"unknown parameter group {group!r}")


def _set(state: FitState, values: dict) -> FitState:
    can = state.canonical
    pos = values.get("positions", can.positions)
    rot = values.get("rotations", can.rotations)
    new_can = can.with_arrays(positions=pos, rotations=rot)
    fwd = state.forward.with_params(values["forward"]) if "forward" in values else state.forward
    bwd = state.backward.with_params(values["backward"]) if "backward" in values else state.backward
    return replace(state, canonical=new_can, forward=fwd, backward=bwd)


# ---------------------------------------------------------------------------
# gradient check


def _topology_key(ev: LossEvaluation):
    mesh = ev.mesh
    return (mesh.faces.tobytes(), mesh.provenance.node_a.tobytes(), ev.assignment_key)


def grad_check(
    state: FitState,
    target_chi: ScalarGrid,
    weights: LossWeights,
    n_probes: int = 20,
    eps: float | None = None,
    t: float = 0.0,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference derivatives.

    Probes are random single coordinates over the trainable groups. Probes whose
    +/- evaluations change the marching-cubes triangulation or the anchoring
    assignment are redrawn (those are non-differentiable events).
    """
    if n_probes < 1:
        raise DGMeshError("need at least one probe")
    eps = 1e-4 * state.psr.grid.spacing if eps is None else eps
    groups = [g for g in state.trainable]
    base = evaluate(state, target_chi, weights, t)
    sizes = [base.grad[g].size for g in groups]
    grad_flat = base.flat_grad(groups)
    scale = float(np.max(np.abs(grad_flat))) if grad_flat.size else 0.0
    if scale == 0.0:
        return 0.0
    rng = make_rng(seed, 0x6C)
    offsets = np.cumsum([0] + sizes)
    base_key = _topology_key(base)
    worst = 0.0
    done = 0
    attempts = 0
    while done < n_probes and attempts < 20 * n_probes:
        attempts += 1
        k = int(rng.integers(offsets[-1]))
        gi = int(np.searchsorted(offsets, k, side="right") - 1)
        group, local = groups[gi], k - offsets[gi]
        vals = []
        keys = []
        for sgn in (1.0, -1.0):
            arr = _get(state, group)
            flat = arr.reshape(-1)
            flat[local] += sgn * eps
            ev = evaluate(_set(state, {group: arr}), target_chi, weights, t, need_grad=False)
            vals.append(ev.total)
            keys.append(_topology_key(ev))
        if keys[0] != base_key or keys[1] != base_key:
            continue
        fd = (vals[0] - vals[1]) / (2 * eps)
        analytic = float(grad_flat[k])
        denom = max(abs(fd), abs(analytic), 1e-8 * scale)
        worst = max(worst, abs(fd - analytic) / denom)
        done += 1
    if done < n_probes:
        log.warning("grad_check: only %d of %d probes avoided topology changes", done, n_probes)
    return worst


# ---------------------------------------------------------------------------
# optimization driver


@dataclass
class FitTrace:
    rows: list = field(default_factory=list)
    anchor_reports: list = field(default_factory=list)

    @property
    def anchoring_events(self) -> int:
        return len(self.anchor_reports)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.column("total"))


@dataclass(frozen=True)
class StepScales:
    """Per-group multipliers on the global step size."""

    positions: float = 1.0
    rotations: float = 1.0
    forward: float = 1.0
    backward: float = 1.0


def fit(
    state: FitState,
    target_chi: ScalarGrid,
    weights: LossWeights,
    steps: int,
    step_size: float,
    anchor_interval: int | None = None,
    t: float = 0.0,
    momentum: float = 0.9,
    scales: StepScales = StepScales(),
    on_anchor=None,
) -> tuple[FitState, FitTrace]:
    """Momentum gradient descent with anchoring every ``anchor_interval`` iterations.

    Returns the lowest-loss state seen since the last anchoring event (or since the
    start, if none happened) and the trace. ``on_anchor(iteration, report)`` is called
    after each anchoring event. Anchoring never runs after the final update.
    """
    if steps < 1:
        raise DGMeshError("steps must be at least 1")
    if not step_size > 0:
        raise DGMeshError("step size must be positive")
    interval = state.anchor.interval if anchor_interval is None else int(anchor_interval)
    if interval < 1:
        raise DGMeshError("anchoring interval must be at least 1")
    groups = list(state.trainable)
    trace = FitTrace()
    vel = {g: np.zeros_like(_get(state, g)) for g in groups}
    vel_ids = np.array(state.canonical.ids)
    best_state, best_total = state, np.inf

    def _eval(st, it, need_grad=True):
        try:
            ev = evaluate(st, target_chi, weights, t, need_grad=need_grad)
        except OutOfDomain as exc:
            raise DivergenceDetected(f"gaussian left the grid at iteration {it}", best_state=best_state, trace=trace) from exc
        if not np.isfinite(ev.total):
            raise DivergenceDetected(f"non-finite loss at iteration {it}", best_state=best_state, trace=trace)
        return ev

    for it in range(1, steps + 1):
        ev = _eval(state, it)
        if ev.total < best_total:
            best_state, best_total = state, ev.total
        gnorm = float(np.linalg.norm(ev.flat_grad(groups)))
        row = {"iteration": it, **ev.components, "total": ev.total, "grad_norm": gnorm, "step_size": step_size, "anchored": False}
        new_vals = {}
        for g in groups:
            vel[g] = momentum * vel[g] - step_size * getattr(scales, g) * ev.grad[g]
            new_vals[g] = _get(state, g) + vel[g]
        if "rotations" in new_vals:
            new_vals["rotations"] = quat_normalize(new_vals["rotations"])
        state = _set(state, new_vals)

        # no projection after the final update: it would leave an unoptimized state
        if it % interval == 0 and it < steps:
            mesh = _eval(state, it, need_grad=False).mesh
            if mesh.n_faces:
                new_can, _, report = anchor_step(state.canonical, state.forward, state.backward, mesh, t, state.anchor)
                vel = _remap_velocity(vel, vel_ids, new_can.ids, groups)
                vel_ids = np.array(new_can.ids)
                state = replace(state, canonical=new_can)
                trace.anchor_reports.append(report)
                row["anchored"] = True
                # anchoring is a projection: earlier states live in a different parameter space
                best_state, best_total = state, np.inf
                if on_anchor is not None:
                    on_anchor(it, report)
        trace.rows.append(row)

    final = _eval(state, steps + 1, need_grad=False)
    if final.total < best_total:
        best_state, best_total = state, final.total
    return best_state, trace


def _remap_velocity(vel, old_ids, new_ids, groups):
    """Carry per-gaussian momentum across anchoring; new gaussians start at rest."""
    pos = {int(i): k for k, i in enumerate(old_ids)}
    out = dict(vel)
    for g in ("positions", "rotations"):
        if g not in groups:
            continue
        width = vel[g].shape[1]
        fresh = np.zeros((len(new_ids), width))
        for k, i in enumerate(new_ids):
            j = pos.get(int(i))
            if j is not None:
                fresh[k] = vel[g][j]
        out[g] = fresh
    return out
