"""Chamfer and Earth Mover's distances between point sets and meshes.

Conventions (pinned, since they vary between implementations):
  * Chamfer: 0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2), squared distances.
  * EMD: minimum over perfect matchings of the mean matched Euclidean distance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import derive_seed
from .errors import EmptyInput, SizeMismatch, TooLarge
from .isosurface import TriMesh, sample_surface
from .spatial import nearest

EXACT_EMD_LIMIT = 1024
# CD/EMD are reported raw; divide by this multiplier to express them in thousandths.
DEFAULT_UNITS_SCALE = 1e-3


def _points(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1, 3)


def chamfer(a, b) -> float:
    a, b = _points(a), _points(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("chamfer distance needs two nonempty point sets")
    _, d_ab = nearest(a, b)
    _, d_ba = nearest(b, a)
    return float(0.5 * (np.mean(d_ab) + np.mean(d_ba)))


def pairwise_distances(a, b) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def emd_matching(a, b) -> np.ndarray:
    """Optimal assignment: column index matched to each row of ``a``."""
    cost = pairwise_distances(_points(a), _points(b))
    _, cols = linear_sum_assignment(cost)
    return cols


def emd(a, b, mode: str = "exact", epsilon: float | None = None, iterations: int = 500) -> float:
    """Earth Mover's distance between equal-size point sets.

    ``entropic`` returns the transport cost of a Sinkhorn plan rounded onto the
    feasible set; any feasible plan costs at least the exact optimum, so the
    documented slack against the exact value is zero.
    """
    a, b = _points(a), _points(b)
    if len(a) != len(b):
        raise SizeMismatch(f"emd needs equal sizes, got {len(a)} and {len(b)}")
    if len(a) == 0:
        raise EmptyInput("emd needs nonempty point sets")
    cost = pairwise_distances(a, b)
    n = len(a)
    if mode == "exact":
        if n > EXACT_EMD_LIMIT:
            raise TooLarge(f"exact emd limited to {EXACT_EMD_LIMIT} points, got {n}")
        rows, cols = linear_sum_assignment(cost)
        return float(np.mean(cost[rows, cols]))
    if mode == "entropic":
        plan = sinkhorn_plan(cost, epsilon=epsilon, iterations=iterations)
        return float(np.sum(plan * cost))
    raise ValueError(f"unknown emd mode {mode!r}")


def sinkhorn_plan(cost: np.ndarray, epsilon: float | None = None, iterations: int = 500) -> np.ndarray:
    """Log-domain Sinkhorn with uniform marginals 1/n, rounded to an exactly feasible plan."""
    n, m = cost.shape
    if epsilon is None:
        epsilon = 0.01 * float(np.median(cost)) + 1e-12
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(iterations):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    return _round_to_feasible(plan, np.exp(log_a), np.exp(log_b))


def _round_to_feasible(plan, r, c):
    # Altschuler, Weed & Rigollet rounding: scale down overfull rows/cols, then add the rank-one fix.
    x = np.minimum(r / np.maximum(plan.sum(axis=1), 1e-300), 1.0)
    plan = plan * x[:, None]
    y = np.minimum(c / np.maximum(plan.sum(axis=0), 1e-300), 1.0)
    plan = plan * y[None, :]
    # clip float residue so the rank-one fix cannot go negative
    err_r = np.maximum(r - plan.sum(axis=1), 0.0)
    err_c = np.maximum(c - plan.sum(axis=0), 0.0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return plan


@dataclass(frozen=True)
class MetricReport:
    cd: float
    emd: float
    n_samples: int
    seed: int
    units_scale: float = DEFAULT_UNITS_SCALE
    cd_convention: str = "halved symmetric mean of squared nearest distances"
    emd_mode: str = "exact"

    def to_dict(self) -> dict:
        return asdict(self)


def mesh_metric_report(
    pred: TriMesh, gt: TriMesh, n: int = 1024, seed: int = 0, emd_mode: str = "exact", units_scale: float = DEFAULT_UNITS_SCALE
) -> MetricReport:
    pa = sample_surface(pred, n, derive_seed(seed, 1)).positions
    pb = sample_surface(gt, n, derive_seed(seed, 2)).positions
    return MetricReport(chamfer(pa, pb), emd(pa, pb, mode=emd_mode), n, int(seed), units_scale, emd_mode=emd_mode)
