"""Exact nearest-neighbour and radius queries.

A k-d tree proposes candidates; the final distances are always recomputed with
:func:`squared_distances`, so results are bit-identical to an O(N*M) scan that
uses the same formula (ties resolved to the lowest reference index).
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_K_CANDIDATES = 8
_SLACK = 1e-9


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise squared distance between matching rows (broadcasting)."""
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def nearest(query, reference) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest reference point for every query point."""
    query = np.asarray(query, dtype=float).reshape(-1, 3)
    reference = np.asarray(reference, dtype=float).reshape(-1, 3)
    nq = len(query)
    if nq == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    tree = cKDTree(reference)
    k = min(_K_CANDIDATES, len(reference))
    dist, idx = tree.query(query, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    d2 = squared_distances(query[:, None, :], reference[idx])
    best = np.min(d2, axis=1)
    out_idx = np.empty(nq, np.int64)
    out_d2 = np.empty(nq)
    # candidate set is complete when the k-th tree distance clears the best exact distance
    bound = np.sqrt(best) * (1 + _SLACK) + 1e-300
    complete = (k == len(reference)) | (dist[:, -1] > bound)
    for i in range(nq):
        if complete[i]:
            cand = idx[i]
        else:
            cand = np.asarray(tree.query_ball_point(query[i], bound[i] * (1 + _SLACK) + 1e-12), dtype=np.int64)
        cand = np.sort(cand)
        cd2 = squared_distances(query[i][None, :], reference[cand])
        j = int(np.argmin(cd2))
        out_idx[i] = cand[j]
        out_d2[i] = cd2[j]
    return out_idx, out_d2


def within_radius(centers, points, radius: float) -> list[np.ndarray]:
    """For each center, sorted indices of points with squared distance <= radius**2."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return [np.zeros(0, np.int64) for _ in range(len(centers))]
    tree = cKDTree(points)
    r2 = radius * radius
    out = []
    for c, cand in zip(centers, tree.query_ball_point(centers, radius * (1 + _SLACK) + 1e-12)):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        keep = squared_distances(c[None, :], points[cand]) <= r2
        out.append(cand[keep])
    return out


def nearest_neighbor_distances(points) -> np.ndarray:
    """Distance from each point to its nearest other point (duplicates give 0)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=2)
    return dist[:, 1]
