"""Construction of the 256-case marching-cubes triangle table.

The table is generated rather than transcribed. On every cube face the contour
segments are chosen by a rule that only looks at that face's four corners
(ambiguous faces always cut off their above-iso corners), so the two cells
sharing a face agree on its segments and the extracted surface is closed.
Segments are directed consistently, chained into loops and each loop is
triangulated without any diagonal that lies in a cube face.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np

CORNERS = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])


def _edges():
    edges = []
    for a, b in combinations(range(8), 2):
        diff = CORNERS[b] - CORNERS[a]
        if np.abs(diff).sum() == 1:
            edges.append((a, b, int(np.argmax(diff))))
    return edges


EDGES = _edges()  # (low corner, high corner, axis)
EDGE_INDEX = {frozenset((a, b)): i for i, (a, b, _) in enumerate(EDGES)}


def _faces():
    faces = []
    center = np.full(3, 0.5)
    for axis in range(3):
        for side in (0, 1):
            ids = [c for c in range(8) if CORNERS[c][axis] == side]
            fc = CORNERS[ids].mean(axis=0)
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v = np.cross(normal, u)
            ang = [np.arctan2(np.dot(CORNERS[c] - fc, v), np.dot(CORNERS[c] - fc, u)) for c in ids]
            cycle = [ids[i] for i in np.argsort(ang)]  # counterclockwise seen from outside
            assert np.dot(normal, fc - center) > 0
            faces.append(cycle)
    return faces


FACES = _faces()
EDGE_FACES = [set() for _ in EDGES]
for _f, _cycle in enumerate(FACES):
    for _i in range(4):
        EDGE_FACES[EDGE_INDEX[frozenset((_cycle[_i], _cycle[(_i + 1) % 4]))]].add(_f)


def _face_segments(cycle, below):
    crossings = []
    for i in range(4):
        p, q = cycle[i], cycle[(i + 1) % 4]
        if below[p] != below[q]:
            kind = "enter" if below[p] else "leave"  # entering / leaving the above-iso region
            crossings.append((kind, EDGE_INDEX[frozenset((p, q))]))
    segments = []
    m = len(crossings)
    for i, (kind, edge) in enumerate(crossings):
        if kind != "enter":
            continue
        for step in range(1, m):
            k2, e2 = crossings[(i + step) % m]
            if k2 == "leave":
                segments.append((e2, edge))  # directed leave -> enter
                break
    return segments


def _share_face(e1, e2):
    return bool(EDGE_FACES[e1] & EDGE_FACES[e2])


def _triangulate(loop):
    """Triangulate a polygon loop with diagonals that never lie in a cube face."""
    n = len(loop)

    @lru_cache(maxsize=None)
    def solve(i, j):
        # polygon loop[i..j] with chord (i, j); returns list of triangles or None
        if j - i < 2:
            return ()
        for k in range(i + 1, j):
            ok = True
            for a, b in ((i, k), (k, j)):
                if b - a > 1 and not (a == 0 and b == n - 1) and _share_face(loop[a], loop[b]):
                    ok = False
            if not ok:
                continue
            left = solve(i, k)
            right = solve(k, j)
            if left is None or right is None:
                continue
            return left + ((loop[i], loop[k], loop[j]),) + right
        return None

    tris = solve(0, n - 1)
    if tris is None:
        raise RuntimeError(f"no face-safe triangulation for loop {loop}")
    return list(tris)


def _case_triangles(case: int):
    below = [(case >> c) & 1 == 1 for c in range(8)]
    succ = {}
    for cycle in FACES:
        for a, b in _face_segments(cycle, below):
            assert a not in succ
            succ[a] = b
    triangles = []
    remaining = sorted(succ)
    seen = set()
    for start in remaining:
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        nxt = succ[start]
        while nxt != start:
            loop.append(nxt)
            seen.add(nxt)
            nxt = succ[nxt]
        triangles.extend(_triangulate(loop))
    return triangles


@lru_cache(maxsize=1)
def triangle_table():
    """(256, T, 3) local edge indices padded with -1, and per-case triangle counts."""
    cases = [_case_triangles(c) for c in range(256)]
    width = max(len(t) for t in cases)
    table = -np.ones((256, width, 3), dtype=np.int64)
    counts = np.zeros(256, dtype=np.int64)
    for c, tris in enumerate(cases):
        counts[c] = len(tris)
        for i, tri in enumerate(tris):
            # loop direction already puts the above-iso side in front of each triangle
            table[c, i] = tri
    return table, counts
