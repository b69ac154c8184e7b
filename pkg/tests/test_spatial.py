import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from dgmesh.core import make_rng
from dgmesh.spatial import nearest, nearest_neighbor_distances, squared_distances, within_radius


def _brute_nearest(q, r):
    d2 = squared_distances(q[:, None, :], r[None, :, :])
    idx = np.argmin(d2, axis=1)  # lowest index on ties
    return idx, d2[np.arange(len(q)), idx]


@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(1, 60), st.booleans())
def test_nearest_is_bit_identical_to_brute_force(seed, nq, nr, lattice):
    rng = make_rng(seed)
    if lattice:
        # many exact ties
        q = rng.integers(0, 4, (nq, 3)).astype(float) + 0.5
        r = rng.integers(0, 4, (nr, 3)).astype(float)
    else:
        q, r = rng.standard_normal((nq, 3)), rng.standard_normal((nr, 3))
    idx, d2 = nearest(q, r)
    bi, bd = _brute_nearest(q, r)
    assert np.array_equal(d2, bd)
    assert np.array_equal(idx, bi)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.5))
def test_within_radius_matches_brute_force(seed, radius):
    rng = make_rng(seed)
    c, p = rng.standard_normal((15, 3)), rng.standard_normal((80, 3))
    got = within_radius(c, p, radius)
    for ci, members in zip(c, got):
        expect = np.flatnonzero(squared_distances(ci[None], p) <= radius * radius)
        assert np.array_equal(members, expect)


def test_edge_cases():
    idx, d2 = nearest(np.zeros((0, 3)), np.ones((3, 3)))
    assert idx.shape == (0,) and d2.shape == (0,)
    assert all(len(m) == 0 for m in within_radius(np.zeros((2, 3)), np.zeros((0, 3)), 1.0))
    pts = np.array([[0.0, 0, 0], [0, 0, 0], [3, 0, 0]])
    assert np.allclose(nearest_neighbor_distances(pts), [0, 0, 3])
