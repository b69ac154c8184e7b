import numpy as np
import pytest
from conftest import sphere_sdf_grid
from hypothesis import given
from hypothesis import strategies as st

from dgmesh.anchoring import (
    AnchorConfig,
    anchor_loss,
    anchor_loss_gradient,
    anchor_step,
    face_edge_length,
    match_gaussians_to_faces,
    merge_gaussians,
    new_face_gaussian,
    uniformity_metric,
)
from dgmesh.core import CanonicalSet, Gaussian, gaussian_normal, make_rng, quat_normalize
from dgmesh.deform import DeformationModel
from dgmesh.errors import DGMeshError
from dgmesh.isosurface import TriMesh, face_centroids, marching_cubes

IDENTITY = DeformationModel.zeros("rigid")


@pytest.fixture(scope="module")
def sphere_mesh():
    return marching_cubes(sphere_sdf_grid(16, radius=0.9))


def _set(positions, rng=None):
    n = len(positions)
    rng = rng or make_rng(0)
    return CanonicalSet(np.arange(n), positions, quat_normalize(rng.standard_normal((n, 4))), np.full((n, 3), 0.05), np.full(n, 0.5))


def test_loss_zero_at_centroids_and_squared_distance_otherwise(sphere_mesh):
    c = face_centroids(sphere_mesh)
    cfg = AnchorConfig(r_s=0.5 * face_edge_length(sphere_mesh))
    asg = match_gaussians_to_faces(c, c, cfg, exclusive=True)
    assert np.all(asg.counts == 1)
    assert anchor_loss(asg, c) == (0.0, len(c))
    # move one gaussian by d; it stays assigned to its face
    d = 0.01
    moved = c.copy()
    moved[7] += [d, 0, 0]
    asg = match_gaussians_to_faces(moved, c, cfg, exclusive=True)
    loss = anchor_loss(asg, moved)
    assert loss.pairs == len(c)
    assert loss.value == pytest.approx(d * d / len(c), rel=1e-12)


def test_loss_empty_when_no_one_to_one_faces():
    c = np.array([[0.0, 0, 0], [5.0, 0, 0]])
    pos = np.array([[0.01, 0, 0], [-0.01, 0, 0]])
    asg = match_gaussians_to_faces(pos, c, AnchorConfig(r_s=0.1), exclusive=True)
    loss = anchor_loss(asg, pos)
    assert loss.empty and loss.value == 0.0


def test_matching_modes(sphere_mesh):
    rng = make_rng(1)
    c = face_centroids(sphere_mesh)
    pos = c[rng.choice(len(c), 50)] + 0.02 * rng.standard_normal((50, 3))
    r = face_edge_length(sphere_mesh)
    near = match_gaussians_to_faces(pos, c, AnchorConfig(matching_mode="nearest"))
    assert near.counts.sum() == 50
    excl = match_gaussians_to_faces(pos, c, AnchorConfig(r_s=r), exclusive=True)
    assert excl.counts.sum() == np.sum(excl.nearest_distance <= r)
    shared = match_gaussians_to_faces(pos, c, AnchorConfig(r_s=r))
    # brute force radius membership
    for f in rng.choice(len(c), 20, replace=False):
        expect = np.flatnonzero(np.linalg.norm(pos - c[f], axis=1) <= r)
        assert set(shared.members[f].tolist()) == set(expect.tolist())
    with pytest.raises(DGMeshError):
        match_gaussians_to_faces(pos, c, AnchorConfig())


def test_anchor_gradient_matches_finite_differences(sphere_mesh):
    rng = make_rng(2)
    c = face_centroids(sphere_mesh)
    pos = c + 0.01 * rng.standard_normal(c.shape)
    asg = match_gaussians_to_faces(pos, c, AnchorConfig(r_s=face_edge_length(sphere_mesh)), exclusive=True)
    loss, g_pos, g_vert = anchor_loss_gradient(asg, pos, sphere_mesh)
    faces, gauss = asg.one_to_one()

    def L(p, v):
        cent = TriMesh(v, sphere_mesh.faces).vertices[sphere_mesh.faces].mean(axis=1)
        d = p[gauss] - cent[faces]
        return np.sum(d * d) / len(faces)

    assert loss == pytest.approx(L(pos, sphere_mesh.vertices))
    eps = 1e-6
    for i in rng.choice(len(pos), 5, replace=False):
        d = np.zeros_like(pos)
        d[i, 1] = eps
        assert (L(pos + d, sphere_mesh.vertices) - L(pos - d, sphere_mesh.vertices)) / (2 * eps) == pytest.approx(g_pos[i, 1], rel=1e-6, abs=1e-12)
    v = sphere_mesh.vertices
    for i in rng.choice(len(v), 5, replace=False):
        d = np.zeros_like(v)
        d[i, 2] = eps
        assert (L(pos, v + d) - L(pos, v - d)) / (2 * eps) == pytest.approx(g_vert[i, 2], rel=1e-6, abs=1e-12)


def test_uniformity_metric():
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    assert uniformity_metric(g) == pytest.approx(0.0, abs=1e-12)
    rng = make_rng(3)
    assert uniformity_metric(rng.random((200, 3))) > 0.2
    with pytest.raises(DGMeshError):
        uniformity_metric(np.zeros((1, 3)))


def test_merge_aligns_quaternion_signs():
    q = quat_normalize(np.array([0.9, 0.1, 0.0, 0.2]))
    a = Gaussian(0, np.zeros(3), q, np.full(3, 0.1), 0.2)
    b = Gaussian(1, np.ones(3), -q, np.full(3, 0.3), 0.6)
    m = merge_gaussians([a, b], 7)
    assert m.id == 7
    assert np.allclose(m.position, 0.5) and np.allclose(m.scale, 0.2) and m.opacity == pytest.approx(0.4)
    assert np.allclose(m.rotation, q)
    with pytest.raises(DGMeshError):
        merge_gaussians([], 0)


def test_new_face_gaussian_orients_short_axis_to_normal():
    n = np.array([1.0, 2.0, -2.0]) / 3.0
    g = new_face_gaussian(np.zeros(3), n, 0.3, 4)
    assert np.allclose(g.scale, [0.1, 0.1, 0.01])
    assert abs(abs(gaussian_normal(g) @ n) - 1) < 1e-12


def _clustered(mesh, seed=4):
    rng = make_rng(seed)
    c = face_centroids(mesh)
    # half the faces hold a tight cluster of three gaussians, the rest hold none
    chosen = rng.choice(len(c), len(c) // 2, replace=False)
    pos = np.repeat(c[chosen], 3, axis=0) + 0.003 * rng.standard_normal((3 * len(chosen), 3))
    return _set(pos, rng)


def test_clustered_sphere_gets_full_coverage_and_better_uniformity(sphere_mesh):
    can = _clustered(sphere_mesh)
    out, _, rep = anchor_step(can, IDENTITY, IDENTITY, sphere_mesh, 0.0, AnchorConfig())
    r = face_edge_length(sphere_mesh)
    cover = match_gaussians_to_faces(out.positions, face_centroids(sphere_mesh), AnchorConfig(r_s=r))
    assert cover.coverage() == 1.0
    assert rep.creations > 0 and rep.merges > 0
    assert rep.uniformity_after < rep.uniformity_before
    # ids: untouched ids kept, new ids fresh and increasing
    assert len(set(out.ids.tolist())) == len(out)
    assert min(rep.created_ids) >= len(can)
    assert set(rep.removed_ids).isdisjoint(out.ids.tolist())


def test_anchoring_reaches_a_fixed_point(sphere_mesh):
    can = _clustered(sphere_mesh, seed=5)
    cfg = AnchorConfig()
    for step in range(3):
        can, _, rep = anchor_step(can, IDENTITY, IDENTITY, sphere_mesh, 0.0, cfg)
        if rep.merges == 0 and rep.creations == 0:
            break
    _, _, rep = anchor_step(can, IDENTITY, IDENTITY, sphere_mesh, 0.0, cfg)
    assert rep.merges == 0 and rep.creations == 0


@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_backward_model_maps_new_gaussians_to_canonical(tx, ty):
    mesh = TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), [[0, 1, 2]])
    fwd = DeformationModel.from_base("rigid", [0, 0, 0, tx, ty, 0.0])
    can = CanonicalSet.empty()
    out, _, rep = anchor_step(can, fwd, fwd.inverse(), mesh, 0.5, AnchorConfig())
    assert rep.creations == 1
    assert np.allclose(out.positions[0] + [tx, ty, 0], face_centroids(mesh)[0], atol=1e-12)


def test_config_validation():
    with pytest.raises(DGMeshError):
        AnchorConfig(r_s=0.0)
    with pytest.raises(DGMeshError):
        AnchorConfig(interval=0)
    with pytest.raises(DGMeshError):
        AnchorConfig(matching_mode="greedy")
    with pytest.raises(DGMeshError):
        anchor_step(_set(np.zeros((2, 3))), IDENTITY, IDENTITY, TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 0.0, AnchorConfig())
