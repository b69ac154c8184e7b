import numpy as np
import pytest
from conftest import sphere_sdf_grid
from hypothesis import given, settings
from hypothesis import strategies as st

from dgmesh.core import GridSpec, ScalarGrid, make_rng
from dgmesh.errors import DegenerateMesh, NotDifferentiable
from dgmesh.isosurface import (
    TriMesh,
    face_areas,
    face_centroids,
    face_normals,
    laplacian_energy,
    laplacian_gradient,
    marching_cubes,
    mc_backprop,
    mean_edge_length,
    sample_surface,
    validate_mesh,
)
from dgmesh.psr import interpolate


def _torus_grid(n=32):
    spec = GridSpec.cube(-1.5, 1.5, n)
    p = spec.node_positions()
    q = np.hypot(p[..., 0], p[..., 1]) - 0.9
    return ScalarGrid(spec, np.hypot(q, p[..., 2]) - 0.35)


def _random_closed_grid(seed, n=8):
    rng = make_rng(seed)
    vals = rng.uniform(-1, 1, (n, n, n))
    vals[[0, -1], :, :] = 1.0
    vals[:, [0, -1], :] = 1.0
    vals[:, :, [0, -1]] = 1.0
    return ScalarGrid(GridSpec.cube(0.0, 1.0, n), vals)


def test_sphere_vertices_close_to_surface():
    grid = sphere_sdf_grid(32, radius=0.9)
    mesh = marching_cubes(grid)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.max(np.abs(r - 0.9)) < 0.1 * grid.spec.h
    # outward faces: normals agree with the radial direction
    assert np.all(np.sum(face_normals(mesh) * face_centroids(mesh), axis=1) > 0)
    d = validate_mesh(mesh)
    assert d.watertight and d.genus == (0,) and d.components == 1


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_random_fields_give_closed_oriented_meshes(seed):
    grid = _random_closed_grid(seed)
    mesh = marching_cubes(grid)
    d = validate_mesh(mesh)
    assert d.boundary_edges == 0
    assert d.consistent_orientation
    if mesh.n_faces:
        # vertices lie on the iso level of the trilinear field along their grid edge
        assert np.max(np.abs(interpolate(grid, mesh.vertices))) < 1e-9


def test_exact_iso_values_are_nudged_not_degenerate():
    spec = GridSpec.cube(0.0, 1.0, 8)
    vals = np.ones(spec.shape)
    vals[3:5, 3:5, 3:5] = 0.0
    mesh = marching_cubes(ScalarGrid(spec, vals), iso=0.0)
    assert mesh.n_faces == 0 or validate_mesh(mesh).boundary_edges == 0
    vals[3:5, 3:5, 3:5] = -1.0
    vals[4, 4, 4] = 0.0
    d = validate_mesh(marching_cubes(ScalarGrid(spec, vals)))
    assert d.watertight and d.genus == (0,)


def test_empty_field_gives_empty_mesh():
    spec = GridSpec.cube(0.0, 1.0, 8)
    mesh = marching_cubes(ScalarGrid(spec, np.ones(spec.shape)))
    assert mesh.n_faces == 0 and mesh.n_vertices == 0
    assert validate_mesh(mesh).components == 0
    assert laplacian_energy(mesh)[0] == 0.0


def test_torus_genus_one():
    d = validate_mesh(marching_cubes(_torus_grid()))
    assert d.watertight and d.genus == (1,)


def test_two_components_reported_separately():
    spec = GridSpec.cube(-1.5, 1.5, 32)
    p = spec.node_positions()
    a = np.linalg.norm(p - [0.7, 0, 0], axis=-1) - 0.5
    b = np.linalg.norm(p + [0.7, 0, 0], axis=-1) - 0.5
    d = validate_mesh(marching_cubes(ScalarGrid(spec, np.minimum(a, b))))
    assert d.components == 2 and d.genus == (0, 0)


def test_mc_backprop_matches_finite_differences():
    grid = sphere_sdf_grid(16, radius=0.8)
    rng = make_rng(1)
    mesh = marching_cubes(grid)
    w = rng.standard_normal(mesh.vertices.shape)
    g = mc_backprop(mesh, w).values
    eps = 1e-6
    prov = mesh.provenance
    nodes = np.unique(np.concatenate([prov.node_a, prov.node_b]))
    for node in rng.choice(nodes, 15, replace=False):
        d = np.zeros(grid.spec.shape)
        d.flat[node] = eps
        fp = np.sum(marching_cubes(ScalarGrid(grid.spec, grid.values + d)).vertices * w)
        fm = np.sum(marching_cubes(ScalarGrid(grid.spec, grid.values - d)).vertices * w)
        fd = (fp - fm) / (2 * eps)
        assert abs(fd - g.flat[node]) < 1e-5 * max(1.0, abs(fd))
    untouched = np.setdiff1d(np.arange(grid.values.size), nodes)
    assert np.all(g.flat[untouched] == 0)


def test_mc_backprop_needs_provenance():
    mesh = TriMesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(NotDifferentiable):
        mc_backprop(mesh, np.zeros((3, 3)))


def test_laplacian_gradient_matches_finite_differences():
    mesh = marching_cubes(sphere_sdf_grid(16, radius=0.8))
    rng = make_rng(4)
    v = mesh.vertices + 0.01 * rng.standard_normal(mesh.vertices.shape)
    mesh = TriMesh(v, mesh.faces)
    e0, g = laplacian_gradient(mesh)
    assert e0 == pytest.approx(laplacian_energy(mesh)[0])
    eps = 1e-6
    for i in rng.choice(mesh.n_vertices, 10, replace=False):
        for a in range(3):
            d = np.zeros_like(v)
            d[i, a] = eps
            fd = (laplacian_energy(TriMesh(v + d, mesh.faces))[0] - laplacian_energy(TriMesh(v - d, mesh.faces))[0]) / (2 * eps)
            assert abs(fd - g[i, a]) < 1e-6 * max(1.0, abs(fd)) + 1e-9


def test_laplacian_zero_for_affine_fan_centre():
    # centre vertex of a regular planar fan has zero differential
    ang = np.linspace(0, 2 * np.pi, 7)[:-1]
    v = np.vstack([[0, 0, 0], np.c_[np.cos(ang), np.sin(ang), np.zeros(6)]])
    f = [[0, i + 1, (i + 1) % 6 + 1] for i in range(6)]
    _, delta = laplacian_energy(TriMesh(v, f))
    assert np.allclose(delta[0], 0.0, atol=1e-15)


def test_tetrahedron_diagnostics():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    f = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    mesh = TriMesh(v, f)
    d = validate_mesh(mesh)
    assert d.watertight and d.euler_characteristic == 2 and d.genus == (0,)
    open_mesh = TriMesh(v, f[:3])
    d = validate_mesh(open_mesh)
    assert not d.watertight and d.boundary_edges == 3 and d.genus == ()
    flipped = TriMesh(v, [[0, 1, 2], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    assert not validate_mesh(flipped).consistent_orientation
    assert face_areas(mesh).sum() == pytest.approx(1.5 + np.sqrt(3) / 2)
    assert mean_edge_length(mesh) == pytest.approx((3 + 3 * np.sqrt(2)) / 6)


def test_degenerate_faces_rejected():
    with pytest.raises(DegenerateMesh):
        TriMesh(np.eye(3), [[0, 0, 1]])
    with pytest.raises(DegenerateMesh):
        TriMesh(np.eye(3), [[0, 1, 3]])


def test_sample_surface_is_seeded_and_area_weighted():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0], [5, 0, 0], [3, 2, 0]], float)
    mesh = TriMesh(v, [[0, 1, 2], [3, 4, 5]])  # areas 0.5 and 2
    a = sample_surface(mesh, 20000, seed=11)
    b = sample_surface(mesh, 20000, seed=11)
    assert np.array_equal(a.positions, b.positions)
    frac_big = np.mean(a.positions[:, 0] >= 3 - 1e-12)
    assert frac_big == pytest.approx(0.8, abs=0.02)
    assert np.allclose(a.normals, [0, 0, 1])
    with pytest.raises(DegenerateMesh):
        sample_surface(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 10, 0)
