import numpy as np
import pytest

from dgmesh.errors import DGMeshError
from dgmesh.isosurface import validate_mesh
from dgmesh.pipeline.scenes import (
    SHAPES,
    Frame,
    FrameSequence,
    frame_times,
    generate_scene,
    scene_sdf,
    sdf_bent_bar,
    sdf_box,
)


def test_frame_times():
    assert frame_times(1).tolist() == [0.0]
    assert frame_times(5).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]


@pytest.mark.parametrize("shape,t,genus", [("sphere", 0.0, (0,)), ("torus", 0.0, (1,)), ("sphere_to_torus", 0.0, (0,)), ("sphere_to_torus", 1.0, (1,)), ("bending_bar", 1.0, (0,))])
def test_ground_truth_topology(shape, t, genus):
    from dgmesh.pipeline.scenes import gt_mesh_for

    d = validate_mesh(gt_mesh_for(shape, t, 32))
    assert d.watertight and d.genus == genus


def test_generate_scene_is_seeded_and_on_surface():
    a = generate_scene("torus", 2, 300, seed=4, gt_resolution=32)
    b = generate_scene("torus", 2, 300, seed=4, gt_resolution=32)
    assert np.array_equal(a.frames[1].cloud.positions, b.frames[1].cloud.positions)
    assert not np.array_equal(a.frames[0].cloud.positions, a.frames[1].cloud.positions)
    sdf = scene_sdf("torus", 0.0)(a.frames[0].cloud.positions)
    assert np.max(np.abs(sdf)) < 0.02
    # normals point outward: sdf increases along them
    p, n = a.frames[0].cloud.positions, a.frames[0].cloud.normals
    assert np.mean(scene_sdf("torus", 0.0)(p + 0.01 * n) > sdf) > 0.99


def test_bent_bar_reduces_to_box_and_preserves_length():
    rng = np.random.default_rng(0)
    p = rng.uniform(-1.2, 1.2, (500, 3))
    assert np.allclose(sdf_bent_bar(p, 1e-12), sdf_box(p, [1.0, 0.22, 0.22]) - 0.05)
    # the arc midline point at arclength 0.5 lies inside the bent bar
    k = 0.9
    s = 0.5
    mid = np.array([[np.sin(k * s) / k, (1 - np.cos(k * s)) / k, 0.0]])
    assert sdf_bent_bar(mid, k)[0] < -0.2


def test_errors():
    with pytest.raises(DGMeshError):
        generate_scene("cube", 1, 200, 0)
    with pytest.raises(DGMeshError):
        generate_scene("sphere", 0, 200, 0)
    with pytest.raises(DGMeshError):
        generate_scene("sphere", 1, 10, 0)
    with pytest.raises(DGMeshError):
        FrameSequence("x", ())
    f = generate_scene("sphere", 1, 200, 0, gt_resolution=16).frames[0]
    with pytest.raises(DGMeshError):
        FrameSequence("x", (f, Frame(0.0, f.cloud)))
    assert set(SHAPES) == {"sphere", "torus", "sphere_to_torus", "bending_bar"}
