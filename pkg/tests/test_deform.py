import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgmesh.core import CanonicalSet, make_rng, quat_normalize, quat_to_rotation
from dgmesh.deform import (
    KINDS,
    N_TIME_FEATURES,
    DeformationModel,
    cycle_loss,
    cycle_loss_gradient,
    cycle_residual,
    deform_arrays,
    deform_arrays_vjp,
    deform_set,
    identity_model,
    positional_encoding,
    time_features,
)
from dgmesh.errors import DGMeshError

OPTIONS = {
    "rigid": [{"order": "rotate-translate"}, {"order": "translate-rotate"}],
    "affine": [{}],
    "sinusoidal-bend": [{}, {"along": 1, "bend": 0, "wavenumber": 2.0}],
    "control-point-lattice": [{"shape": [3, 4, 3]}],
}
CASES = [(k, o) for k in KINDS for o in OPTIONS[k]]


def _gaussians(rng, n=12):
    pos = rng.uniform(-1.0, 1.0, (n, 3))
    rot = quat_normalize(rng.standard_normal((n, 4)))
    scales = rng.uniform(0.05, 0.2, (n, 3))
    return pos, rot, scales, np.full(n, 0.5)


def _model(kind, opts, rng, size=0.05):
    m = DeformationModel.zeros(kind, **opts)
    return m.with_params(size * rng.standard_normal(m.n_params))


def test_positional_encoding_layout():
    f = positional_encoding(np.array([0.25, 0.5]), 2)
    assert f.shape == (12,)
    assert f[:2] == pytest.approx([np.sin(np.pi / 4), np.cos(np.pi / 4)])
    assert f[2:4] == pytest.approx([np.sin(np.pi / 2), np.cos(np.pi / 2)], abs=1e-15)
    assert time_features(0.3).shape == (N_TIME_FEATURES,) and time_features(0.3)[0] == 1.0
    with pytest.raises(DGMeshError):
        positional_encoding(0.1, -1)


@pytest.mark.parametrize("kind,opts", CASES)
def test_identity_models_leave_gaussians_unchanged(kind, opts):
    pos, rot, sc, op = _gaussians(make_rng(0))
    out = deform_arrays(identity_model(kind, **opts), pos, rot, sc, op, 0.7)
    assert np.allclose(out.positions, pos, atol=1e-15)
    assert np.allclose(out.rotations, rot, atol=1e-15)
    assert np.array_equal(out.scales, sc) and np.array_equal(out.opacities, op)


def test_rigid_constant_motion_is_rotation_then_translation():
    omega = np.array([0.0, 0.0, np.pi / 2])
    u = np.array([0.1, -0.2, 0.3])
    model = DeformationModel.from_base("rigid", np.concatenate([omega, u]))
    pos, rot, sc, op = _gaussians(make_rng(1), 4)
    out = deform_arrays(model, pos, rot, sc, op, 0.4)
    rz = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
    assert np.allclose(out.positions, pos @ rz.T + u)
    for q0, q1 in zip(rot, out.rotations):
        assert np.allclose(quat_to_rotation(q1), rz @ quat_to_rotation(q0))


@pytest.mark.parametrize("kind,opts", CASES)
def test_deform_vjp_matches_finite_differences(kind, opts):
    rng = make_rng(5, KINDS.index(kind))
    pos, rot, sc, op = _gaussians(rng)
    model = _model(kind, opts, rng)
    t = 0.37
    w = [rng.standard_normal((12, 3)), rng.standard_normal((12, 4)), rng.standard_normal((12, 3)), rng.standard_normal(12)]

    def f(params, p, r):
        out = deform_arrays(model.with_params(params), p, r, sc, op, t)
        return sum(np.sum(a * b) for a, b in zip(w, (out.positions, out.rotations, out.scales, out.opacities)))

    g_par, g_pos, g_rot = deform_arrays_vjp(model, pos, rot, sc, op, t, *w)
    eps = 1e-6
    params = model.params.copy()
    for i in rng.choice(len(params), 12, replace=False):
        d = np.zeros_like(params)
        d[i] = eps
        fd = (f(params + d, pos, rot) - f(params - d, pos, rot)) / (2 * eps)
        assert fd == pytest.approx(g_par[i], rel=1e-6, abs=1e-8)
    for i in range(4):
        for a in range(3):
            d = np.zeros_like(pos)
            d[i, a] = eps
            fd = (f(params, pos + d, rot) - f(params, pos - d, rot)) / (2 * eps)
            assert fd == pytest.approx(g_pos[i, a], rel=1e-6, abs=1e-8)
        for a in range(4):
            d = np.zeros_like(rot)
            d[i, a] = eps
            fd = (f(params, pos, rot + d) - f(params, pos, rot - d)) / (2 * eps)
            assert fd == pytest.approx(g_rot[i, a], rel=1e-6, abs=1e-8)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0), st.sampled_from(["rotate-translate", "translate-rotate"]))
def test_rigid_inverse_gives_zero_cycle(seed, t, order):
    rng = make_rng(seed)
    pos, rot, sc, op = _gaussians(rng)
    fwd = _model("rigid", {"order": order}, rng, size=0.3)
    gs = CanonicalSet(np.arange(12), pos, rot, sc, op)
    assert cycle_loss(fwd, fwd.inverse(), gs, t) < 1e-12
    back = deform_set(fwd.inverse(), deform_set(fwd, gs, t), t)
    assert np.allclose(back.positions, pos, atol=1e-12)


def test_inverse_only_for_rigid():
    with pytest.raises(DGMeshError):
        DeformationModel.zeros("affine").inverse()


@pytest.mark.parametrize("kind,opts", CASES)
def test_cycle_loss_gradient_matches_finite_differences(kind, opts):
    rng = make_rng(8, KINDS.index(kind))
    pos, rot, sc, op = _gaussians(rng)
    fwd, bwd = _model(kind, opts, rng), _model(kind, opts, rng)
    t = 0.61
    loss, g_f, g_b, g_x, g_q = cycle_loss_gradient(fwd, bwd, pos, rot, sc, op, t)
    gs = CanonicalSet(np.arange(12), pos, rot, sc, op)
    assert loss == pytest.approx(cycle_loss(fwd, bwd, gs, t))
    res = cycle_residual(fwd, bwd, pos, rot, sc, op, t)
    # away from the |.| kink; exact zeros (no rotation motion) stay zero under perturbation
    assert np.all((res == 0) | (np.abs(res) > 1e-5))
    eps = 1e-7

    def L(f=fwd, b=bwd, p=pos):
        return cycle_loss(f, b, CanonicalSet(np.arange(12), p, rot, sc, op), t)

    for i in rng.choice(fwd.n_params, 6, replace=False):
        d = np.zeros(fwd.n_params)
        d[i] = eps
        fd = (L(f=fwd.with_params(fwd.params + d)) - L(f=fwd.with_params(fwd.params - d))) / (2 * eps)
        assert fd == pytest.approx(g_f[i], rel=1e-5, abs=1e-9)
        fd = (L(b=bwd.with_params(bwd.params + d)) - L(b=bwd.with_params(bwd.params - d))) / (2 * eps)
        assert fd == pytest.approx(g_b[i], rel=1e-5, abs=1e-9)
    for a in range(3):
        d = np.zeros_like(pos)
        d[2, a] = eps
        fd = (L(p=pos + d) - L(p=pos - d)) / (2 * eps)
        assert fd == pytest.approx(g_x[2, a], rel=1e-5, abs=1e-9)


def test_model_serialization_round_trip():
    rng = make_rng(3)
    for kind, opts in CASES:
        m = _model(kind, opts, rng)
        back = DeformationModel.from_dict(m.to_dict())
        assert back.kind == m.kind and back.options == m.options
        assert np.array_equal(back.params, m.params)


def test_invalid_models_rejected():
    with pytest.raises(DGMeshError):
        DeformationModel.zeros("twist")
    with pytest.raises(DGMeshError):
        DeformationModel("rigid", np.zeros(3))
    with pytest.raises(DGMeshError):
        DeformationModel("rigid", np.full(10 * N_TIME_FEATURES, np.nan))
    with pytest.raises(DGMeshError):
        DeformationModel.zeros("sinusoidal-bend", along=1, bend=1)
    with pytest.raises(DGMeshError):
        DeformationModel.zeros("control-point-lattice", shape=[1, 3, 3])
    m = DeformationModel.zeros("rigid")
    with pytest.raises(ValueError):
        m.params[0] = 1.0


def test_scale_floor_and_opacity_clip():
    model = DeformationModel.from_base("affine", np.concatenate([np.zeros(12), [-1.0, -1.0, -1.0, 2.0]]))
    pos, rot, sc, op = _gaussians(make_rng(2), 3)
    out = deform_arrays(model, pos, rot, sc, op, 0.0)
    assert np.all(out.scales > 0) and np.all(out.opacities == 1.0)
