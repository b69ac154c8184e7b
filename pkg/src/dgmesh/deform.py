"""Parametric forward/backward deformation of Gaussians and the cycle-consistency loss.

A model maps a Gaussian (position x, rotation q) at time t to offsets
(dx, dr, ds, dalpha). Every model is built from a per-time "base" vector
``b(t) = C @ phi(t)`` where ``phi(t) = [1, gamma^6(t)]`` and ``C`` is the flat
parameter array reshaped to (n_base, 15). The kind decides how ``b`` becomes a
displacement ``dx(x)`` and a motion quaternion ``m(x)``; the rotation offset is
``m ⊗ q - q`` so that ``q + dr`` is the rotated quaternion. The last four base
entries are a spatially uniform (ds, dalpha) block shared by all kinds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    CanonicalSet,
    Gaussian,
    QUAT_IDENTITY,
    normalize_vjp,
    quat_from_rotvec,
    quat_from_rotvec_jacobian,
    quat_normalize,
    quat_to_rotation,
    rotation_jacobian,
)
from .errors import DGMeshError

TIME_FREQUENCIES = 6
N_TIME_FEATURES = 1 + 2 * (TIME_FREQUENCIES + 1)
N_OFFSET_COMPONENTS = 11  # dx(3) + dr(4) + ds(3) + dalpha(1)
SCALE_FLOOR = 1e-8
KINDS = ("rigid", "affine", "sinusoidal-bend", "control-point-lattice")


def positional_encoding(p, k: int) -> np.ndarray:
    """Fourier features (sin 2^0 pi p, cos 2^0 pi p, ..., sin 2^k pi p, cos 2^k pi p) per input scalar."""
    if k < 0:
        raise DGMeshError("frequency count must be nonnegative")
    p = np.asarray(p, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    freqs = np.pi * 2.0 ** np.arange(k + 1)
    arg = p[..., None] * freqs  # (..., d, k+1)
    feats = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., d, k+1, 2)
    out = feats.reshape(p.shape[:-1] + (p.shape[-1] * 2 * (k + 1),))
    return out if not scalar else out.reshape(-1)


def time_features(t: float) -> np.ndarray:
    return np.concatenate([[1.0], positional_encoding(float(t), TIME_FREQUENCIES)])


def _left_matrix(a):
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([aw, -ax, -ay, -az], -1),
            np.stack([ax, aw, -az, ay], -1),
            np.stack([ay, az, aw, -ax], -1),
            np.stack([az, -ay, ax, aw], -1),
        ],
        -2,
    )


def _right_matrix(b):
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([bw, -bx, -by, -bz], -1),
            np.stack([bx, bw, bz, -by], -1),
            np.stack([by, -bz, bw, bx], -1),
            np.stack([bz, by, -bx, bw], -1),
        ],
        -2,
    )


# ---------------------------------------------------------------------------
# per-kind motion fields: base vector -> (dx(x), m(x))


def _motion_size(kind: str, options: dict) -> int:
    if kind == "rigid":
        return 6
    if kind == "affine":
        return 12
    if kind == "sinusoidal-bend":
        return 2
    if kind == "control-point-lattice":
        return 3 * int(np.prod(options["shape"]))
    raise DGMeshError(f"unknown deformation kind {kind!r}")


def _default_options(kind: str, options: dict | None) -> dict:
    opts = dict(options or {})
    if kind == "rigid":
        opts.setdefault("order", "rotate-translate")
        if opts["order"] not in ("rotate-translate", "translate-rotate"):
            raise DGMeshError(f"unknown rigid order {opts['order']!r}")
    elif kind == "sinusoidal-bend":
        opts.setdefault("along", 0)
        opts.setdefault("bend", 2)
        opts.setdefault("wavenumber", float(np.pi))
        if opts["along"] == opts["bend"]:
            raise DGMeshError("bend axis must differ from the along axis")
    elif kind == "control-point-lattice":
        opts.setdefault("shape", [3, 3, 3])
        opts.setdefault("lo", [-1.5, -1.5, -1.5])
        opts.setdefault("hi", [1.5, 1.5, 1.5])
        opts["shape"] = [int(v) for v in opts["shape"]]
        opts["lo"] = [float(v) for v in opts["lo"]]
        opts["hi"] = [float(v) for v in opts["hi"]]
        if min(opts["shape"]) < 2:
            raise DGMeshError("lattice needs at least 2 control points per axis")
    elif kind == "affine":
        pass
    else:
        raise DGMeshError(f"unknown deformation kind {kind!r}")
    return opts


def _lattice_weights(x, opts):
    shape = np.array(opts["shape"])
    lo = np.array(opts["lo"])
    hi = np.array(opts["hi"])
    scale = (shape - 1) / (hi - lo)
    u_raw = (x - lo) * scale
    inside = (u_raw >= 0) & (u_raw <= shape - 1)
    u = np.clip(u_raw, 0, shape - 1)
    base = np.clip(np.floor(u).astype(np.int64), 0, shape - 2)
    frac = u - base
    corners = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
    per_axis = np.where(corners[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    w = np.prod(per_axis, axis=2)
    sign = np.where(corners == 1, 1.0, -1.0)[None]
    dw = np.empty(per_axis.shape)
    for a in range(3):
        o = [b for b in range(3) if b != a]
        dw[:, :, a] = sign[:, :, a] * per_axis[:, :, o[0]] * per_axis[:, :, o[1]] * scale[a] * inside[:, None, a]
    idx = base[:, None, :] + corners[None]
    nodes = (idx[..., 0] * shape[1] + idx[..., 1]) * shape[2] + idx[..., 2]
    return nodes, w, dw


def _motion(kind, opts, b, x):
    n = x.shape[0]
    if kind == "rigid":
        m = quat_from_rotvec(b[:3])
        rot = quat_to_rotation(m)
        u = b[3:6]
        if opts["order"] == "rotate-translate":
            dx = x @ rot.T + u - x
        else:
            dx = (x + u) @ rot.T - x
        return dx, np.broadcast_to(m, (n, 4))
    if kind == "affine":
        a = b[:9].reshape(3, 3)
        return x @ a.T + b[9:12], np.broadcast_to(QUAT_IDENTITY, (n, 4))
    if kind == "sinusoidal-bend":
        amp, phase = b[0], b[1]
        kappa = opts["wavenumber"]
        arg = kappa * x[:, opts["along"]] + phase
        dx = np.zeros_like(x)
        dx[:, opts["bend"]] = amp * np.sin(arg)
        theta = amp * kappa * np.cos(arg)
        axis = np.cross(np.eye(3)[opts["along"]], np.eye(3)[opts["bend"]])
        m = np.concatenate([np.cos(0.5 * theta)[:, None], np.sin(0.5 * theta)[:, None] * axis], axis=1)
        return dx, m
    if kind == "control-point-lattice":
        disp = b.reshape(-1, 3)
        nodes, w, _ = _lattice_weights(x, opts)
        return np.einsum("nk,nkc->nc", w, disp[nodes]), np.broadcast_to(QUAT_IDENTITY, (n, 4))
    raise DGMeshError(f"unknown deformation kind {kind!r}")


def _motion_vjp(kind, opts, b, x, g_dx, g_m):
    """Returns (g_x, g_b) for upstream gradients on dx (N,3) and m (N,4)."""
    g_b = np.zeros(_motion_size(kind, opts))
    if kind == "rigid":
        m = quat_from_rotvec(b[:3])
        rot = quat_to_rotation(m)
        u = b[3:6]
        if opts["order"] == "rotate-translate":
            g_x = g_dx @ (rot - np.eye(3))
            g_rot = g_dx.T @ x
            g_b[3:6] = g_dx.sum(axis=0)
        else:
            g_x = g_dx @ (rot - np.eye(3))
            g_rot = g_dx.T @ (x + u)
            g_b[3:6] = g_dx.sum(axis=0) @ rot
        g_mq = g_m.sum(axis=0) + np.einsum("ij,ijk->k", g_rot, rotation_jacobian(m))
        g_b[:3] = g_mq @ quat_from_rotvec_jacobian(b[:3])
        return g_x, g_b
    if kind == "affine":
        a = b[:9].reshape(3, 3)
        g_b[:9] = (g_dx.T @ x).ravel()
        g_b[9:12] = g_dx.sum(axis=0)
        return g_dx @ a, g_b
    if kind == "sinusoidal-bend":
        amp, phase = b[0], b[1]
        kappa = opts["wavenumber"]
        along, bend = opts["along"], opts["bend"]
        arg = kappa * x[:, along] + phase
        theta = amp * kappa * np.cos(arg)
        axis = np.cross(np.eye(3)[along], np.eye(3)[bend])
        g_disp = g_dx[:, bend]
        g_theta = g_m[:, 0] * (-0.5 * np.sin(0.5 * theta)) + (g_m[:, 1:] @ axis) * (0.5 * np.cos(0.5 * theta))
        g_arg = g_disp * amp * np.cos(arg) - g_theta * amp * kappa * np.sin(arg)
        g_b[0] = np.sum(g_disp * np.sin(arg) + g_theta * kappa * np.cos(arg))
        g_b[1] = np.sum(g_arg)
        g_x = np.zeros_like(x)
        g_x[:, along] = g_arg * kappa
        return g_x, g_b
    if kind == "control-point-lattice":
        disp = b.reshape(-1, 3)
        nodes, w, dw = _lattice_weights(x, opts)
        g_disp = np.zeros_like(disp)
        for c in range(3):
            g_disp[:, c] = np.bincount(nodes.ravel(), weights=(w * g_dx[:, c:c + 1]).ravel(), minlength=len(disp))
        along = np.einsum("nkc,nc->nk", disp[nodes], g_dx)
        g_x = np.einsum("nk,nka->na", along, dw)
        return g_x, g_disp.ravel()
    raise DGMeshError(f"unknown deformation kind {kind!r}")


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class DeformationModel:
    kind: str
    params: np.ndarray
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        opts = _default_options(self.kind, self.options)
        object.__setattr__(self, "options", opts)
        params = np.asarray(self.params, dtype=float).reshape(-1)
        if params.shape[0] != self.n_params:
            raise DGMeshError(f"{self.kind} model expects {self.n_params} parameters, got {params.shape[0]}")
        if not np.all(np.isfinite(params)):
            raise DGMeshError("deformation parameters must be finite")
        params = params.copy()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def n_motion(self) -> int:
        return _motion_size(self.kind, self.options)

    @property
    def n_base(self) -> int:
        return self.n_motion + 4

    @property
    def n_params(self) -> int:
        return self.n_base * N_TIME_FEATURES

    @property
    def coefficients(self) -> np.ndarray:
        return self.params.reshape(self.n_base, N_TIME_FEATURES)

    @classmethod
    def zeros(cls, kind: str, **options) -> "DeformationModel":
        opts = _default_options(kind, options)
        n = (_motion_size(kind, opts) + 4) * N_TIME_FEATURES
        return cls(kind, np.zeros(n), opts)

    @classmethod
    def from_base(cls, kind: str, constant=None, schedule=None, **options) -> "DeformationModel":
        """Build from a constant base vector plus optional per-feature schedule rows.

        ``schedule`` maps a time-feature index to a base vector multiplying that feature.
        """
        model = cls.zeros(kind, **options)
        coef = np.zeros((model.n_base, N_TIME_FEATURES))
        if constant is not None:
            constant = np.asarray(constant, dtype=float).reshape(-1)
            coef[: len(constant), 0] = constant
        for feat, vec in (schedule or {}).items():
            vec = np.asarray(vec, dtype=float).reshape(-1)
            coef[: len(vec), int(feat)] = vec
        return cls(kind, coef.ravel(), model.options)

    def with_params(self, params) -> "DeformationModel":
        return DeformationModel(self.kind, params, self.options)

    def base(self, t: float) -> np.ndarray:
        return self.coefficients @ time_features(t)

    def inverse(self) -> "DeformationModel":
        """Closed-form inverse of a rigid model (offsets exactly negate at mapped points)."""
        if self.kind != "rigid":
            raise DGMeshError("closed-form inverse exists only for rigid models")
        order = "translate-rotate" if self.options["order"] == "rotate-translate" else "rotate-translate"
        return DeformationModel("rigid", -self.params, {"order": order})

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "options": _jsonable(self.options), "params": [float(v) for v in self.params]}

    @classmethod
    def from_dict(cls, data: dict) -> "DeformationModel":
        return cls(data["kind"], np.asarray(data["params"], dtype=float), dict(data.get("options", {})))

    # -- evaluation --------------------------------------------------------

    def offsets(self, positions, rotations, t: float):
        """(dx, dr, ds, dalpha) for a batch of Gaussians."""
        x = np.asarray(positions, dtype=float).reshape(-1, 3)
        q = np.asarray(rotations, dtype=float).reshape(-1, 4)
        b = self.base(t)
        dx, m = _motion(self.kind, self.options, b[: self.n_motion], x)
        dr = np.einsum("nij,nj->ni", _right_matrix(q), m) - q
        n = x.shape[0]
        ds = np.broadcast_to(b[self.n_motion : self.n_motion + 3], (n, 3)).copy()
        da = np.full(n, b[self.n_motion + 3])
        return dx, dr, ds, da

    def offsets_vjp(self, positions, rotations, t: float, g_dx, g_dr, g_ds, g_da):
        """Gradients (params, positions, rotations) of <upstream, offsets>."""
        x = np.asarray(positions, dtype=float).reshape(-1, 3)
        q = np.asarray(rotations, dtype=float).reshape(-1, 4)
        phi = time_features(t)
        b = self.coefficients @ phi
        _, m = _motion(self.kind, self.options, b[: self.n_motion], x)
        # dr = R(q) m - q = L(m) q - q
        g_m = np.einsum("nij,ni->nj", _right_matrix(q), g_dr)
        g_q = np.einsum("nij,ni->nj", _left_matrix(m), g_dr) - g_dr
        g_x, g_motion = _motion_vjp(self.kind, self.options, b[: self.n_motion], x, g_dx, g_m)
        g_b = np.concatenate([g_motion, np.sum(g_ds, axis=0), [np.sum(g_da)]])
        return np.outer(g_b, phi).ravel(), g_x, g_q


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def identity_model(kind: str = "rigid", **options) -> DeformationModel:
    return DeformationModel.zeros(kind, **options)


# ---------------------------------------------------------------------------
# applying offsets


@dataclass(frozen=True)
class DeformedArrays:
    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray


def apply_offsets(positions, rotations, scales, opacities, offsets) -> DeformedArrays:
    dx, dr, ds, da = offsets
    q = quat_normalize(np.asarray(rotations) + dr, fallback=QUAT_IDENTITY)
    return DeformedArrays(
        np.asarray(positions) + dx,
        q,
        np.maximum(np.asarray(scales) + ds, SCALE_FLOOR),
        np.clip(np.asarray(opacities) + da, 0.0, 1.0),
    )


def deform_arrays(model: DeformationModel, positions, rotations, scales, opacities, t: float) -> DeformedArrays:
    offs = model.offsets(positions, rotations, t)
    return apply_offsets(positions, rotations, scales, opacities, offs)


def deform_arrays_vjp(model, positions, rotations, scales, opacities, t, g_pos, g_rot, g_scale=None, g_opacity=None):
    """Pull gradients on deformed (positions, rotations, scales, opacities) back.

    Returns (g_params, g_positions, g_rotations) of the inputs.
    """
    positions = np.asarray(positions, dtype=float)
    rotations = np.asarray(rotations, dtype=float)
    dx, dr, ds, da = model.offsets(positions, rotations, t)
    n = positions.shape[0]
    g_dx = np.asarray(g_pos, dtype=float)
    pre = rotations + dr
    g_pre = normalize_vjp(pre, np.asarray(g_rot, dtype=float))
    g_ds = np.zeros((n, 3)) if g_scale is None else np.where(np.asarray(scales) + ds > SCALE_FLOOR, g_scale, 0.0)
    if g_opacity is None:
        g_da = np.zeros(n)
    else:
        a = np.asarray(opacities) + da
        g_da = np.where((a > 0.0) & (a < 1.0), g_opacity, 0.0)
    g_params, g_x, g_q = model.offsets_vjp(positions, rotations, t, g_dx, g_pre, g_ds, g_da)
    return g_params, g_x + g_dx, g_q + g_pre


def forward_deform(model: DeformationModel, g: Gaussian, t: float) -> Gaussian:
    out = deform_arrays(model, g.position[None], g.rotation[None], g.scale[None], np.array([g.opacity]), t)
    return Gaussian(g.id, out.positions[0], out.rotations[0], out.scales[0], float(out.opacities[0]))


def backward_deform(model: DeformationModel, g_def: Gaussian, t: float) -> Gaussian:
    """Map a deformed-space Gaussian back toward canonical space with an independent model."""
    return forward_deform(model, g_def, t)


def deform_set(model: DeformationModel, gaussians: CanonicalSet, t: float) -> CanonicalSet:
    out = deform_arrays(model, gaussians.positions, gaussians.rotations, gaussians.scales, gaussians.opacities, t)
    return CanonicalSet(gaussians.ids, out.positions, out.rotations, out.scales, out.opacities, gaussians.next_id)


# ---------------------------------------------------------------------------
# cycle consistency


def _stack_offsets(offs) -> np.ndarray:
    dx, dr, ds, da = offs
    return np.concatenate([dx, dr, ds, da[:, None]], axis=1)


def _split(g):
    return g[:, :3], g[:, 3:7], g[:, 7:10], g[:, 10]


def cycle_residual(forward, backward, positions, rotations, scales, opacities, t, anchored=None):
    """F_f(G, t) + F_b(G', t) per Gaussian, flattened to (N, 11)."""
    f_off = forward.offsets(positions, rotations, t)
    if anchored is None:
        anchored = apply_offsets(positions, rotations, scales, opacities, f_off)
    b_off = backward.offsets(anchored.positions, anchored.rotations, t)
    return _stack_offsets(f_off) + _stack_offsets(b_off)


def cycle_loss(forward: DeformationModel, backward: DeformationModel, gaussians, t: float, anchored=None) -> float:
    """Mean absolute value of F_f(G, t) + F_b(G', t) over Gaussians and the 11 offset components.

    ``gaussians`` is a CanonicalSet or a list of Gaussian; ``anchored`` optionally supplies G'
    (same order), otherwise G' is the forward-deformed set.
    """
    gs = gaussians if isinstance(gaussians, CanonicalSet) else CanonicalSet.from_gaussians(gaussians)
    if len(gs) == 0:
        raise DGMeshError("cycle loss needs at least one gaussian")
    anch = None
    if anchored is not None:
        a = anchored if isinstance(anchored, CanonicalSet) else CanonicalSet.from_gaussians(anchored)
        anch = DeformedArrays(a.positions, a.rotations, a.scales, a.opacities)
    res = cycle_residual(forward, backward, gs.positions, gs.rotations, gs.scales, gs.opacities, t, anch)
    return float(np.mean(np.abs(res)))


def cycle_loss_gradient(forward, backward, positions, rotations, scales, opacities, t):
    """Cycle loss and its gradients: (loss, g_forward, g_backward, g_positions, g_rotations)."""
    f_off = forward.offsets(positions, rotations, t)
    deformed = apply_offsets(positions, rotations, scales, opacities, f_off)
    b_off = backward.offsets(deformed.positions, deformed.rotations, t)
    res = _stack_offsets(f_off) + _stack_offsets(b_off)
    loss = float(np.mean(np.abs(res)))
    g = np.sign(res) / res.size
    # backward model evaluated at G'
    g_back, g_xd, g_qd = backward.offsets_vjp(deformed.positions, deformed.rotations, t, *_split(g))
    g_sd = np.zeros_like(deformed.scales)
    g_ad = np.zeros_like(deformed.opacities)
    # G' depends on the forward offsets and the inputs
    g_fwd_a, g_x_a, g_q_a = deform_arrays_vjp(forward, positions, rotations, scales, opacities, t, g_xd, g_qd, g_sd, g_ad)
    # direct forward-offset term
    g_fwd_b, g_x_b, g_q_b = forward.offsets_vjp(positions, rotations, t, *_split(g))
    return loss, g_fwd_a + g_fwd_b, g_back, g_x_a + g_x_b, g_q_a + g_q_b


def deform_gradient(model: DeformationModel, gaussians: CanonicalSet, t: float, g_pos, g_rot=None, g_scale=None, g_opacity=None):
    """Parameter gradient of a loss on the deformed Gaussians, given its upstream gradients."""
    n = len(gaussians)
    g_rot = np.zeros((n, 4)) if g_rot is None else g_rot
    g_params, _, _ = deform_arrays_vjp(
        model, gaussians.positions, gaussians.rotations, gaussians.scales, gaussians.opacities, t, g_pos, g_rot, g_scale, g_opacity
    )
    return g_params
