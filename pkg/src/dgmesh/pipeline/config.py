"""Flat TOML configuration for the reconstruction pipeline.

Every key is listed in ``SCHEMA`` with its type and allowed range; unknown keys and
out-of-range values are errors. ``dumps`` writes a canonical form that parses back to
an identical config.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import tomli

from ..anchoring import MATCHING_MODES
from ..deform import KINDS
from ..errors import ConfigError, FileNotFound, IoError
from .scenes import SHAPES

EMD_MODES = ("exact", "entropic")


@dataclass(frozen=True)
class PipelineConfig:
    # input: PLY frames (frame_###.ply) from input_dir, or a synthetic scene when empty
    input_dir: str = ""
    scene: str = "sphere"
    frames: int = 1
    # grid / reconstruction
    resolution: int = 32
    domain_lo: float = -1.5
    domain_hi: float = 1.5
    sigma: float = 2.0
    iso: float = 0.0
    # anchoring; r_s = 0 means "mean face edge length of the current mesh"
    r_s: float = 0.0
    anchor_interval: int = 50
    matching_mode: str = "radius"
    # deformation
    deform_kind: str = "rigid"
    deform_init: str = "identity"
    # loss weights (see optim.TERM_UNITS for their scale)
    w_fit: float = 1.0
    w_lap: float = 1000.0
    w_anchor: float = 1.0
    w_cycle: float = 1.0
    # optimization
    steps: int = 100
    step_size: float = 1e4
    momentum: float = 0.9
    model_step_scale: float = 1e-3
    # sampling and evaluation
    n_points: int = 2000
    metric_samples: int = 1024
    emd_mode: str = "exact"
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        errors = validate_values(asdict(self))
        if errors:
            raise ConfigError("; ".join(errors), keys=sorted(k for k, _ in _bad_keys(asdict(self))))


def _pow2(v) -> bool:
    return v >= 8 and v & (v - 1) == 0


# key -> (type, check, description of the allowed range)
SCHEMA = {
    "input_dir": (str, lambda v: True, "path or empty for a synthetic scene"),
    "scene": (str, lambda v: v in SHAPES, f"one of {SHAPES}"),
    "frames": (int, lambda v: v >= 1, ">= 1"),
    "resolution": (int, _pow2, "power of two >= 8"),
    "domain_lo": (float, math.isfinite, "finite"),
    "domain_hi": (float, math.isfinite, "finite, > domain_lo"),
    "sigma": (float, lambda v: v >= 0, ">= 0 (grid cells)"),
    "iso": (float, math.isfinite, "finite"),
    "r_s": (float, lambda v: v >= 0, ">= 0 (0 = mean face edge length)"),
    "anchor_interval": (int, lambda v: v >= 1, ">= 1"),
    "matching_mode": (str, lambda v: v in MATCHING_MODES, f"one of {MATCHING_MODES}"),
    "deform_kind": (str, lambda v: v in KINDS, f"one of {KINDS}"),
    "deform_init": (str, lambda v: v == "identity", "identity"),
    "w_fit": (float, lambda v: v >= 0, ">= 0"),
    "w_lap": (float, lambda v: v >= 0, ">= 0"),
    "w_anchor": (float, lambda v: v >= 0, ">= 0"),
    "w_cycle": (float, lambda v: v >= 0, ">= 0"),
    "steps": (int, lambda v: v >= 1, ">= 1"),
    "step_size": (float, lambda v: v > 0, "> 0"),
    "momentum": (float, lambda v: 0 <= v < 1, "in [0, 1)"),
    "model_step_scale": (float, lambda v: v >= 0, ">= 0"),
    "n_points": (int, lambda v: v >= 100, ">= 100"),
    "metric_samples": (int, lambda v: v >= 1, ">= 1"),
    "emd_mode": (str, lambda v: v in EMD_MODES, f"one of {EMD_MODES}"),
    "seed": (int, lambda v: 0 <= v < 2**63, "in [0, 2^63)"),
    "output_dir": (str, lambda v: len(v) > 0, "nonempty path"),
}


def _bad_keys(values: dict):
    for key, value in values.items():
        if key not in SCHEMA:
            yield key, f"unknown key {key!r}"
            continue
        typ, check, allowed = SCHEMA[key]
        ok_type = isinstance(value, typ) and not isinstance(value, bool)
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            ok_type = True
        if not ok_type:
            yield key, f"{key} must be {typ.__name__}, got {type(value).__name__}"
        elif typ is float and not math.isfinite(value):
            yield key, f"{key} must be finite"
        elif not check(value):
            yield key, f"{key}={value!r} outside allowed range ({allowed})"
    if all(k in values for k in ("domain_lo", "domain_hi")):
        lo, hi = values["domain_lo"], values["domain_hi"]
        if isinstance(lo, (int, float)) and isinstance(hi, (int, float)) and not hi > lo:
            yield "domain_hi", "domain_hi must exceed domain_lo"


def validate_values(values: dict) -> list[str]:
    return [msg for _, msg in _bad_keys(values)]


def from_dict(values: dict) -> PipelineConfig:
    errors = list(_bad_keys(values))
    if errors:
        raise ConfigError("; ".join(m for _, m in errors), keys=sorted({k for k, _ in errors}))
    coerced = {k: float(v) if SCHEMA[k][0] is float else v for k, v in values.items()}
    return PipelineConfig(**coerced)


def loads(text: str) -> PipelineConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config is flat; tables are not allowed ({', '.join(nested)})", keys=nested)
    return from_dict(data)


def load(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFound(f"config file not found: {path}", path=str(path)) from exc
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}", path=str(path)) from exc
    return loads(text)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)  # shortest round-tripping form
    escaped = v.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def dumps(cfg: PipelineConfig) -> str:
    return "".join(f"{f.name} = {_toml_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def save(cfg: PipelineConfig, path) -> None:
    try:
        Path(path).write_text(dumps(cfg), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write config {path}: {exc.strerror}", path=str(path)) from exc
