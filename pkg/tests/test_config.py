import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgmesh.errors import ConfigError, FileNotFound
from dgmesh.pipeline.config import SCHEMA, PipelineConfig, dumps, from_dict, load, loads, save


def test_defaults_cover_schema():
    assert set(SCHEMA) == set(PipelineConfig.__dataclass_fields__)
    assert loads("") == PipelineConfig()


@given(
    st.fixed_dictionaries(
        {
            "resolution": st.sampled_from([8, 16, 32, 64]),
            "sigma": st.floats(0, 10, allow_nan=False),
            "w_lap": st.floats(0, 1e6, allow_nan=False),
            "anchor_interval": st.integers(1, 10_000),
            "scene": st.sampled_from(["sphere", "torus", "sphere_to_torus", "bending_bar"]),
            "output_dir": st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=20),
            "seed": st.integers(0, 2**63 - 1),
        }
    )
)
def test_round_trip(values):
    cfg = from_dict(values)
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


def test_file_round_trip(tmp_path):
    cfg = PipelineConfig(frames=3, step_size=0.1 + 0.2, iso=-1e-300)
    save(cfg, tmp_path / "c.toml")
    assert load(tmp_path / "c.toml") == cfg
    with pytest.raises(FileNotFound):
        load(tmp_path / "nope.toml")


@pytest.mark.parametrize(
    "text,key",
    [
        ("resolutoin = 32", "resolutoin"),
        ("resolution = 24", "resolution"),
        ("resolution = 32.0", "resolution"),
        ('steps = "10"', "steps"),
        ("w_lap = -1.0", "w_lap"),
        ("sigma = nan", "sigma"),
        ("matching_mode = 'greedy'", "matching_mode"),
        ("domain_lo = 2.0", "domain_hi"),
        ("[grid]\nresolution = 32", "grid"),
        ("frames = true", "frames"),
    ],
)
def test_rejections_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert key in info.value.details["keys"]


def test_invalid_toml():
    with pytest.raises(ConfigError):
        loads("steps = ")


def test_ints_accepted_for_floats():
    cfg = loads("w_lap = 100\nsigma = 0")
    assert cfg.w_lap == 100.0 and isinstance(cfg.w_lap, float) and math.copysign(1, cfg.sigma) == 1
