from pathlib import Path

import numpy as np
import pytest

from src.config import (
    Method,
    apply_overrides,
    build_env,
    build_pipeline,
    has_field,
    load_config,
    parse_config,
    parse_value,
    with_value,
)
from src.envs import ContinuousBandit, GridWorld
from src.errors import SchemaError
from src.perturb import GcmNoise
from src.pipeline import DrcPipeline, GdrcPipeline, SurrogatePipeline

EXPERIMENTS = Path(__file__).parent.parent / "experiments"


def _paths(error: SchemaError) -> list[str]:
    return [path for path, _ in error.problems]


def test_defaults():
    config = parse_config({})
    assert config.method == Method.RAW
    assert config.seeds == [0]
    assert config.learner == "q_learning"


def test_dotted_keys_load_from_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('method = "drc"\nnoise.kind = "gcm"\nnoise.n_r = 6\nnoise.omega = 0.3\ndisc.n_r = 6\ndisc.known_range = true\n')
    config = load_config(path, ["noise.omega=0.8", "seeds=[1, 2]"])
    assert config.noise.omega == 0.8
    assert config.seeds == [1, 2]


@pytest.mark.parametrize("path", sorted(EXPERIMENTS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_experiments_are_valid(path):
    config = load_config(path)
    assert config.name == path.stem


def test_missing_interval_count_names_the_field():
    with pytest.raises(SchemaError) as info:
        parse_config({"method": "drc", "disc": {"known_range": True}})
    assert "disc.n_r" in _paths(info.value)


def test_missing_range_names_the_field():
    with pytest.raises(SchemaError) as info:
        parse_config({"method": "sr", "disc": {"n_r": 4}})
    assert "disc.known_range" in _paths(info.value)


def test_known_matrix_method_needs_gcm_noise():
    with pytest.raises(SchemaError) as info:
        parse_config({"method": "sr_w", "noise": {"kind": "gaussian", "sigma": 0.1}})
    assert _paths(info.value) == ["noise.kind"]


def test_unknown_fields_are_reported_with_their_path():
    with pytest.raises(SchemaError) as info:
        parse_config({"noise": {"colour": "pink"}})
    assert "noise.colour" in _paths(info.value)


def test_malformed_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("method = \n")
    with pytest.raises(SchemaError):
        load_config(path)


def test_override_syntax():
    with pytest.raises(SchemaError):
        apply_overrides({}, ["noise.omega"])
    assert apply_overrides({}, ["agent.total_steps=10"]) == {"agent": {"total_steps": 10}}


def test_parse_value():
    assert parse_value("0.5") == 0.5
    assert parse_value("[2, 4]") == [2, 4]
    assert parse_value("true") is True
    assert parse_value("knee") == "knee"


def test_field_lookup_and_replacement():
    config = parse_config({"noise": {"kind": "gcm", "n_r": 4}})
    assert has_field(config, "noise.omega")
    assert not has_field(config, "noise.shade")
    assert with_value(config, "noise.omega", 0.25).noise.omega == 0.25
    with pytest.raises(SchemaError):
        with_value(config, "noise.shade", 1)


def test_gcm_noise_is_built_over_the_env_range():
    config = parse_config({"noise": {"kind": "gcm", "n_r": 6, "omega": 0.5}})
    env, noise = build_env(config, np.random.default_rng(0))
    assert isinstance(env, GridWorld)
    assert isinstance(noise, GcmNoise)
    assert (noise.disc.r_min, noise.disc.r_max, noise.disc.n) == (-1.0, 1.0, 6)
    assert env.noise is noise


def test_explicit_matrix_wins_over_uniform_channel():
    config = load_config(EXPERIMENTS / "bandit_policy_changed.toml")
    env, noise = build_env(config, np.random.default_rng(0))
    assert isinstance(env, ContinuousBandit)
    assert noise.matrix[1, 1] == 0.4


def test_pipelines_follow_the_method():
    base = {"noise": {"kind": "gcm", "n_r": 6, "omega": 0.5}, "disc": {"n_r": 6, "known_range": True}}
    kinds = {"sr_w": SurrogatePipeline, "drc": DrcPipeline, "gdrc": GdrcPipeline}
    for method, kind in kinds.items():
        config = parse_config({**base, "method": method})
        env, noise = build_env(config, np.random.default_rng(0))
        assert isinstance(build_pipeline(config, env, noise, np.random.default_rng(1)), kind)


def test_gdrc_without_range_estimates_it():
    config = parse_config({"method": "gdrc", "noise": {"kind": "gcm", "n_r": 6}})
    env, noise = build_env(config, np.random.default_rng(0))
    pipeline = build_pipeline(config, env, noise, np.random.default_rng(1))
    assert pipeline.ensemble.known_range is None
