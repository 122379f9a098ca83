"""Experiment configuration: flat dotted-key TOML validated by pydantic.

    method = "drc"
    seeds = [0, 1, 2]
    noise.kind = "gcm"
    noise.n_r = 6
    noise.omega = 0.7
    disc.n_r = 6
    disc.known_range = true

Every validation failure is reported as a SchemaError listing dotted field
paths, including the per-method information requirements (which methods
need the confusion matrix, the interval count or the reward range).
"""
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.agent import AgentConfig
from src.critic import CriticConfig, RegressionCritic, TabularCritic, make_distributional_critic, surrogate_rewards
from src.envs import ContinuousBanditSpec, EnvSpec, Environment, GridWorldSpec, make_env
from src.errors import ConfigurationError, SchemaError
from src.gdrc import CriticEnsemble, GdrcConfig
from src.perturb import (
    CleanNoise,
    ConfusionMatrix,
    Discretization,
    GaussianNoise,
    GcmNoise,
    NoiseKind,
    NoiseModel,
    RangeUniformNoise,
    UniformReplaceNoise,
    uniform_gcm,
)
from src.pipeline import (
    DrcPipeline,
    EstimatedSurrogatePipeline,
    GdrcPipeline,
    RawPipeline,
    RegressionPipeline,
    RewardPipeline,
    SurrogatePipeline,
)


class Method(str, Enum):
    RAW = "raw"
    RE = "re"
    SR_W = "sr_w"
    SR = "sr"
    DRC = "drc"
    GDRC = "gdrc"


class NoiseSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: NoiseKind = NoiseKind.CLEAN
    omega: float = Field(default=0.0, ge=0.0, le=1.0)
    sigma: float = Field(default=0.0, ge=0.0)
    n_r: int | None = Field(default=None, ge=1)
    r_min: float | None = None
    r_max: float | None = None
    lo: float = -1.0
    hi: float = 1.0
    matrix: list[list[float]] | None = None


class DiscSection(BaseModel):
    """What the correction method is told about the perturbation"""

    model_config = ConfigDict(extra="forbid")

    n_r: int | None = Field(default=None, ge=1)
    n_o: int | None = Field(default=None, ge=1)
    known_range: bool = False
    r_min: float | None = None
    r_max: float | None = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    method: Method = Method.RAW
    seeds: list[int] = Field(default_factory=lambda: [0])
    output: str | None = None
    env: EnvSpec = Field(default_factory=GridWorldSpec)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    disc: DiscSection = Field(default_factory=DiscSection)
    critic: CriticConfig = Field(default_factory=CriticConfig)
    gdrc: GdrcConfig = Field(default_factory=GdrcConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)

    @property
    def learner(self) -> str:
        return "bandit_pg" if isinstance(self.env, ContinuousBanditSpec) else "q_learning"


def _has_range(disc: DiscSection) -> bool:
    return disc.known_range or (disc.r_min is not None and disc.r_max is not None)


def method_requirements(config: ExperimentConfig) -> list[tuple[str, str]]:
    """Missing information for the configured method as (path, message) pairs"""
    problems = []
    method = config.method.value
    if config.method == Method.SR_W and config.noise.kind != NoiseKind.GCM:
        problems.append(("noise.kind", f"method '{method}' needs a known GCM confusion matrix"))
    if config.method in (Method.SR, Method.DRC):
        if config.disc.n_r is None and config.disc.n_o is None:
            problems.append(("disc.n_r", f"required for method '{method}'"))
        if not _has_range(config.disc):
            problems.append(("disc.known_range", f"required for method '{method}' unless disc.r_min and disc.r_max are set"))
    if config.noise.kind == NoiseKind.GCM and config.noise.n_r is None and config.noise.matrix is None:
        problems.append(("noise.n_r", "required for GCM noise without an explicit noise.matrix"))
    if (config.disc.r_min is None) != (config.disc.r_max is None):
        problems.append(("disc.r_min", "disc.r_min and disc.r_max must be given together"))
    if not config.seeds:
        problems.append(("seeds", "at least one seed is required"))
    return problems


def parse_config(data: dict[str, Any]) -> ExperimentConfig:
    if isinstance(data.get("env"), dict):
        data["env"].setdefault("kind", "gridworld")
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise SchemaError(
            [(".".join(str(part) for part in err["loc"]) or "<root>", err["msg"]) for err in e.errors()]
        ) from e
    problems = method_requirements(config)
    if problems:
        raise SchemaError(problems)
    return config


def parse_value(text: str) -> Any:
    """A TOML scalar or array; anything unparsable is taken as a bare string"""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def set_path(data: dict[str, Any], path: str, value: Any):
    *sections, key = path.split(".")
    node = data
    for section in sections:
        child = node.setdefault(section, {})
        if not isinstance(child, dict):
            raise SchemaError([(path, f"'{section}' is not a section")])
        node = child
    node[key] = value


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for item in overrides:
        path, sep, value = item.partition("=")
        if not sep or not path.strip():
            raise SchemaError([(item, "override must look like section.key=value")])
        set_path(data, path.strip(), parse_value(value.strip()))
    return data


def load_config(path: Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise SchemaError([(str(path), f"not a valid configuration file: {e}")]) from e
        except OSError as e:
            raise ConfigurationError(f"cannot read {path}: {e}") from e
    return parse_config(apply_overrides(data, overrides or []))


def has_field(config: ExperimentConfig, path: str) -> bool:
    node: Any = config.model_dump(mode="json")
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return False
        node = node[part]
    return True


def with_value(config: ExperimentConfig, path: str, value: Any) -> ExperimentConfig:
    if not has_field(config, path):
        raise SchemaError([(path, "unknown configuration field")])
    data = config.model_dump(mode="json")
    set_path(data, path, value)
    return parse_config(data)


def build_noise(section: NoiseSection, env: Environment) -> NoiseModel:
    lo, hi = env.reward_range()
    r_min = section.r_min if section.r_min is not None else lo
    r_max = section.r_max if section.r_max is not None else hi
    match section.kind:
        case NoiseKind.GCM:
            if section.matrix is not None:
                matrix = ConfusionMatrix(section.matrix)
            else:
                matrix = uniform_gcm(section.n_r, section.omega)
            disc = Discretization(r_min=r_min, r_max=r_max, n=section.n_r or matrix.n)
            return GcmNoise(disc=disc, matrix=matrix)
        case NoiseKind.GAUSSIAN:
            return GaussianNoise(sigma=section.sigma)
        case NoiseKind.UNIFORM_REPLACE:
            return UniformReplaceNoise(omega=section.omega, lo=section.lo, hi=section.hi)
        case NoiseKind.RANGE_UNIFORM:
            return RangeUniformNoise(omega=section.omega, r_min=r_min, r_max=r_max)
        case _:
            return CleanNoise()


def build_env(config: ExperimentConfig, noise_rng: np.random.Generator) -> tuple[Environment, NoiseModel]:
    """The environment wired to its noise model"""
    env = make_env(config.env, None, noise_rng)
    noise = build_noise(config.noise, env)
    env.noise = noise
    return env, noise


def correction_range(config: ExperimentConfig, env: Environment) -> tuple[float, float]:
    if config.disc.r_min is not None:
        return config.disc.r_min, config.disc.r_max
    return env.reward_range()


def build_pipeline(
    config: ExperimentConfig, env: Environment, noise: NoiseModel, rng: np.random.Generator
) -> RewardPipeline:
    encoder = env.encoder()
    history = config.critic.history
    match config.method:
        case Method.RAW:
            return RawPipeline()
        case Method.RE:
            return RegressionPipeline(RegressionCritic(encoder, config.critic, rng), history)
        case Method.SR_W:
            return SurrogatePipeline(surrogate_rewards(noise.matrix, noise.disc.centers(), noise.disc))
        case Method.SR:
            r_min, r_max = correction_range(config, env)
            disc = Discretization(r_min=r_min, r_max=r_max, n=config.disc.n_r or config.disc.n_o)
            return EstimatedSurrogatePipeline(TabularCritic(disc.n, encoder, config.critic.key_grid), disc)
        case Method.DRC:
            r_min, r_max = correction_range(config, env)
            disc = Discretization(r_min=r_min, r_max=r_max, n=config.disc.n_o or config.disc.n_r)
            return DrcPipeline(make_distributional_critic(disc.n, encoder, config.critic, rng), disc, history)
        case Method.GDRC:
            known = correction_range(config, env) if _has_range(config.disc) else None
            return GdrcPipeline(CriticEnsemble.build(encoder, config.critic, config.gdrc, rng, known), history)
    raise ConfigurationError(f"unknown method {config.method}")
