"""Reward discretization, generalized confusion-matrix (GCM) perturbations
and the continuous noise models.

A GCM perturbation labels a reward by the interval it falls in, draws a
perturbed label from that label's row of a row-stochastic matrix and shifts
the reward by the signed distance between the two interval centers. The
shift is always an integer multiple of the interval width.
"""
import math
from enum import Enum
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ConfigurationError

ROW_SUM_TOLERANCE = 1e-9


class Discretization(BaseModel):
    """The range [r_min, r_max) split into n equal half-open intervals"""

    model_config = ConfigDict(frozen=True)

    r_min: float
    r_max: float
    n: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_range(self):
        if not self.r_min < self.r_max:
            raise ValueError(f"r_min ({self.r_min}) must be below r_max ({self.r_max})")
        return self

    @property
    def width(self) -> float:
        return (self.r_max - self.r_min) / self.n

    def label(self, r: float) -> int:
        return reward_label(self, r)[0]

    def labels(self, rewards) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized reward_label: returns (labels, clamped mask)"""
        raw = np.floor((np.asarray(rewards, dtype=float) - self.r_min) / self.width)
        clamped = (raw < 0) | (raw > self.n - 1)
        return np.clip(raw, 0, self.n - 1).astype(np.int64), clamped

    def centers(self) -> np.ndarray:
        return self.r_min + (np.arange(self.n) + 0.5) * self.width


def reward_label(disc: Discretization, r: float) -> tuple[int, bool]:
    """Label of r under disc and whether it had to be clamped into range.

    Values below r_min clamp to 0, values at or above r_max clamp to n-1.
    """
    raw = math.floor((r - disc.r_min) / disc.width)
    if raw < 0:
        return 0, True
    if raw > disc.n - 1:
        return disc.n - 1, True
    return raw, False


class ConfusionMatrix:
    """Row-stochastic n x n perturbation kernel, immutable after construction"""

    def __init__(self, rows):
        matrix = np.array(rows, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
            raise ConfigurationError(f"confusion matrix must be square and non-empty, got shape {matrix.shape}")
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            raise ConfigurationError("confusion matrix entries must lie in [0, 1]")
        sums = matrix.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ConfigurationError(f"row {bad} of the confusion matrix sums to {sums[bad]!r}, expected 1")
        matrix.setflags(write=False)
        self._matrix = matrix
        cumulative = np.cumsum(matrix, axis=1)
        cumulative[:, -1] = 1.0
        cumulative.setflags(write=False)
        self._cumulative = cumulative

    @property
    def n(self) -> int:
        return self._matrix.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def row(self, i: int) -> np.ndarray:
        return self._matrix[i]

    def __getitem__(self, index):
        return self._matrix[index]

    def __repr__(self):
        return f"ConfusionMatrix(n={self.n})"

    def draw(self, y: int, rng: np.random.Generator) -> int:
        u = rng.random()
        return min(int(np.searchsorted(self._cumulative[y], u, side="right")), self.n - 1)

    def draw_many(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(len(labels))
        drawn = (self._cumulative[labels] <= u[:, None]).sum(axis=1)
        return np.minimum(drawn, self.n - 1)


class NoiseKind(str, Enum):
    GCM = "gcm"
    GAUSSIAN = "gaussian"
    UNIFORM_REPLACE = "uniform_replace"
    RANGE_UNIFORM = "range_uniform"
    CLEAN = "clean"


class GcmNoise(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: Literal[NoiseKind.GCM] = NoiseKind.GCM
    disc: Discretization
    matrix: ConfusionMatrix

    @model_validator(mode="after")
    def _check_dimensions(self):
        if self.matrix.n != self.disc.n:
            raise ConfigurationError(
                f"confusion matrix is {self.matrix.n}x{self.matrix.n} but the discretization has {self.disc.n} intervals"
            )
        return self


class GaussianNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal[NoiseKind.GAUSSIAN] = NoiseKind.GAUSSIAN
    sigma: float = Field(ge=0.0)


class UniformReplaceNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal[NoiseKind.UNIFORM_REPLACE] = NoiseKind.UNIFORM_REPLACE
    omega: float = Field(ge=0.0, le=1.0)
    lo: float = -1.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.lo < self.hi:
            raise ValueError("lo must be below hi")
        return self


class RangeUniformNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal[NoiseKind.RANGE_UNIFORM] = NoiseKind.RANGE_UNIFORM
    omega: float = Field(ge=0.0, le=1.0)
    r_min: float
    r_max: float

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be below r_max")
        return self


class CleanNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal[NoiseKind.CLEAN] = NoiseKind.CLEAN


NoiseModel = GcmNoise | GaussianNoise | UniformReplaceNoise | RangeUniformNoise | CleanNoise


class PerturbedSample(NamedTuple):
    r_true: float
    r_tilde: float
    y: int | None = None
    y_tilde: int | None = None
    clamped: bool = False


def uniform_gcm(n_r: int, omega: float) -> ConfusionMatrix:
    """Symmetric channel: with probability omega the label is redrawn uniformly
    over all n_r intervals, the original one included."""
    if n_r < 1:
        raise ConfigurationError(f"n_r must be at least 1, got {n_r}")
    if not 0.0 <= omega <= 1.0:
        raise ConfigurationError(f"omega must lie in [0, 1], got {omega}")
    matrix = np.full((n_r, n_r), omega / n_r)
    np.fill_diagonal(matrix, 1.0 - omega + omega / n_r)
    return ConfusionMatrix(matrix)


def _check_dimensions(disc: Discretization, matrix: ConfusionMatrix):
    if matrix.n != disc.n:
        raise ConfigurationError(
            f"confusion matrix is {matrix.n}x{matrix.n} but the discretization has {disc.n} intervals"
        )


def gcm_perturb(disc: Discretization, matrix: ConfusionMatrix, r: float, rng: np.random.Generator) -> PerturbedSample:
    _check_dimensions(disc, matrix)
    y, clamped = reward_label(disc, r)
    y_tilde = matrix.draw(y, rng)
    return PerturbedSample(r, r + (y_tilde - y) * disc.width, y, y_tilde, clamped)


def gcm_perturb_many(
    disc: Discretization, matrix: ConfusionMatrix, rewards, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized gcm_perturb: returns (r_tilde, y, y_tilde)"""
    _check_dimensions(disc, matrix)
    rewards = np.asarray(rewards, dtype=float)
    y, _ = disc.labels(rewards)
    y_tilde = matrix.draw_many(y, rng)
    return rewards + (y_tilde - y) * disc.width, y, y_tilde


def continuous_perturb(model: NoiseModel, r: float, rng: np.random.Generator) -> float:
    match model:
        case GaussianNoise(sigma=sigma):
            return r + rng.normal(0.0, sigma)
        case UniformReplaceNoise(omega=omega, lo=lo, hi=hi):
            return rng.uniform(lo, hi) if rng.random() < omega else r
        case RangeUniformNoise(omega=omega, r_min=r_min, r_max=r_max):
            return rng.uniform(r_min, r_max) if rng.random() < omega else r
        case CleanNoise():
            return r
        case _:
            raise ConfigurationError(f"{type(model).__name__} is not a continuous noise model")


def continuous_perturb_many(model: NoiseModel, rewards, rng: np.random.Generator) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=float)
    match model:
        case GaussianNoise(sigma=sigma):
            return rewards + rng.normal(0.0, sigma, size=rewards.shape)
        case UniformReplaceNoise(omega=omega, lo=lo, hi=hi) | RangeUniformNoise(omega=omega, r_min=lo, r_max=hi):
            replaced = rng.random(rewards.shape) < omega
            return np.where(replaced, rng.uniform(lo, hi, size=rewards.shape), rewards)
        case CleanNoise():
            return rewards.copy()
        case _:
            raise ConfigurationError(f"{type(model).__name__} is not a continuous noise model")


def perturb(model: NoiseModel, r: float, rng: np.random.Generator) -> PerturbedSample:
    """Apply any noise model; labels are filled in only for GCM"""
    if isinstance(model, GcmNoise):
        return gcm_perturb(model.disc, model.matrix, r, rng)
    return PerturbedSample(r, continuous_perturb(model, r, rng))


def is_mode_preserving(matrix: ConfusionMatrix) -> bool:
    """True iff every row's diagonal entry is its strict maximum"""
    m = matrix.matrix
    for i in range(matrix.n):
        others = np.delete(m[i], i)
        if others.size and not m[i, i] > others.max():
            return False
    return True
