"""Desk-scale environments with exactly known reward structure.

Every step produces a Transition whose observed reward comes from the
configured noise model. The true reward travels in a hidden lane that only
evaluation code opens (`Transition.reveal_true`); reads made while a critic
scope is active are counted as leaks.
"""
from contextlib import contextmanager
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.critic import ContextEncoder, OneHotEncoder
from src.errors import ConfigurationError, UsageError
from src.perturb import CleanNoise, Discretization, NoiseModel, perturb

# up, right, down, left as (row, col) offsets
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
OPEN_END = 1e-9


def _default_labels() -> list[list[int]]:
    # goal at (4, 4); positive cells only border label 0 and 1 cells, so every loop loses reward
    return [
        [2, 2, 2, 2, 2],
        [0, 0, 0, 0, 2],
        [1, 0, 4, 0, 2],
        [1, 3, 0, 1, 2],
        [0, 1, 0, 1, 5],
    ]


def _default_rewards() -> list[list[float]]:
    centers = Discretization(r_min=-1.0, r_max=1.0, n=6).centers()
    return [[float(centers[label]) for label in row] for row in _default_labels()]


class HiddenLaneAudit:
    """Counts true-reward reads, and those made inside a critic scope"""

    def __init__(self):
        self.reads = 0
        self.leaks = 0
        self._depth = 0

    @contextmanager
    def critic_scope(self):
        self._depth += 1
        try:
            yield self
        finally:
            self._depth -= 1

    def record(self):
        self.reads += 1
        if self._depth:
            self.leaks += 1


HIDDEN_LANE = HiddenLaneAudit()


def critic_scope():
    return HIDDEN_LANE.critic_scope()


class Transition:
    __slots__ = ("state", "action", "next_state", "r_observed", "done", "clamped", "_r_true")

    def __init__(self, state, action: int, next_state, r_true: float, r_observed: float, done: bool, clamped=False):
        self.state = state
        self.action = action
        self.next_state = next_state
        self.r_observed = r_observed
        self.done = done
        self.clamped = clamped
        self._r_true = r_true

    def reveal_true(self) -> float:
        """Evaluation only"""
        HIDDEN_LANE.record()
        return self._r_true

    def __repr__(self):
        return f"Transition(state={self.state!r}, action={self.action}, r_observed={self.r_observed:.6g}, done={self.done})"


def _open_range(lo: float, hi: float) -> tuple[float, float]:
    return lo, hi + OPEN_END * max(1.0, abs(hi))


class GridWorldSpec(BaseModel):
    """Rows are indexed from the top; cells are (row, col)"""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["gridworld"] = "gridworld"
    width: int = Field(default=5, ge=1)
    height: int = Field(default=5, ge=1)
    rewards: list[list[float]] = Field(default_factory=_default_rewards)
    terminals: list[tuple[int, int]] = Field(default_factory=lambda: [(4, 4)])
    start: tuple[int, int] = (0, 0)
    step_limit: int = Field(default=50, ge=1)
    slip: float = Field(default=0.0, ge=0.0, le=1.0)
    reward_min: float | None = -1.0
    reward_max: float | None = 1.0

    @model_validator(mode="after")
    def _check_layout(self):
        if len(self.rewards) != self.height or any(len(row) != self.width for row in self.rewards):
            raise ValueError(f"reward table must be {self.height}x{self.width}")
        if not self.terminals:
            raise ValueError("at least one terminal cell is required")
        for row, col in [*self.terminals, self.start]:
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise ValueError(f"cell ({row}, {col}) is outside the grid")
        if self.start in self.terminals:
            raise ValueError("start cell cannot be terminal")
        if (self.reward_min is None) != (self.reward_max is None):
            raise ValueError("reward_min and reward_max must be given together")
        if self.reward_min is not None:
            values = np.asarray(self.rewards)
            if not (self.reward_min <= values.min() and values.max() < self.reward_max):
                raise ValueError(f"rewards must lie in [{self.reward_min}, {self.reward_max})")
        return self


class ContinuousBanditSpec(BaseModel):
    """r(s, a) = base[a] + scale * (1 + cos(pi * s . w[a])) / 2 with s ~ U[0, 1)^d"""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["bandit"] = "bandit"
    context_dim: int = Field(default=2, ge=0)
    n_arms: int = Field(default=4, ge=1)
    weights: list[list[float]] = Field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0], [0.45, 0.45], [0.7, 0.2]])
    base: list[float] | None = None
    scale: float = Field(default=1.0, ge=0.0)
    reward_min: float | None = None
    reward_max: float | None = None

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.weights) != self.n_arms or any(len(w) != self.context_dim for w in self.weights):
            raise ValueError(f"weights must be {self.n_arms}x{self.context_dim}")
        if self.base is not None and len(self.base) != self.n_arms:
            raise ValueError(f"base must have {self.n_arms} entries")
        if (self.reward_min is None) != (self.reward_max is None):
            raise ValueError("reward_min and reward_max must be given together")
        return self


EnvSpec = Annotated[GridWorldSpec | ContinuousBanditSpec, Field(discriminator="kind")]


class GridWorld:
    def __init__(self, spec: GridWorldSpec, noise: NoiseModel | None = None, noise_rng: np.random.Generator | None = None):
        self.spec = spec
        self.noise = noise or CleanNoise()
        self.noise_rng = noise_rng if noise_rng is not None else np.random.default_rng(0)
        self.n_states = spec.width * spec.height
        self.n_actions = len(MOVES)
        self.table = np.asarray(spec.rewards, dtype=float).reshape(-1)
        self.terminal = np.zeros(self.n_states, dtype=bool)
        for row, col in spec.terminals:
            self.terminal[self.index(row, col)] = True
        self.clamped = 0
        self._steps = 0

    def index(self, row: int, col: int) -> int:
        return row * self.spec.width + col

    def cell(self, state: int) -> tuple[int, int]:
        return divmod(int(state), self.spec.width)

    @property
    def start_state(self) -> int:
        return self.index(*self.spec.start)

    def reward_range(self) -> tuple[float, float]:
        if self.spec.reward_min is not None:
            return self.spec.reward_min, self.spec.reward_max
        return _open_range(float(self.table.min()), float(self.table.max()))

    def encoder(self) -> OneHotEncoder:
        return OneHotEncoder(self.n_states, self.n_actions)

    def move(self, state: int, action: int) -> int:
        row, col = self.cell(state)
        d_row, d_col = MOVES[action]
        row, col = row + d_row, col + d_col
        if not (0 <= row < self.spec.height and 0 <= col < self.spec.width):
            return int(state)
        return self.index(row, col)

    def transitions(self, state: int, action: int) -> list[tuple[float, int, float, bool]]:
        """(probability, next state, true reward, terminal) outcomes of one step"""
        outcomes: dict[int, float] = {}
        slip = self.spec.slip
        for a in range(self.n_actions):
            p = slip / self.n_actions + (1.0 - slip if a == action else 0.0)
            if p > 0.0:
                nxt = self.move(state, a)
                outcomes[nxt] = outcomes.get(nxt, 0.0) + p
        return [(p, nxt, float(self.table[nxt]), bool(self.terminal[nxt])) for nxt, p in outcomes.items()]

    def reset(self, rng: np.random.Generator | None = None) -> int:
        self._steps = 0
        return self.start_state

    def _next_state(self, state: int, action: int, rng: np.random.Generator) -> int:
        if not 0 <= action < self.n_actions:
            raise UsageError(f"invalid action {action}, expected 0..{self.n_actions - 1}")
        if not 0 <= state < self.n_states or self.terminal[state]:
            raise UsageError(f"cannot act from state {state}")
        if self.spec.slip > 0.0 and rng.random() < self.spec.slip:
            action = int(rng.integers(self.n_actions))
        return self.move(state, action)

    def evaluation_step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        """Noise-free step for evaluation rollouts: (next state, true reward, terminal)"""
        nxt = self._next_state(state, action, rng)
        HIDDEN_LANE.record()
        return nxt, float(self.table[nxt]), bool(self.terminal[nxt])

    def step(self, state: int, action: int, rng: np.random.Generator) -> Transition:
        nxt = self._next_state(state, action, rng)
        self._steps += 1
        r_true = float(self.table[nxt])
        sample = perturb(self.noise, r_true, self.noise_rng)
        self.clamped += int(sample.clamped)
        done = bool(self.terminal[nxt]) or self._steps >= self.spec.step_limit
        return Transition(state, action, nxt, r_true, sample.r_tilde, done, sample.clamped)


class ContinuousBandit:
    def __init__(
        self, spec: ContinuousBanditSpec, noise: NoiseModel | None = None, noise_rng: np.random.Generator | None = None
    ):
        self.spec = spec
        self.noise = noise or CleanNoise()
        self.noise_rng = noise_rng if noise_rng is not None else np.random.default_rng(0)
        self.n_actions = spec.n_arms
        self.weights = np.asarray(spec.weights, dtype=float).reshape(spec.n_arms, spec.context_dim)
        self.base = np.zeros(spec.n_arms) if spec.base is None else np.asarray(spec.base, dtype=float)
        self.clamped = 0

    def reward_range(self) -> tuple[float, float]:
        if self.spec.reward_min is not None:
            return self.spec.reward_min, self.spec.reward_max
        return _open_range(float(self.base.min()), float(self.base.max() + self.spec.scale))

    def encoder(self) -> ContextEncoder:
        return ContextEncoder(self.spec.context_dim, self.n_actions)

    def mean_rewards(self, context) -> np.ndarray:
        """Closed-form reward of every arm; evaluation only"""
        HIDDEN_LANE.record()
        s = np.asarray(context, dtype=float).reshape(self.spec.context_dim)
        return self.base + self.spec.scale * (1.0 + np.cos(np.pi * (self.weights @ s))) / 2.0

    def true_reward(self, context, action: int) -> float:
        return float(self.mean_rewards(context)[action])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.random(self.spec.context_dim)

    def step(self, state, action: int, rng: np.random.Generator | None = None) -> Transition:
        if not 0 <= action < self.n_actions:
            raise UsageError(f"invalid arm {action}, expected 0..{self.n_actions - 1}")
        s = np.asarray(state, dtype=float).reshape(self.spec.context_dim)
        r_true = float(self.base[action] + self.spec.scale * (1.0 + np.cos(np.pi * (self.weights[action] @ s))) / 2.0)
        sample = perturb(self.noise, r_true, self.noise_rng)
        self.clamped += int(sample.clamped)
        return Transition(s, action, None, r_true, sample.r_tilde, True, sample.clamped)


Environment = GridWorld | ContinuousBandit


def make_env(spec: GridWorldSpec | ContinuousBanditSpec, noise: NoiseModel | None, noise_rng: np.random.Generator):
    match spec:
        case GridWorldSpec():
            return GridWorld(spec, noise, noise_rng)
        case ContinuousBanditSpec():
            return ContinuousBandit(spec, noise, noise_rng)
        case _:
            raise ConfigurationError(f"unknown environment spec {type(spec).__name__}")


def reset(env: Environment, rng: np.random.Generator):
    return env.reset(rng)


def step(env: Environment, state, action: int, rng: np.random.Generator) -> Transition:
    return env.step(state, action, rng)


def reward_range(env: Environment) -> tuple[float, float]:
    return env.reward_range()
