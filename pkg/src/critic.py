"""Reward critics: the distributional critic (tabular and network), the
correction step, and the RE (regression) and SR (surrogate reward) baselines.

Critics only ever see observed samples. A SampleBatch has no field for the
true reward, so no training path can read it.
"""
from typing import Literal, NamedTuple, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.errors import InversionError, UsageError
from src.network import MLP, Adam, cross_entropy_loss, mse_loss, softmax, train_minibatches
from src.perturb import ConfusionMatrix, Discretization, reward_label

PROBABILITY_FLOOR = 1e-12
MAX_CONDITION_NUMBER = 1e12
SOLVE_RESIDUAL_TOLERANCE = 1e-6


class CriticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["tabular", "network"] = "tabular"
    hidden_sizes: list[int] = Field(default_factory=lambda: [64, 64])
    learning_rate: float = Field(default=1e-3, gt=0.0)
    iterations: int = Field(default=40, ge=0)
    batch_size: int = Field(default=64, ge=1)
    key_grid: float = Field(default=1e-6, gt=0.0)
    history: bool = False


class SampleBatch:
    """Observed (state, action, perturbed reward) triples"""

    __slots__ = ("states", "actions", "rewards")

    def __init__(self, states, actions, rewards):
        self.states = np.asarray(states)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=float)
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise UsageError("states, actions and rewards must have the same length")

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def concat(cls, batches: list["SampleBatch"]) -> "SampleBatch":
        return cls(
            np.concatenate([b.states for b in batches]),
            np.concatenate([b.actions for b in batches]),
            np.concatenate([b.rewards for b in batches]),
        )


class Encoder(Protocol):
    n_features: int

    def encode(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray: ...

    def keys(self, states: np.ndarray, actions: np.ndarray, grid: float) -> np.ndarray: ...


class OneHotEncoder:
    """Discrete states and actions, both one-hot"""

    def __init__(self, n_states: int, n_actions: int):
        self.n_states = n_states
        self.n_actions = n_actions
        self.n_features = n_states + n_actions

    def encode(self, states, actions):
        states = np.asarray(states, dtype=np.int64)
        rows = np.arange(len(states))
        X = np.zeros((len(states), self.n_features))
        X[rows, states] = 1.0
        X[rows, self.n_states + np.asarray(actions, dtype=np.int64)] = 1.0
        return X

    def keys(self, states, actions, grid):
        return np.column_stack([np.asarray(states, dtype=np.int64), np.asarray(actions, dtype=np.int64)])


class ContextEncoder:
    """Real-valued contexts scaled from [low, high) to [-1, 1), action one-hot"""

    def __init__(self, context_dim: int, n_actions: int, low: float = 0.0, high: float = 1.0):
        self.context_dim = context_dim
        self.n_actions = n_actions
        self.low = low
        self.high = high
        self.n_features = context_dim + n_actions

    def _contexts(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return states.reshape(len(states), self.context_dim)

    def encode(self, states, actions):
        scaled = 2.0 * (self._contexts(states) - self.low) / (self.high - self.low) - 1.0
        onehot = np.zeros((len(scaled), self.n_actions))
        onehot[np.arange(len(scaled)), np.asarray(actions, dtype=np.int64)] = 1.0
        return np.hstack([scaled, onehot])

    def keys(self, states, actions, grid):
        snapped = np.round(self._contexts(states) / grid).astype(np.int64)
        return np.column_stack([snapped, np.asarray(actions, dtype=np.int64)])


class TabularCritic:
    """Empirical observed-label counts per exactly-repeating (state, action) key"""

    def __init__(self, n_outputs: int, encoder: Encoder, key_grid: float = 1e-6):
        self.n_outputs = n_outputs
        self.encoder = encoder
        self.key_grid = key_grid
        self.table: dict[tuple, np.ndarray] = {}

    def _grouped(self, states, actions) -> tuple[list[tuple], np.ndarray]:
        keys = self.encoder.keys(states, actions, self.key_grid)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        return [tuple(row) for row in unique.tolist()], inverse.reshape(-1)

    def update(self, batch: SampleBatch, labels: np.ndarray):
        if len(batch) == 0:
            return
        keys, inverse = self._grouped(batch.states, batch.actions)
        counts = np.zeros((len(keys), self.n_outputs), dtype=np.int64)
        np.add.at(counts, (inverse, np.asarray(labels, dtype=np.int64)), 1)
        for key, row in zip(keys, counts):
            if key in self.table:
                self.table[key] += row
            else:
                self.table[key] = row

    def predict_distribution(self, states, actions) -> tuple[np.ndarray, np.ndarray]:
        """Normalized counts; unseen keys get the uniform vector and a True flag"""
        keys, inverse = self._grouped(states, actions)
        probs = np.full((len(keys), self.n_outputs), 1.0 / self.n_outputs)
        unseen = np.ones(len(keys), dtype=bool)
        for i, key in enumerate(keys):
            counts = self.table.get(key)
            if counts is not None and counts.sum() > 0:
                probs[i] = counts / counts.sum()
                unseen[i] = False
        return probs[inverse], unseen[inverse]

    def fit(self, batch: SampleBatch, labels: np.ndarray) -> float:
        self.update(batch, labels)
        return mean_cross_entropy(self, batch, labels)


def tabular_update(critic: TabularCritic, batch: SampleBatch, labels: np.ndarray) -> TabularCritic:
    critic.update(batch, labels)
    return critic


class NetworkCritic:
    """(state, action) -> n_outputs logits, trained with cross-entropy"""

    def __init__(self, n_outputs: int, encoder: Encoder, config: CriticConfig, rng: np.random.Generator):
        self.n_outputs = n_outputs
        self.encoder = encoder
        self.config = config
        self.rng = rng
        self.model = MLP([encoder.n_features, *config.hidden_sizes, n_outputs], rng)
        self.optimizer = Adam(self.model.params, learning_rate=config.learning_rate)

    def train_epoch(self, batch: SampleBatch, labels: np.ndarray) -> float:
        if len(batch) == 0:
            raise UsageError("cannot train a critic on an empty batch")
        X = self.encoder.encode(batch.states, batch.actions)
        return train_minibatches(
            self.model,
            self.optimizer,
            X,
            np.asarray(labels, dtype=np.int64),
            cross_entropy_loss,
            self.config.iterations,
            self.config.batch_size,
            self.rng,
        )

    fit = train_epoch

    def predict_distribution(self, states, actions) -> tuple[np.ndarray, np.ndarray]:
        probs = softmax(self.model(self.encoder.encode(states, actions)))
        return probs, np.zeros(len(probs), dtype=bool)


DistributionalCritic = TabularCritic | NetworkCritic


def make_distributional_critic(
    n_outputs: int, encoder: Encoder, config: CriticConfig, rng: np.random.Generator
) -> DistributionalCritic:
    if config.kind == "tabular":
        return TabularCritic(n_outputs, encoder, config.key_grid)
    return NetworkCritic(n_outputs, encoder, config, rng)


def correct_reward(disc_o: Discretization, r_tilde: float, dist) -> float:
    """Shift r_tilde by whole intervals so its label becomes the critic's mode"""
    dist = np.asarray(dist)
    if dist.shape != (disc_o.n,):
        raise UsageError(f"distribution has shape {dist.shape}, expected ({disc_o.n},)")
    y_tilde, _ = reward_label(disc_o, r_tilde)
    y_hat = int(np.argmax(dist))
    return r_tilde + disc_o.width * (y_hat - y_tilde)


def correct_rewards(disc_o: Discretization, rewards: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Vectorized correct_reward"""
    if probs.shape != (len(rewards), disc_o.n):
        raise UsageError(f"distributions have shape {probs.shape}, expected ({len(rewards)}, {disc_o.n})")
    y_tilde, _ = disc_o.labels(rewards)
    y_hat = np.argmax(probs, axis=1)
    return rewards + disc_o.width * (y_hat - y_tilde)


def cross_entropy_of(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)]
    return float(-np.mean(np.log(np.maximum(picked, PROBABILITY_FLOOR))))


def mean_cross_entropy(critic: DistributionalCritic, batch: SampleBatch, labels: np.ndarray) -> float:
    if len(batch) == 0:
        raise UsageError("cross-entropy of an empty batch is undefined")
    probs, _ = critic.predict_distribution(batch.states, batch.actions)
    return cross_entropy_of(probs, labels)


class RegressionCritic:
    """RE baseline: regresses the observed reward on (state, action)"""

    def __init__(self, encoder: Encoder, config: CriticConfig, rng: np.random.Generator):
        self.encoder = encoder
        self.config = config
        self.rng = rng
        self.model = MLP([encoder.n_features, *config.hidden_sizes, 1], rng)
        self.optimizer = Adam(self.model.params, learning_rate=config.learning_rate)

    def train_epoch(self, batch: SampleBatch) -> float:
        if len(batch) == 0:
            raise UsageError("cannot train a critic on an empty batch")
        X = self.encoder.encode(batch.states, batch.actions)
        return train_minibatches(
            self.model,
            self.optimizer,
            X,
            batch.rewards.reshape(-1, 1),
            mse_loss,
            self.config.iterations,
            self.config.batch_size,
            self.rng,
        )

    def predict(self, states, actions) -> np.ndarray:
        return self.model(self.encoder.encode(states, actions))[:, 0]


def re_train(critic: RegressionCritic, batch: SampleBatch) -> float:
    return critic.train_epoch(batch)


def re_predict(critic: RegressionCritic, states, actions) -> np.ndarray:
    return critic.predict(states, actions)


class SurrogateTable(NamedTuple):
    matrix: ConfusionMatrix
    disc: Discretization
    reward_values: np.ndarray
    r_hat: np.ndarray


def surrogate_rewards(matrix: ConfusionMatrix, reward_values, disc: Discretization) -> SurrogateTable:
    """Solve C . r_hat = reward_values so that E[r_hat[y~] | y] = reward_values[y]"""
    values = np.asarray(reward_values, dtype=float)
    C = matrix.matrix
    condition = np.linalg.cond(C)
    if not np.isfinite(condition) or condition > MAX_CONDITION_NUMBER:
        raise InversionError(f"confusion matrix is singular or ill-conditioned (cond={condition:.3g})")
    try:
        r_hat = np.linalg.solve(C, values)
    except np.linalg.LinAlgError as e:
        raise InversionError(f"confusion matrix is singular: {e}") from e
    residual = float(np.max(np.abs(C @ r_hat - values)))
    if residual > SOLVE_RESIDUAL_TOLERANCE:
        raise InversionError(f"surrogate solve residual {residual:.3g} exceeds {SOLVE_RESIDUAL_TOLERANCE}")
    return SurrogateTable(matrix, disc, values, r_hat)


def sr_correct(table: SurrogateTable, r_tilde: float) -> float:
    return float(table.r_hat[reward_label(table.disc, r_tilde)[0]])


def sr_correct_many(table: SurrogateTable, rewards: np.ndarray) -> np.ndarray:
    labels, _ = table.disc.labels(rewards)
    return table.r_hat[labels]


def estimate_confusion(critic: TabularCritic) -> ConfusionMatrix:
    """Majority-vote estimate of C: each key's most frequent observed label is
    taken as its true label and its counts are added to that row."""
    n = critic.n_outputs
    rows = np.zeros((n, n))
    for counts in critic.table.values():
        if counts.sum() > 0:
            rows[int(np.argmax(counts))] += counts
    totals = rows.sum(axis=1)
    empty = totals == 0
    rows[empty] = np.eye(n)[empty]
    totals[empty] = 1.0
    return ConfusionMatrix(rows / totals[:, None])
