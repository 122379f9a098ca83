"""General DRC: an ensemble of distributional critics over candidate interval
counts, differential cross-entropy voting with a discounted tally, and the
streaming estimate of the reward range.

When neither the number of perturbation intervals nor the reward range is
known, each candidate count n gets its own critic. Training cross-entropy
grows with n until n reaches the true count and then flattens; the vote
picks the candidate where that growth stops.
"""
from enum import Enum
from typing import NamedTuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.critic import (
    CriticConfig,
    DistributionalCritic,
    Encoder,
    SampleBatch,
    correct_rewards,
    make_distributional_critic,
)
from src.errors import UsageError
from src.perturb import Discretization
from src.sketch import PercentileSketch

DEFAULT_CANDIDATES = [2, 4, 6, 8, 10, 12, 16, 20, 24, 32]
RANGE_PAD = 1e-6


class VotingRule(str, Enum):
    # vote for n' whenever dH_n > dH_n'
    LITERAL = "literal"
    # vote for the candidate just before the first dH below tau * max(dH)
    KNEE = "knee"


class GdrcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    candidates: list[int] = Field(default_factory=lambda: list(DEFAULT_CANDIDATES))
    vote_discount: float = Field(default=0.9, gt=0.0, le=1.0)
    vote_deadline: int | None = Field(default=None, ge=1)
    rule: VotingRule = VotingRule.LITERAL
    knee_tau: float = Field(default=0.2, gt=0.0, lt=1.0)
    lower_quantile: float = Field(default=0.05, ge=0.0, le=1.0)
    upper_quantile: float = Field(default=0.95, ge=0.0, le=1.0)
    relative_accuracy: float = Field(default=0.01, gt=0.0, lt=1.0)

    @field_validator("candidates")
    @classmethod
    def _strictly_increasing(cls, candidates: list[int]) -> list[int]:
        if not candidates:
            raise ValueError("at least one candidate is required")
        if any(n < 1 for n in candidates):
            raise ValueError("candidates must be positive")
        if any(b <= a for a, b in zip(candidates, candidates[1:])):
            raise ValueError("candidates must be strictly increasing")
        return candidates


class VoteRecord(NamedTuple):
    epoch: int
    H_values: dict[int, float]
    dH_values: dict[int, float]
    voted_for: list[int]
    tally: dict[int, float]
    winner: int
    r_emin: float
    r_emax: float
    clamped: int


def differential_cross_entropy(candidates: list[int], H: list[float]) -> dict[int, float]:
    """dH_n = H_n - H_n' where n' is the previous candidate; the smallest has none"""
    return {candidates[i]: H[i] - H[i - 1] for i in range(1, len(candidates))}


def cast_votes(
    candidates: list[int], H: list[float], rule: VotingRule = VotingRule.LITERAL, tau: float = 0.2
) -> list[int]:
    if len(H) != len(candidates):
        raise UsageError(f"{len(H)} cross-entropy values for {len(candidates)} candidates")
    dH = differential_cross_entropy(candidates, H)
    if rule == VotingRule.LITERAL:
        return [candidates[i - 1] for i in range(2, len(candidates)) if dH[candidates[i]] > dH[candidates[i - 1]]]
    if not dH:
        return []
    peak = max(dH.values())
    if peak <= 0.0:
        return []
    for i in range(1, len(candidates)):
        if dH[candidates[i]] < tau * peak:
            return [candidates[i - 1]]
    return []


def estimate_range(sketch: PercentileSketch, lower: float = 0.05, upper: float = 0.95) -> tuple[float, float]:
    """Percentile range from the sketch, padded apart if it collapses to a point"""
    r_emin, r_emax = sketch.quantile(lower), sketch.quantile(upper)
    if r_emax <= r_emin:
        pad = max(abs(r_emin), 1.0) * RANGE_PAD
        r_emin, r_emax = r_emin - pad, r_emax + pad
    return r_emin, r_emax


class CriticEnsemble:
    """One distributional critic per candidate count plus the vote tally"""

    def __init__(
        self,
        critics: dict[int, DistributionalCritic],
        config: GdrcConfig,
        known_range: tuple[float, float] | None = None,
    ):
        if sorted(critics) != config.candidates:
            raise UsageError("critics must be keyed by exactly the configured candidates")
        self.config = config
        self.candidates = list(config.candidates)
        self.critics = critics
        self.tally = {n: 0.0 for n in self.candidates}
        self.epoch = 0
        self.known_range = known_range
        self.sketch = PercentileSketch(config.relative_accuracy)
        self.range: tuple[float, float] | None = known_range
        self.frozen_winner: int | None = None
        self.history: list[VoteRecord] = []

    @classmethod
    def build(
        cls,
        encoder: Encoder,
        critic_config: CriticConfig,
        config: GdrcConfig,
        rng: np.random.Generator,
        known_range: tuple[float, float] | None = None,
    ) -> "CriticEnsemble":
        critics = {n: make_distributional_critic(n, encoder, critic_config, rng) for n in config.candidates}
        return cls(critics, config, known_range)

    def discretization(self, n: int) -> Discretization:
        if self.range is None:
            raise UsageError("no reward range yet: train at least one epoch first")
        return Discretization(r_min=self.range[0], r_max=self.range[1], n=n)

    @property
    def voting_open(self) -> bool:
        deadline = self.config.vote_deadline
        return deadline is None or self.epoch <= deadline


def ensemble_train_epoch(ens: CriticEnsemble, batch: SampleBatch, fresh: SampleBatch | None = None) -> VoteRecord:
    """Train every candidate critic on `batch` and vote.

    `fresh` holds the samples not yet streamed into the range sketch when
    `batch` also carries earlier epochs; it defaults to `batch`.
    """
    if len(batch) == 0:
        raise UsageError("cannot train the ensemble on an empty batch")
    ens.epoch += 1
    if ens.known_range is None:
        ens.sketch.insert_many((fresh if fresh is not None else batch).rewards)
        ens.range = estimate_range(ens.sketch, ens.config.lower_quantile, ens.config.upper_quantile)

    H = []
    clamped = 0
    for n in ens.candidates:
        labels, mask = ens.discretization(n).labels(batch.rewards)
        clamped += int(mask.sum())
        H.append(ens.critics[n].fit(batch, labels))

    dH = differential_cross_entropy(ens.candidates, H)
    votes: list[int] = []
    if ens.voting_open:
        votes = cast_votes(ens.candidates, H, ens.config.rule, ens.config.knee_tau)
        for n in ens.candidates:
            ens.tally[n] *= ens.config.vote_discount
        for n in votes:
            ens.tally[n] += 1.0
    winner = select_winner(ens)
    if ens.config.vote_deadline is not None and ens.epoch == ens.config.vote_deadline:
        ens.frozen_winner = winner
        logger.debug(f"voting closed at epoch {ens.epoch}, winner n_o={winner}")

    logger.debug(
        f"epoch {ens.epoch}: range=({ens.range[0]:.4g}, {ens.range[1]:.4g}) votes={votes} winner={winner}"
    )
    record = VoteRecord(
        epoch=ens.epoch,
        H_values=dict(zip(ens.candidates, H)),
        dH_values=dH,
        voted_for=votes,
        tally=dict(ens.tally),
        winner=winner,
        r_emin=ens.range[0],
        r_emax=ens.range[1],
        clamped=clamped,
    )
    ens.history.append(record)
    return record


def select_winner(ens: CriticEnsemble) -> int:
    """Most-voted candidate; ties and the all-zero tally go to the smallest"""
    if ens.epoch == 0:
        raise UsageError("no epoch completed yet")
    if ens.frozen_winner is not None:
        return ens.frozen_winner
    best = max(ens.tally.values())
    return next(n for n in ens.candidates if ens.tally[n] == best)


def gdrc_correct(ens: CriticEnsemble, batch: SampleBatch) -> np.ndarray:
    """Correct observed rewards with the winning critic under the estimated range"""
    n = select_winner(ens)
    probs, _ = ens.critics[n].predict_distribution(batch.states, batch.actions)
    return correct_rewards(ens.discretization(n), batch.rewards, probs)
