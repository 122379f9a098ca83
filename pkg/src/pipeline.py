"""Reward correction pipelines plugged between the environment and a learner.

Each pipeline exposes `update(batch)`, called once per cadence with the
samples collected since the last call, and `correct(batch)`, which returns
the rewards the learner should use in place of the observed ones. Batches
carry observed rewards only.
"""
from typing import NamedTuple

import numpy as np
from loguru import logger

from src.critic import (
    DistributionalCritic,
    RegressionCritic,
    SampleBatch,
    SurrogateTable,
    TabularCritic,
    correct_rewards,
    estimate_confusion,
    sr_correct_many,
    surrogate_rewards,
)
from src.errors import ConfigurationError, InversionError
from src.gdrc import CriticEnsemble, VoteRecord, ensemble_train_epoch, gdrc_correct, select_winner
from src.perturb import Discretization


class PipelineReport(NamedTuple):
    critic_loss: float | None = None
    winner: int | None = None
    vote: VoteRecord | None = None
    clamped: int = 0


class _History:
    """Training set for the next update: the fresh batch, or everything seen"""

    def __init__(self, keep: bool):
        self.keep = keep
        self._seen: list[SampleBatch] = []

    def training_batch(self, batch: SampleBatch) -> SampleBatch:
        if not self.keep:
            return batch
        self._seen.append(batch)
        return SampleBatch.concat(self._seen)


class RawPipeline:
    method = "raw"

    def update(self, batch: SampleBatch) -> PipelineReport:
        return PipelineReport()

    def correct(self, batch: SampleBatch) -> np.ndarray:
        return batch.rewards.copy()


class RegressionPipeline:
    method = "re"

    def __init__(self, critic: RegressionCritic, history: bool = False):
        self.critic = critic
        self._history = _History(history)

    def update(self, batch: SampleBatch) -> PipelineReport:
        return PipelineReport(critic_loss=self.critic.train_epoch(self._history.training_batch(batch)))

    def correct(self, batch: SampleBatch) -> np.ndarray:
        return self.critic.predict(batch.states, batch.actions)


class SurrogatePipeline:
    """SR_W: observed labels replaced by C^-1 . centers with a known C"""

    method = "sr_w"

    def __init__(self, table: SurrogateTable):
        self.table = table

    def update(self, batch: SampleBatch) -> PipelineReport:
        return PipelineReport()

    def correct(self, batch: SampleBatch) -> np.ndarray:
        return sr_correct_many(self.table, batch.rewards)


class EstimatedSurrogatePipeline:
    """SR with C estimated by per-key majority vote over observed labels"""

    method = "sr"

    def __init__(self, critic: TabularCritic, disc: Discretization):
        self.critic = critic
        self.disc = disc
        self.table: SurrogateTable | None = None

    def update(self, batch: SampleBatch) -> PipelineReport:
        labels, clamped = self.disc.labels(batch.rewards)
        loss = self.critic.fit(batch, labels)
        try:
            self.table = surrogate_rewards(estimate_confusion(self.critic), self.disc.centers(), self.disc)
        except InversionError as e:
            logger.warning(f"estimated confusion matrix not invertible, passing rewards through: {e}")
            self.table = None
        return PipelineReport(critic_loss=loss, clamped=int(clamped.sum()))

    def correct(self, batch: SampleBatch) -> np.ndarray:
        if self.table is None:
            return batch.rewards.copy()
        return sr_correct_many(self.table, batch.rewards)


class DrcPipeline:
    method = "drc"

    def __init__(self, critic: DistributionalCritic, disc: Discretization, history: bool = False):
        if critic.n_outputs != disc.n:
            raise ConfigurationError(f"critic has {critic.n_outputs} outputs but the discretization has {disc.n}")
        self.critic = critic
        self.disc = disc
        # tabular counts already accumulate across updates
        self._history = _History(history and not isinstance(critic, TabularCritic))

    def update(self, batch: SampleBatch) -> PipelineReport:
        training = self._history.training_batch(batch)
        labels, clamped = self.disc.labels(training.rewards)
        return PipelineReport(critic_loss=self.critic.fit(training, labels), clamped=int(clamped.sum()))

    def correct(self, batch: SampleBatch) -> np.ndarray:
        probs, _ = self.critic.predict_distribution(batch.states, batch.actions)
        return correct_rewards(self.disc, batch.rewards, probs)


class GdrcPipeline:
    method = "gdrc"

    def __init__(self, ensemble: CriticEnsemble, history: bool = False):
        self.ensemble = ensemble
        tabular = all(isinstance(c, TabularCritic) for c in ensemble.critics.values())
        self._history = _History(history and not tabular)

    def update(self, batch: SampleBatch) -> PipelineReport:
        record = ensemble_train_epoch(self.ensemble, self._history.training_batch(batch), fresh=batch)
        return PipelineReport(
            critic_loss=record.H_values[record.winner], winner=record.winner, vote=record, clamped=record.clamped
        )

    def correct(self, batch: SampleBatch) -> np.ndarray:
        return gdrc_correct(self.ensemble, batch)

    @property
    def winner(self) -> int:
        return select_winner(self.ensemble)


RewardPipeline = (
    RawPipeline | RegressionPipeline | SurrogatePipeline | EstimatedSurrogatePipeline | DrcPipeline | GdrcPipeline
)
