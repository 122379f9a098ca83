import numpy as np
import pytest

from src.critic import (
    CriticConfig,
    NetworkCritic,
    OneHotEncoder,
    RegressionCritic,
    SampleBatch,
    TabularCritic,
    surrogate_rewards,
)
from src.errors import ConfigurationError, InversionError
from src.gdrc import CriticEnsemble, GdrcConfig, VotingRule
from src.perturb import ConfusionMatrix, Discretization, gcm_perturb_many, uniform_gcm
from src.pipeline import (
    DrcPipeline,
    EstimatedSurrogatePipeline,
    GdrcPipeline,
    RawPipeline,
    RegressionPipeline,
    SurrogatePipeline,
    _History,
)

DISC = Discretization(r_min=0.0, r_max=4.0, n=4)


def _batch(rng, omega=0.4, per_key=300) -> SampleBatch:
    states = np.repeat(np.arange(4), per_key)
    r_tilde, _, _ = gcm_perturb_many(DISC, uniform_gcm(4, omega), DISC.centers()[states], rng)
    return SampleBatch(states, np.zeros(len(states), dtype=int), r_tilde)


def test_raw_pipeline_passes_a_copy():
    batch = SampleBatch([0, 1], [0, 0], [0.3, 0.9])
    corrected = RawPipeline().correct(batch)
    corrected[0] = 5.0
    assert batch.rewards[0] == 0.3


def test_drc_is_exact_on_a_clean_channel():
    batch = _batch(np.random.default_rng(0), omega=0.0)
    pipeline = DrcPipeline(TabularCritic(4, OneHotEncoder(4, 1)), DISC)
    report = pipeline.update(batch)
    assert report.critic_loss == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(pipeline.correct(batch), batch.rewards)


def test_drc_recovers_true_rewards_under_noise():
    batch = _batch(np.random.default_rng(1))
    pipeline = DrcPipeline(TabularCritic(4, OneHotEncoder(4, 1)), DISC)
    pipeline.update(batch)
    assert pipeline.correct(batch) == pytest.approx(DISC.centers()[batch.states])


def test_drc_output_count_must_match_discretization():
    with pytest.raises(ConfigurationError):
        DrcPipeline(TabularCritic(5, OneHotEncoder(4, 1)), DISC)


def test_surrogate_pipeline_uses_the_known_matrix():
    table = surrogate_rewards(ConfusionMatrix([[0.8, 0.2], [0.2, 0.8]]), [0.0, 1.0], Discretization(r_min=0, r_max=2, n=2))
    pipeline = SurrogatePipeline(table)
    assert pipeline.correct(SampleBatch([0, 0], [0, 0], [0.5, 1.5])) == pytest.approx([-1 / 3, 4 / 3])


def test_estimated_surrogate_pipeline_is_unbiased_with_enough_data():
    rng = np.random.default_rng(2)
    pipeline = EstimatedSurrogatePipeline(TabularCritic(4, OneHotEncoder(4, 1)), DISC)
    pipeline.update(_batch(rng, per_key=5000))
    query = _batch(rng, per_key=5000)
    corrected = pipeline.correct(query)
    for key in range(4):
        assert corrected[query.states == key].mean() == pytest.approx(DISC.centers()[key], abs=0.15)


def test_estimated_surrogate_pipeline_passes_through_when_singular(monkeypatch):
    def singular(*args, **kwargs):
        raise InversionError("singular")

    monkeypatch.setattr("src.pipeline.surrogate_rewards", singular)
    pipeline = EstimatedSurrogatePipeline(TabularCritic(4, OneHotEncoder(4, 1)), DISC)
    batch = _batch(np.random.default_rng(3))
    pipeline.update(batch)
    assert np.array_equal(pipeline.correct(batch), batch.rewards)


def test_regression_pipeline_predicts_per_key():
    config = CriticConfig(learning_rate=1e-2, iterations=300)
    pipeline = RegressionPipeline(RegressionCritic(OneHotEncoder(4, 1), config, np.random.default_rng(4)))
    batch = _batch(np.random.default_rng(5), omega=0.0)
    report = pipeline.update(batch)
    assert report.critic_loss is not None
    assert pipeline.correct(batch).shape == (len(batch),)


def test_history_grows_only_when_kept():
    first = SampleBatch([0], [0], [0.1])
    second = SampleBatch([1], [0], [0.2])
    kept = _History(True)
    kept.training_batch(first)
    assert len(kept.training_batch(second)) == 2
    fresh = _History(False)
    fresh.training_batch(first)
    assert len(fresh.training_batch(second)) == 1


def test_network_drc_history_replays_earlier_batches():
    rng = np.random.default_rng(6)
    critic = NetworkCritic(4, OneHotEncoder(4, 1), CriticConfig(kind="network", iterations=1), rng)
    pipeline = DrcPipeline(critic, DISC, history=True)
    pipeline.update(_batch(rng, per_key=5))
    pipeline.update(_batch(rng, per_key=5))
    assert len(pipeline._history._seen) == 2
    assert not DrcPipeline(TabularCritic(4, OneHotEncoder(4, 1)), DISC, history=True)._history.keep


def test_gdrc_pipeline_reports_the_winner():
    config = GdrcConfig(candidates=[2, 4, 6, 8], rule=VotingRule.KNEE)
    ensemble = CriticEnsemble.build(OneHotEncoder(4, 1), CriticConfig(), config, np.random.default_rng(7), (0.0, 4.0))
    pipeline = GdrcPipeline(ensemble)
    rng = np.random.default_rng(8)
    for _ in range(3):
        report = pipeline.update(_batch(rng))
    assert report.winner == pipeline.winner
    assert report.vote.epoch == 3
    assert pipeline.correct(_batch(rng)).shape == (1200,)
