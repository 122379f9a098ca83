import numpy as np
import pytest

from src.critic import (
    ContextEncoder,
    CriticConfig,
    NetworkCritic,
    OneHotEncoder,
    RegressionCritic,
    SampleBatch,
    TabularCritic,
    correct_reward,
    correct_rewards,
    estimate_confusion,
    make_distributional_critic,
    mean_cross_entropy,
    re_predict,
    re_train,
    sr_correct,
    sr_correct_many,
    surrogate_rewards,
    tabular_update,
)
from src.errors import InversionError, UsageError
from src.perturb import ConfusionMatrix, Discretization, gcm_perturb_many, is_mode_preserving, uniform_gcm
from src.theory import total_variation


def _keyed_batch(states, rewards=None):
    states = np.asarray(states)
    rewards = np.zeros(len(states)) if rewards is None else rewards
    return SampleBatch(states, np.zeros(len(states), dtype=int), rewards)


def test_sample_batch_rejects_ragged_input():
    with pytest.raises(UsageError):
        SampleBatch([0, 1], [0], [0.0, 1.0])


def test_empty_update_leaves_table_unchanged():
    critic = TabularCritic(3, OneHotEncoder(2, 1))
    critic.update(_keyed_batch([]), np.array([], dtype=int))
    assert critic.table == {}


def test_tabular_counts_become_distributions():
    critic = TabularCritic(3, OneHotEncoder(2, 1))
    tabular_update(critic, _keyed_batch([0] * 10), np.full(10, 2))
    tabular_update(critic, _keyed_batch([1] * 10), np.array([0, 0, 1, 1, 1, 1, 1, 2, 2, 2]))
    probs, unseen = critic.predict_distribution(np.array([0, 1]), np.array([0, 0]))
    assert np.allclose(probs[0], [0, 0, 1])
    assert np.allclose(probs[1], [0.2, 0.5, 0.3])
    assert not unseen.any()


def test_unseen_keys_get_uniform_and_a_flag():
    critic = TabularCritic(4, OneHotEncoder(3, 2))
    tabular_update(critic, SampleBatch([0], [1], [0.0]), np.array([3]))
    probs, unseen = critic.predict_distribution(np.array([0, 2]), np.array([1, 1]))
    assert np.allclose(probs[1], 0.25)
    assert list(unseen) == [False, True]


def test_tabular_estimate_converges_to_channel_row():
    disc = Discretization(r_min=0, r_max=3, n=3)
    C = ConfusionMatrix([[1, 0, 0], [0.2, 0.5, 0.3], [0, 0, 1]])
    rng = np.random.default_rng(0)
    r_tilde, _, y_tilde = gcm_perturb_many(disc, C, np.full(100_000, 1.5), rng)
    critic = TabularCritic(3, OneHotEncoder(1, 1))
    critic.update(_keyed_batch(np.zeros(100_000, dtype=int), r_tilde), y_tilde)
    probs, _ = critic.predict_distribution(np.array([0]), np.array([0]))
    assert np.allclose(probs[0], [0.2, 0.5, 0.3], atol=0.01)


@pytest.mark.parametrize("n_r, seed", [(3, 0), (6, 1), (10, 2)])
def test_tabular_critic_recovers_random_mode_preserving_channels(n_r, seed):
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(n_r), size=n_r) + np.eye(n_r)
    C = ConfusionMatrix(rows / rows.sum(axis=1, keepdims=True))
    assert is_mode_preserving(C)
    disc = Discretization(r_min=0, r_max=n_r, n=n_r)
    states = np.repeat(np.arange(n_r), 100_000)
    r_tilde, _, y_tilde = gcm_perturb_many(disc, C, disc.centers()[states], rng)
    critic = TabularCritic(n_r, OneHotEncoder(n_r, 1))
    critic.update(_keyed_batch(states, r_tilde), y_tilde)
    probs, _ = critic.predict_distribution(np.arange(n_r), np.zeros(n_r, dtype=int))
    for key in range(n_r):
        assert total_variation(probs[key], C.row(key)) <= 0.02
    assert list(np.argmax(probs, axis=1)) == list(range(n_r))


def test_context_keys_group_identical_contexts():
    critic = TabularCritic(2, ContextEncoder(2, 2))
    contexts = np.array([[0.25, 0.5], [0.25, 0.5], [0.75, 0.1]])
    critic.update(SampleBatch(contexts, [1, 1, 1], [0.0, 0.0, 0.0]), np.array([1, 1, 0]))
    assert len(critic.table) == 2


def test_correct_reward_examples():
    disc = Discretization(r_min=0, r_max=10, n=10)
    assert correct_reward(disc, 7.3, np.eye(10)[3]) == pytest.approx(3.3)
    assert correct_reward(disc, 3.3, np.eye(10)[3]) == 3.3


def test_correct_reward_shape_mismatch():
    disc = Discretization(r_min=0, r_max=10, n=10)
    with pytest.raises(UsageError):
        correct_reward(disc, 1.0, np.full(9, 1 / 9))


def test_correct_rewards_ties_resolve_to_lowest_label():
    disc = Discretization(r_min=0, r_max=4, n=4)
    probs = np.array([[0.0, 0.5, 0.5, 0.0], [0.25, 0.25, 0.25, 0.25]])
    corrected = correct_rewards(disc, np.array([2.5, 3.5]), probs)
    assert corrected == pytest.approx([1.5, 0.5])


def test_cross_entropy_of_one_hot_and_uniform():
    critic = TabularCritic(8, OneHotEncoder(2, 1))
    batch = _keyed_batch([0] * 20)
    labels = np.full(20, 5)
    # nothing seen yet: uniform prediction
    assert mean_cross_entropy(critic, batch, labels) == pytest.approx(np.log(8))
    assert critic.fit(batch, labels) == pytest.approx(0.0, abs=1e-12)


def test_tabular_cross_entropy_reaches_row_entropy():
    disc = Discretization(r_min=0, r_max=3, n=3)
    C = ConfusionMatrix([[1, 0, 0], [0.2, 0.5, 0.3], [0, 0, 1]])
    r_tilde, _, y_tilde = gcm_perturb_many(disc, C, np.full(100_000, 1.5), np.random.default_rng(1))
    critic = TabularCritic(3, OneHotEncoder(1, 1))
    loss = critic.fit(_keyed_batch(np.zeros(100_000, dtype=int), r_tilde), y_tilde)
    row = np.array([0.2, 0.5, 0.3])
    assert loss == pytest.approx(-(row * np.log(row)).sum(), abs=0.01)


def test_cross_entropy_of_empty_batch():
    with pytest.raises(UsageError):
        mean_cross_entropy(TabularCritic(2, OneHotEncoder(1, 1)), _keyed_batch([]), np.array([], dtype=int))


def test_network_critic_rejects_empty_batch():
    critic = NetworkCritic(2, OneHotEncoder(1, 1), CriticConfig(kind="network"), np.random.default_rng(0))
    with pytest.raises(UsageError):
        critic.train_epoch(_keyed_batch([]), np.array([], dtype=int))


def test_network_critic_learns_channel_rows():
    disc = Discretization(r_min=0, r_max=4, n=4)
    C = uniform_gcm(4, 0.4)
    rng = np.random.default_rng(2)
    states = np.repeat(np.arange(4), 2500)
    r_tilde, _, y_tilde = gcm_perturb_many(disc, C, disc.centers()[states], rng)
    config = CriticConfig(kind="network", iterations=300, batch_size=256)
    critic = make_distributional_critic(4, OneHotEncoder(4, 1), config, rng)
    batch = _keyed_batch(states, r_tilde)
    for _ in range(10):
        critic.fit(batch, y_tilde)
    probs, _ = critic.predict_distribution(np.arange(4), np.zeros(4, dtype=int))
    tv = 0.5 * np.abs(probs - C.matrix).sum(axis=1)
    assert tv.max() < 0.05
    assert np.array_equal(probs.argmax(axis=1), np.arange(4))


def test_regression_critic_learns_constant():
    config = CriticConfig(learning_rate=1e-2, iterations=500, batch_size=256)
    critic = RegressionCritic(OneHotEncoder(1, 1), config, np.random.default_rng(3))
    re_train(critic, _keyed_batch(np.zeros(1000, dtype=int), np.full(1000, 0.7)))
    assert re_predict(critic, np.array([0]), np.array([0]))[0] == pytest.approx(0.7, abs=0.01)


def test_regression_critic_learns_the_mean_of_a_coin():
    rng = np.random.default_rng(4)
    config = CriticConfig(learning_rate=1e-2, iterations=500, batch_size=4000)
    critic = RegressionCritic(OneHotEncoder(1, 1), config, rng)
    rewards = 2.0 * (rng.random(4000) < 0.5)
    critic.train_epoch(_keyed_batch(np.zeros(4000, dtype=int), rewards))
    assert critic.predict(np.array([0]), np.array([0]))[0] == pytest.approx(1.0, abs=0.05)


def test_regression_critic_keeps_order_under_affine_noise():
    config = CriticConfig(learning_rate=1e-2, iterations=500, batch_size=256)
    critic = RegressionCritic(OneHotEncoder(2, 1), config, np.random.default_rng(5))
    states = np.repeat([0, 1], 500)
    critic.train_epoch(_keyed_batch(states, 2.0 * np.where(states == 0, 0.2, 0.6) + 1.0))
    predicted = critic.predict(np.array([0, 1]), np.array([0, 0]))
    assert predicted[1] > predicted[0]


def test_surrogate_rewards_identity():
    disc = Discretization(r_min=0, r_max=3, n=3)
    table = surrogate_rewards(uniform_gcm(3, 0.0), [1.0, 2.0, 3.0], disc)
    assert table.r_hat == pytest.approx([1.0, 2.0, 3.0])


def test_surrogate_rewards_two_by_two():
    disc = Discretization(r_min=0, r_max=2, n=2)
    table = surrogate_rewards(ConfusionMatrix([[0.8, 0.2], [0.2, 0.8]]), [0.0, 1.0], disc)
    assert table.r_hat == pytest.approx([-1 / 3, 4 / 3])
    assert sr_correct(table, 1.7) == pytest.approx(4 / 3)
    assert sr_correct_many(table, np.array([0.1, 1.2])) == pytest.approx([-1 / 3, 4 / 3])


def test_surrogate_rewards_are_unbiased_per_true_label():
    disc = Discretization(r_min=0, r_max=1, n=5)
    C = ConfusionMatrix(
        [
            [0.6, 0.1, 0.1, 0.1, 0.1],
            [0.2, 0.5, 0.1, 0.1, 0.1],
            [0.0, 0.2, 0.7, 0.1, 0.0],
            [0.1, 0.1, 0.1, 0.6, 0.1],
            [0.05, 0.05, 0.1, 0.2, 0.6],
        ]
    )
    table = surrogate_rewards(C, disc.centers(), disc)
    assert C.matrix @ table.r_hat == pytest.approx(disc.centers(), abs=1e-9)


def test_singular_channel_cannot_be_inverted():
    disc = Discretization(r_min=0, r_max=1, n=4)
    with pytest.raises(InversionError):
        surrogate_rewards(uniform_gcm(4, 1.0), disc.centers(), disc)


def test_estimate_confusion_by_majority_vote():
    critic = TabularCritic(3, OneHotEncoder(3, 1))
    critic.update(_keyed_batch([0, 0, 0, 0, 1, 1, 1, 1]), np.array([0, 0, 0, 1, 1, 1, 1, 2]))
    estimate = estimate_confusion(critic)
    assert estimate.row(0) == pytest.approx([0.75, 0.25, 0.0])
    assert estimate.row(1) == pytest.approx([0.0, 0.75, 0.25])
    # no key has mode 2
    assert estimate.row(2) == pytest.approx([0.0, 0.0, 1.0])
