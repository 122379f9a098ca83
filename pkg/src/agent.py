"""Learners whose reward input goes through a correction pipeline.

Samples are buffered for one cadence. At each cadence boundary the pipeline
is updated on the buffered (state, action, observed reward) batch, the batch
rewards are replaced by corrected ones and only then does the learner see
them. The Raw pipeline follows the same schedule, so learners under clean
noise behave identically whatever the pipeline.
"""
from typing import Callable, NamedTuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src.critic import SampleBatch
from src.envs import ContinuousBandit, GridWorld, Transition, critic_scope
from src.network import softmax
from src.pipeline import PipelineReport, RewardPipeline
from src.seeding import Streams

Policy = Callable[[int, np.random.Generator], int]
# receives the hidden true rewards of every critiqued batch; evaluation only
Observer = Callable[[np.ndarray], None]


class AgentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_steps: int = Field(default=50_000, ge=1)
    cadence: int = Field(default=500, ge=1)
    learning_rate: float = Field(default=0.1, gt=0.0, le=1.0)
    gamma: float = Field(default=0.99, ge=0.0, le=1.0)
    epsilon_start: float = Field(default=1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.05, ge=0.0, le=1.0)
    epsilon_decay_fraction: float = Field(default=0.5, gt=0.0, le=1.0)
    eval_episodes: int = Field(default=10, ge=1)
    # bandit learner
    rounds: int = Field(default=20_000, ge=1)
    bandit_cadence: int = Field(default=200, ge=1)
    policy_learning_rate: float = Field(default=0.1, gt=0.0)
    baseline_rate: float = Field(default=0.01, gt=0.0, le=1.0)
    temperature_start: float = Field(default=1.0, gt=0.0)
    temperature_end: float = Field(default=0.05, gt=0.0)
    temperature_decay_fraction: float = Field(default=0.5, gt=0.0, le=1.0)


class LearningCurvePoint(NamedTuple):
    step: int
    episode: int
    clean_return: float
    clean_return_se: float
    corrected_reward_mae: float
    corrected_reward_mse: float
    critic_loss: float | None = None
    winner: int | None = None
    clamped: int = 0


class EvaluationResult(NamedTuple):
    mean: float
    se: float
    returns: list[float]


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


class QTable:
    def __init__(self, n_states: int, n_actions: int, learning_rate: float = 0.1, gamma: float = 0.99):
        self.values = np.zeros((n_states, n_actions))
        self.learning_rate = learning_rate
        self.gamma = gamma

    def greedy(self, state: int, rng: np.random.Generator | None = None) -> int:
        return int(np.argmax(self.values[state]))

    def act(self, state: int, epsilon: float, rng: np.random.Generator) -> int:
        if rng.random() < epsilon:
            return int(rng.integers(self.values.shape[1]))
        return self.greedy(state)

    def update(self, state: int, action: int, reward: float, next_state: int, terminal: bool):
        target = reward if terminal else reward + self.gamma * self.values[next_state].max()
        self.values[state, action] += self.learning_rate * (target - self.values[state, action])


def epsilon_at(config: AgentConfig, step: int) -> float:
    """Linear decay over the first `epsilon_decay_fraction` of training, then flat"""
    horizon = config.epsilon_decay_fraction * config.total_steps
    frac = min(step / horizon, 1.0)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def _critique(pipeline: RewardPipeline, batch: SampleBatch) -> tuple[PipelineReport, np.ndarray]:
    with critic_scope():
        report = pipeline.update(batch)
        corrected = pipeline.correct(batch)
    return report, np.asarray(corrected, dtype=float)


def _batch_of(buffer: list[Transition]) -> SampleBatch:
    return SampleBatch(
        np.array([tr.state for tr in buffer]),
        np.array([tr.action for tr in buffer]),
        np.array([tr.r_observed for tr in buffer]),
    )


def q_learning_train(
    env: GridWorld,
    pipeline: RewardPipeline,
    config: AgentConfig,
    streams: Streams,
    observer: Observer | None = None,
) -> list[LearningCurvePoint]:
    q = QTable(env.n_states, env.n_actions, config.learning_rate, config.gamma)
    curve: list[LearningCurvePoint] = []
    buffer: list[Transition] = []
    state = env.reset(streams.env)
    episode = 0
    for t in range(config.total_steps):
        action = q.act(state, epsilon_at(config, t), streams.agent)
        transition = env.step(state, action, streams.env)
        buffer.append(transition)
        if transition.done:
            episode += 1
            state = env.reset(streams.env)
        else:
            state = transition.next_state

        if len(buffer) < config.cadence and t < config.total_steps - 1:
            continue
        report, corrected = _critique(pipeline, _batch_of(buffer))
        truth = np.array([tr.reveal_true() for tr in buffer])
        if observer is not None:
            observer(truth)
        for tr, reward in zip(buffer, corrected):
            q.update(tr.state, tr.action, float(reward), tr.next_state, bool(env.terminal[tr.next_state]))
        evaluation = evaluate_policy(env, q.greedy, config.eval_episodes, streams.evaluation)
        curve.append(
            LearningCurvePoint(
                step=t + 1,
                episode=episode,
                clean_return=evaluation.mean,
                clean_return_se=evaluation.se,
                corrected_reward_mae=float(np.mean(np.abs(corrected - truth))),
                corrected_reward_mse=float(np.mean((corrected - truth) ** 2)),
                critic_loss=report.critic_loss,
                winner=report.winner,
                clamped=report.clamped,
            )
        )
        logger.debug(f"step {t + 1}: return={evaluation.mean:.4g} mse={curve[-1].corrected_reward_mse:.4g}")
        buffer = []
    return curve


def evaluate_policy(env: GridWorld, policy: Policy, episodes: int, rng: np.random.Generator) -> EvaluationResult:
    """Roll out `policy` for `episodes` episodes, scored with true rewards"""
    returns = []
    for _ in range(episodes):
        state = env.start_state
        total = 0.0
        for _ in range(env.spec.step_limit):
            state, reward, terminal = env.evaluation_step(state, policy(state, rng), rng)
            total += reward
            if terminal:
                break
        returns.append(total)
    return EvaluationResult(float(np.mean(returns)), standard_error(returns), returns)


def uniform_random_policy(n_actions: int) -> Policy:
    def policy(state: int, rng: np.random.Generator) -> int:
        return int(rng.integers(n_actions))

    return policy


def _backward_induction(env: GridWorld, combine: Callable[[np.ndarray], float]) -> float:
    """Undiscounted finite-horizon value of the start state over step_limit steps"""
    value = np.zeros(env.n_states)
    for _ in range(env.spec.step_limit):
        updated = np.zeros(env.n_states)
        for s in range(env.n_states):
            if env.terminal[s]:
                continue
            q = np.zeros(env.n_actions)
            for a in range(env.n_actions):
                for p, nxt, reward, terminal in env.transitions(s, a):
                    q[a] += p * (reward + (0.0 if terminal else value[nxt]))
            updated[s] = combine(q)
        value = updated
    return float(value[env.start_state])


def optimal_return(env: GridWorld) -> float:
    return _backward_induction(env, np.max)


def random_policy_return(env: GridWorld) -> float:
    return _backward_induction(env, np.mean)


def normalized_score(clean_return: float, optimal: float, random: float) -> float:
    """0 for the uniform-random policy, 1 for the optimum"""
    return (clean_return - random) / (optimal - random)


def temperature_at(config: AgentConfig, round_: int) -> float:
    """Linear anneal over the first `temperature_decay_fraction` of the rounds, then flat"""
    horizon = config.temperature_decay_fraction * config.rounds
    frac = min(round_ / horizon, 1.0)
    return config.temperature_start + frac * (config.temperature_end - config.temperature_start)


class SoftmaxPolicy:
    """Linear softmax over arms with logits theta . [1, s] / temperature"""

    def __init__(self, n_arms: int, context_dim: int):
        self.theta = np.zeros((n_arms, context_dim + 1))

    @staticmethod
    def features(context) -> np.ndarray:
        return np.concatenate([[1.0], np.asarray(context, dtype=float).reshape(-1)])

    def probabilities(self, context, temperature: float = 1.0) -> np.ndarray:
        return softmax(self.theta @ self.features(context) / temperature)

    def act(self, context, rng: np.random.Generator, temperature: float = 1.0) -> int:
        probs = self.probabilities(context, temperature)
        return min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(probs) - 1)

    def greedy(self, context) -> int:
        return int(np.argmax(self.theta @ self.features(context)))

    def reinforce(self, context, action: int, advantage: float, learning_rate: float, temperature: float = 1.0):
        """Likelihood-ratio step, scaled by the temperature so one update moves the logits equally at any temperature"""
        phi = self.features(context)
        grad = -self.probabilities(context, temperature)
        grad[action] += 1.0
        self.theta += learning_rate * temperature * advantage * np.outer(grad, phi)


class LinearBaseline:
    """Context-dependent reward baseline b(s) = v . [1, s], fitted by LMS"""

    def __init__(self, context_dim: int, rate: float):
        self.weights = np.zeros(context_dim + 1)
        self.rate = rate

    def advantage(self, context, reward: float) -> float:
        phi = SoftmaxPolicy.features(context)
        advantage = reward - float(self.weights @ phi)
        self.weights += self.rate * advantage * phi
        return advantage


def bandit_pg_train(
    env: ContinuousBandit,
    pipeline: RewardPipeline,
    config: AgentConfig,
    streams: Streams,
    observer: Observer | None = None,
) -> tuple[list[LearningCurvePoint], SoftmaxPolicy]:
    """Likelihood-ratio policy gradient on corrected rewards.

    Curve points carry the mean clean regret per round of the batch in
    `clean_return` (the harness writes it out as `clean_regret`).
    """
    policy = SoftmaxPolicy(env.n_actions, env.spec.context_dim)
    baseline = LinearBaseline(env.spec.context_dim, config.baseline_rate)
    curve: list[LearningCurvePoint] = []
    buffer: list[Transition] = []
    temperatures: list[float] = []
    for t in range(config.rounds):
        context = env.reset(streams.env)
        temperatures.append(temperature_at(config, t))
        buffer.append(env.step(context, policy.act(context, streams.agent, temperatures[-1]), streams.env))
        if len(buffer) < config.bandit_cadence and t < config.rounds - 1:
            continue
        report, corrected = _critique(pipeline, _batch_of(buffer))
        truth = np.array([tr.reveal_true() for tr in buffer])
        if observer is not None:
            observer(truth)
        regret = np.array([env.mean_rewards(tr.state).max() for tr in buffer]) - truth
        for tr, reward, temperature in zip(buffer, corrected, temperatures):
            advantage = baseline.advantage(tr.state, float(reward))
            policy.reinforce(tr.state, tr.action, advantage, config.policy_learning_rate, temperature)
        curve.append(
            LearningCurvePoint(
                step=t + 1,
                episode=t + 1,
                clean_return=float(regret.mean()),
                clean_return_se=standard_error(regret),
                corrected_reward_mae=float(np.mean(np.abs(corrected - truth))),
                corrected_reward_mse=float(np.mean((corrected - truth) ** 2)),
                critic_loss=report.critic_loss,
                winner=report.winner,
                clamped=report.clamped,
            )
        )
        buffer, temperatures = [], []
    return curve, policy


def random_bandit_regret(env: ContinuousBandit, rng: np.random.Generator, contexts: int = 10_000) -> float:
    """Expected clean regret per round of the uniform-random arm choice"""
    gaps = []
    for _ in range(contexts):
        means = env.mean_rewards(env.reset(rng))
        gaps.append(means.max() - means.mean())
    return float(np.mean(gaps))
