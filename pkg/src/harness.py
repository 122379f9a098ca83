"""Seeded experiment runs, sweeps, diagnostics and their CSV/JSON output.

Every run is a list of seeds executed independently (optionally in worker
processes). Output files are plain text with fixed 9-significant-digit
formatting so identical configurations produce byte-identical files.
"""
import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from loguru import logger

from src.agent import (
    LearningCurvePoint,
    bandit_pg_train,
    normalized_score,
    optimal_return,
    q_learning_train,
    random_bandit_regret,
    random_policy_return,
    standard_error,
)
from src.config import ExperimentConfig, build_env, build_pipeline, has_field, with_value
from src.envs import HIDDEN_LANE, GridWorld
from src.errors import SchemaError, TrainingDivergenceError
from src.gdrc import VoteRecord
from src.network import MLP, load_parameters, save_parameters
from src.perturb import Discretization, GcmNoise
from src.pipeline import GdrcPipeline
from src.seeding import make_streams
from src.theory import CurvePoint

RECORD_COLUMNS = [
    "seed",
    "step",
    "episode",
    "method",
    "clean_return",
    "clean_return_se",
    "corrected_reward_mae",
    "corrected_reward_mse",
    "critic_cross_entropy",
    "winner",
    "clamped",
]
CURVE_COLUMNS = ["step", "episode", "method", "n_seeds", "clean_return", "clean_return_se", "corrected_reward_mse_vs_true"]
VOTE_COLUMNS = ["seed", "epoch", "candidate", "H", "dH", "votes", "tally", "winner", "r_emin", "r_emax"]
CE_TRACE_COLUMNS = ["seed", "epoch", "step", "critic_cross_entropy"]
HISTOGRAM_COLUMNS = ["seed", "label", "count", "lane"]
THEORY_COLUMNS = ["n_r", "n_o", "omega", "metric", "value"]

# bandit runs report regret where gridworld runs report return
REGRET_NAMES = {"clean_return": "clean_regret", "clean_return_se": "clean_regret_se"}

HISTOGRAM_BINS = 10
CHECKPOINT_SUBDIR = "critics"


class RunRecord(NamedTuple):
    seed: int
    step: int
    episode: int
    method: str
    clean_return: float
    clean_return_se: float
    corrected_reward_mae: float
    corrected_reward_mse: float
    critic_cross_entropy: float | None
    winner: int | None
    clamped: int


class SeedResult(NamedTuple):
    seed: int
    records: list[RunRecord]
    votes: list[VoteRecord]
    label_counts: list[int]
    leaks: int
    error: str | None = None


class RunResult(NamedTuple):
    config: ExperimentConfig
    seeds: list[SeedResult]

    @property
    def completed(self) -> list[SeedResult]:
        return [s for s in self.seeds if s.error is None]

    @property
    def failed(self) -> list[SeedResult]:
        return [s for s in self.seeds if s.error is not None]

    @property
    def records(self) -> list[RunRecord]:
        return [r for s in self.seeds for r in s.records]


class Aggregate(NamedTuple):
    mean: float
    se: float
    n: int


def aggregate(values) -> Aggregate:
    """Mean and standard error (unbiased sd / sqrt(n))"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return Aggregate(float("nan"), float("nan"), 0)
    return Aggregate(float(values.mean()), standard_error(values), int(values.size))


def metric_columns(config: ExperimentConfig, columns: list[str]) -> list[str]:
    if config.learner == "q_learning":
        return list(columns)
    return [REGRET_NAMES.get(column, column) for column in columns]


def _label_disc(config: ExperimentConfig, env, noise) -> Discretization:
    if isinstance(noise, GcmNoise):
        return noise.disc
    r_min, r_max = env.reward_range()
    return Discretization(r_min=r_min, r_max=r_max, n=config.disc.n_r or config.disc.n_o or HISTOGRAM_BINS)


def _record(seed: int, method: str, point: LearningCurvePoint) -> RunRecord:
    return RunRecord(
        seed=seed,
        step=point.step,
        episode=point.episode,
        method=method,
        clean_return=point.clean_return,
        clean_return_se=point.clean_return_se,
        corrected_reward_mae=point.corrected_reward_mae,
        corrected_reward_mse=point.corrected_reward_mse,
        critic_cross_entropy=point.critic_loss,
        winner=point.winner,
        clamped=point.clamped,
    )


def critic_models(pipeline) -> dict[str, MLP]:
    """Network critics of a pipeline by checkpoint name; tabular critics have none"""
    if isinstance(pipeline, GdrcPipeline):
        critics = {f"critic_n{n}": c for n, c in pipeline.ensemble.critics.items()}
    else:
        critics = {"critic": getattr(pipeline, "critic", None)}
    return {name: c.model for name, c in critics.items() if isinstance(getattr(c, "model", None), MLP)}


def checkpoint_path(directory: Path, seed: int, name: str) -> Path:
    return Path(directory) / f"seed{seed}_{name}.params"


def run_seed(
    config: ExperimentConfig, seed: int, checkpoint_dir: Path | None = None, resume_dir: Path | None = None
) -> SeedResult:
    streams = make_streams(seed)
    env, noise = build_env(config, streams.noise)
    pipeline = build_pipeline(config, env, noise, streams.critic)
    models = critic_models(pipeline)
    if resume_dir is not None:
        for name, model in models.items():
            path = checkpoint_path(resume_dir, seed, name)
            if path.exists():
                load_parameters(model, path)
                logger.info(f"{config.name}: seed {seed} resumed {name} from {path}")
            else:
                logger.warning(f"{config.name}: seed {seed} has no saved {name} in {resume_dir}, starting fresh")
    label_disc = _label_disc(config, env, noise)
    label_counts = np.zeros(label_disc.n, dtype=np.int64)

    def observe(truth: np.ndarray):
        np.add.at(label_counts, label_disc.labels(truth)[0], 1)

    leaks_before = HIDDEN_LANE.leaks
    logger.info(f"{config.name}: seed {seed} started ({config.method.value}, {config.learner})")
    try:
        if config.learner == "q_learning":
            curve = q_learning_train(env, pipeline, config.agent, streams, observe)
        else:
            curve, _ = bandit_pg_train(env, pipeline, config.agent, streams, observe)
    except TrainingDivergenceError as e:
        logger.warning(f"{config.name}: seed {seed} failed: {e}")
        return SeedResult(seed, [], [], [], HIDDEN_LANE.leaks - leaks_before, str(e))

    leaks = HIDDEN_LANE.leaks - leaks_before
    if leaks:
        logger.warning(f"{config.name}: seed {seed} read the hidden reward lane {leaks} times inside a critic scope")
    clamped = sum(p.clamped for p in curve)
    if clamped:
        logger.warning(f"{config.name}: seed {seed} clamped {clamped} rewards into the correction range")
    votes = list(pipeline.ensemble.history) if isinstance(pipeline, GdrcPipeline) else []
    if checkpoint_dir is not None and models:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        for name, model in models.items():
            save_parameters(model, checkpoint_path(checkpoint_dir, seed, name))
        logger.debug(f"{config.name}: seed {seed} saved {sorted(models)} to {checkpoint_dir}")
    records = [_record(seed, config.method.value, point) for point in curve]
    return SeedResult(seed, records, votes, label_counts.tolist(), leaks)


def run(
    config: ExperimentConfig,
    workers: int = 1,
    checkpoint_dir: Path | None = None,
    resume_dir: Path | None = None,
) -> RunResult:
    """Run every seed of `config`; seeds whose critic diverges are reported, not dropped.

    With `checkpoint_dir` the trained network critics of each seed are saved
    there; with `resume_dir` they start from the parameters saved by an
    earlier run instead of a fresh initialisation.
    """
    k = len(config.seeds)
    if workers > 1 and k > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            seeds = list(pool.map(run_seed, [config] * k, config.seeds, [checkpoint_dir] * k, [resume_dir] * k))
    else:
        seeds = [run_seed(config, seed, checkpoint_dir, resume_dir) for seed in config.seeds]
    result = RunResult(config, seeds)
    logger.success(
        f"{config.name}: {len(result.completed)}/{len(seeds)} seeds completed"
        + (f", failed: {[s.seed for s in result.failed]}" if result.failed else "")
    )
    return result


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[list[Any]]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, dict):
        return {k: _rounded(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_rounded(v) for v in value]
    return value


def save_json(path: Path, payload: object):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(_rounded(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")


def curve_rows(result: RunResult) -> list[list[Any]]:
    """Per-step mean and standard error over the completed seeds"""
    by_step: dict[int, list[RunRecord]] = {}
    for seed in result.completed:
        for record in seed.records:
            by_step.setdefault(record.step, []).append(record)
    rows = []
    for step in sorted(by_step):
        group = by_step[step]
        returns = aggregate([r.clean_return for r in group])
        rows.append(
            [
                step,
                group[0].episode if len(group) == 1 else "",
                result.config.method.value,
                returns.n,
                returns.mean,
                returns.se,
                aggregate([r.corrected_reward_mse for r in group]).mean,
            ]
        )
    return rows


def vote_rows(result: RunResult) -> list[list[Any]]:
    rows = []
    for seed in result.completed:
        for vote in seed.votes:
            for n in vote.H_values:
                rows.append(
                    [
                        seed.seed,
                        vote.epoch,
                        n,
                        vote.H_values[n],
                        vote.dH_values.get(n),
                        vote.voted_for.count(n),
                        vote.tally[n],
                        vote.winner,
                        vote.r_emin,
                        vote.r_emax,
                    ]
                )
    return rows


def summarize(result: RunResult) -> dict[str, Any]:
    config = result.config
    finals = [s.records[-1] for s in result.completed if s.records]
    summary: dict[str, Any] = {
        "name": config.name,
        "method": config.method.value,
        "learner": config.learner,
        "metric": "return" if config.learner == "q_learning" else "regret",
        "seeds_requested": len(config.seeds),
        "seeds_completed": len(result.completed),
        "excluded": len(result.failed),
        "failed": [{"seed": s.seed, "error": s.error} for s in result.failed],
        "hidden_lane_leaks": sum(s.leaks for s in result.seeds),
        "final": {
            metric_columns(config, ["clean_return"])[0]: aggregate([r.clean_return for r in finals])._asdict(),
            "corrected_reward_mae": aggregate([r.corrected_reward_mae for r in finals])._asdict(),
        },
    }
    if finals and finals[0].winner is not None:
        summary["final"]["winners"] = [r.winner for r in finals]
    streams = make_streams(config.seeds[0])
    env, _ = build_env(config, streams.noise)
    if isinstance(env, GridWorld):
        best, random = optimal_return(env), random_policy_return(env)
        summary["reference"] = {"optimal_return": best, "random_return": random}
        summary["final"]["normalized_score"] = aggregate(
            [normalized_score(r.clean_return, best, random) for r in finals]
        )._asdict()
    else:
        summary["reference"] = {"random_regret": random_bandit_regret(env, streams.evaluation)}
    return summary


def write_run(result: RunResult, out_dir: Path) -> dict[str, Any]:
    out_dir = Path(out_dir)
    write_csv(out_dir / "records.csv", metric_columns(result.config, RECORD_COLUMNS), [list(r) for r in result.records])
    write_csv(out_dir / "curve.csv", metric_columns(result.config, CURVE_COLUMNS), curve_rows(result))
    votes = vote_rows(result)
    if votes:
        write_csv(out_dir / "votes.csv", VOTE_COLUMNS, votes)
    summary = summarize(result)
    save_json(out_dir / "summary.json", summary)
    logger.success(f"{result.config.name}: results written to {out_dir}")
    return summary


class Diagnostics(NamedTuple):
    ce_trace: list[list[Any]]
    label_histogram: list[list[Any]]


def diagnostics(result: RunResult, out_dir: Path | None = None) -> Diagnostics:
    """Per-epoch critic cross-entropy and the hidden true-label histogram.

    The histogram is built from hidden rewards and is marked evaluation-only.
    """
    trace = [
        [seed.seed, epoch, record.step, record.critic_cross_entropy]
        for seed in result.completed
        for epoch, record in enumerate(seed.records, start=1)
    ]
    histogram = [
        [seed.seed, label, count, "evaluation_only"]
        for seed in result.completed
        for label, count in enumerate(seed.label_counts)
    ]
    if out_dir is not None:
        write_csv(Path(out_dir) / "ce_trace.csv", CE_TRACE_COLUMNS, trace)
        write_csv(Path(out_dir) / "label_histogram.csv", HISTOGRAM_COLUMNS, histogram)
    return Diagnostics(trace, histogram)


def sweep(
    base: ExperimentConfig, axis: str, values: list[Any], workers: int = 1, out_dir: Path | None = None
) -> list[tuple[Any, RunResult]]:
    """One run per axis value over the base seed list; one CSV with the axis as a column"""
    if not has_field(base, axis):
        raise SchemaError([(axis, "unknown configuration field")])
    configs = [with_value(base, axis, value) for value in values]
    results = []
    for value, config in zip(values, configs):
        logger.info(f"sweep {axis}={value}")
        results.append((value, run(config, workers)))
    if out_dir is not None:
        rows = [[value, *record] for value, result in results for record in result.records]
        write_csv(Path(out_dir) / "sweep.csv", [axis, *metric_columns(base, RECORD_COLUMNS)], rows)
        save_json(
            Path(out_dir) / "sweep_summary.json",
            {"axis": axis, "runs": [{"value": value, **summarize(result)} for value, result in results]},
        )
        logger.success(f"sweep over {axis}: {len(values)} runs written to {out_dir}")
    return results


def theory_rows(n_r: int, omega: float, metric: str, curve: list[CurvePoint]) -> list[list[Any]]:
    return [[n_r, point.n_o, omega, metric, point.value] for point in curve]
