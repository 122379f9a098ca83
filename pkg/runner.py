#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import ValidationError
from pydantic_settings import BaseSettings

from src.config import load_config, parse_value
from src.errors import RewardDenoiseError, SchemaError
from src.gdrc import DEFAULT_CANDIDATES
from src.harness import CHECKPOINT_SUBDIR, THEORY_COLUMNS, diagnostics, run, sweep, theory_rows, write_csv, write_run
from src.perturb import (
    ConfusionMatrix,
    Discretization,
    GaussianNoise,
    gcm_perturb_many,
    uniform_gcm,
)
from src.theory import (
    CurvePoint,
    default_true_rewards,
    min_cross_entropy_curve,
    reconstruction_error_curve,
    snap_max_error,
)


class RunnerSettings(BaseSettings):
    """Process-level defaults, overridable from the environment or .env"""

    workers: int = 1  # worker processes per run
    log_level: str = "INFO"
    output_dir: str = "results"
    seed: int = 0

    class Config:
        env_prefix = "DRC_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


settings = RunnerSettings()

REPO_ROOT = Path(__file__).parent
EXPERIMENTS_DIR = REPO_ROOT / "experiments"


def configure_logging(level: str):
    logger.remove()
    logger.add(sys.stderr, level=level.upper())


def _out_dir(args) -> Path:
    return Path(args.out or settings.output_dir)


def _seed(args) -> int:
    return settings.seed if args.seed is None else args.seed


def _resolve_config(path: Path | None) -> Path | None:
    if path is not None and not path.exists() and (EXPERIMENTS_DIR / path).exists():
        return EXPERIMENTS_DIR / path
    return path


def _channel(args) -> tuple[int, float]:
    """Interval count and noise ratio from the flags, else from --config"""
    noise = load_config(_resolve_config(args.config)).noise if args.config is not None else None
    n_r = args.n_r if args.n_r is not None else (noise.n_r if noise is not None else None)
    if n_r is None:
        raise SchemaError([("noise.n_r", "pass --n-r or a config with noise.n_r")])
    omega = args.omega if args.omega is not None else (noise.omega if noise is not None else 0.5)
    return n_r, omega


def _theory_setup(args) -> tuple[Discretization, ConfusionMatrix, np.ndarray]:
    args.n_r, args.omega = _channel(args)
    disc = Discretization(r_min=args.r_min, r_max=args.r_max, n=args.n_r)
    matrix = uniform_gcm(args.n_r, args.omega)
    if args.reward is not None:
        rewards = np.array(args.reward, dtype=float)
    else:
        rewards = default_true_rewards(disc, np.random.default_rng(_seed(args)), args.per_interval)
    return disc, matrix, rewards


def cmd_ce_curve(args):
    disc, matrix, rewards = _theory_setup(args)
    curves = [min_cross_entropy_curve(disc, matrix, r, args.candidates) for r in rewards]
    mean_curve = [
        CurvePoint(n_o, float(np.mean([curve[i].value for curve in curves]))) for i, n_o in enumerate(args.candidates)
    ]
    path = _out_dir(args) / "ce_curve.csv"
    write_csv(path, THEORY_COLUMNS, theory_rows(args.n_r, args.omega, "min_cross_entropy", mean_curve))
    logger.success(f"cross-entropy curve over {len(rewards)} true rewards written to {path}")


def cmd_recon_curve(args):
    disc, matrix, rewards = _theory_setup(args)
    curve = reconstruction_error_curve(disc, matrix, rewards, args.candidates)
    for point in curve:
        if point.ties:
            logger.warning(f"n_o={point.n_o}: {point.ties} true rewards have a tied mode")
    path = _out_dir(args) / "recon_curve.csv"
    write_csv(path, THEORY_COLUMNS, theory_rows(args.n_r, args.omega, "reconstruction_error", curve))
    logger.success(f"reconstruction-error curve written to {path}")


def cmd_snap_bound(args):
    rng = np.random.default_rng(_seed(args))
    model = GaussianNoise(sigma=args.sigma)
    rows = []
    for n_r in args.n_r:
        disc = Discretization(r_min=args.r_min, r_max=args.r_max, n=n_r)
        error = snap_max_error(model, disc, args.samples, rng)
        logger.info(f"n_r={n_r}: max deviation {error:.6g} (bound {disc.width:.6g})")
        rows.append([n_r, n_r, args.sigma, "snap_max_error", error])
    path = _out_dir(args) / "snap_bound.csv"
    write_csv(path, THEORY_COLUMNS, rows)
    logger.success(f"approximation bound check written to {path}")


def cmd_perturb_sample(args):
    args.n_r, args.omega = _channel(args)
    rng = np.random.default_rng(_seed(args))
    disc = Discretization(r_min=args.r_min, r_max=args.r_max, n=args.n_r)
    rewards = np.full(args.count, args.reward, dtype=float)
    r_tilde, y, y_tilde = gcm_perturb_many(disc, uniform_gcm(args.n_r, args.omega), rewards, rng)
    path = _out_dir(args) / "samples.csv"
    write_csv(path, ["r_true", "r_tilde", "y", "y_tilde"], [list(row) for row in zip(rewards, r_tilde, y, y_tilde)])
    logger.success(f"{args.count} perturbed samples written to {path}")


def _experiment(args):
    config = load_config(_resolve_config(args.config), args.set)
    if args.seed is not None:
        config = config.model_copy(update={"seeds": [args.seed]})
    elif args.seeds is not None:
        config = config.model_copy(update={"seeds": list(range(args.seeds))})
    return config


def _run(args):
    config = _experiment(args)
    out = _out_dir(args)
    return run(config, args.workers or settings.workers, out / CHECKPOINT_SUBDIR, args.resume), out


def cmd_run(args):
    write_run(*_run(args))


def cmd_sweep(args):
    config = _experiment(args)
    values = [parse_value(v) for v in args.values]
    sweep(config, args.axis, values, args.workers or settings.workers, _out_dir(args))


def cmd_diagnostics(args):
    result, out = _run(args)
    write_run(result, out)
    diagnostics(result, out)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="random seed (default DRC_SEED)")
    parser.add_argument("--out", default=None, help="output directory (default DRC_OUTPUT_DIR)")
    parser.add_argument("--config", type=Path, default=None, help="experiment configuration file")


def _theory_args(parser: argparse.ArgumentParser):
    parser.add_argument("--n-r", type=int, default=None, help="perturbation interval count")
    parser.add_argument("--omega", type=float, default=None)
    parser.add_argument("--r-min", type=float, default=0.0)
    parser.add_argument("--r-max", type=float, default=1.0)
    parser.add_argument("--candidates", type=int, nargs="+", default=list(DEFAULT_CANDIDATES))
    parser.add_argument("--reward", type=float, nargs="+", default=None, help="true rewards (default: draws per interval)")
    parser.add_argument("--per-interval", type=int, default=100)


def _experiment_args(parser: argparse.ArgumentParser):
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    parser.add_argument("--seeds", type=int, default=None, help="run seeds 0..N-1")
    parser.add_argument("--workers", type=int, default=None, help="worker processes (default DRC_WORKERS)")


def _leaf(commands, name: str, help_text: str, handler, aliases: tuple[str, ...] = ()) -> argparse.ArgumentParser:
    parser = commands.add_parser(name, help=help_text, aliases=list(aliases))
    _common(parser)
    parser.set_defaults(handler=handler)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Reward denoising under confusion-matrix perturbations")
    commands = parser.add_subparsers(dest="command", required=True)

    theory = commands.add_parser("theory", help="exact curves and bounds").add_subparsers(dest="what", required=True)
    _theory_args(_leaf(theory, "ce-curve", "minimum cross-entropy per candidate interval count", cmd_ce_curve))
    _theory_args(_leaf(theory, "recon-curve", "reconstruction error per candidate interval count", cmd_recon_curve))
    snap = _leaf(theory, "prop1", "continuous-noise approximation bound", cmd_snap_bound, aliases=("snap-bound",))
    snap.add_argument("--n-r", type=int, nargs="+", default=[10, 50, 100])
    snap.add_argument("--sigma", type=float, default=0.3)
    snap.add_argument("--r-min", type=float, default=0.0)
    snap.add_argument("--r-max", type=float, default=1.0)
    snap.add_argument("--samples", type=int, default=100_000)

    perturb = commands.add_parser("perturb", help="noise channel utilities").add_subparsers(dest="what", required=True)
    sample = _leaf(perturb, "sample", "draw GCM-perturbed copies of one reward", cmd_perturb_sample)
    sample.add_argument("--n-r", type=int, default=None)
    sample.add_argument("--omega", type=float, default=None)
    sample.add_argument("--r-min", type=float, default=0.0)
    sample.add_argument("--r-max", type=float, default=1.0)
    sample.add_argument("--reward", type=float, required=True)
    sample.add_argument("--count", type=int, default=10)

    for name, help_text, handler in [
        ("run", "run one experiment over its seeds", cmd_run),
        ("diagnostics", "run and emit critic diagnostics", cmd_diagnostics),
    ]:
        leaf = _leaf(commands, name, help_text, handler)
        _experiment_args(leaf)
        leaf.add_argument(
            "--resume", type=Path, default=None, help="start network critics from an earlier run's critics/ directory"
        )
    sweep_parser = _leaf(commands, "sweep", "run one experiment per value of a config field", cmd_sweep)
    _experiment_args(sweep_parser)
    sweep_parser.add_argument("--axis", required=True, help="dotted config field, e.g. noise.omega")
    sweep_parser.add_argument("--values", nargs="+", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level)
    try:
        args.handler(args)
    except SchemaError as e:
        logger.error(str(e))
        return 1
    except (RewardDenoiseError, ValidationError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
