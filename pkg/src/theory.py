"""Exact (sampling-free) views of GCM perturbations.

A GCM perturbation of a single reward is a finite set of atoms. Binning
those atoms under a candidate interval count gives the label distribution
an ideal critic would learn, its entropy (the minimum achievable
cross-entropy) and the expected reconstruction error of the corrected
reward.
"""
from typing import NamedTuple

import numpy as np

from src.errors import ConfigurationError
from src.perturb import (
    ConfusionMatrix,
    Discretization,
    NoiseModel,
    continuous_perturb_many,
    gcm_perturb_many,
    reward_label,
)

PROBABILITY_TOLERANCE = 1e-12


class AtomicDistribution:
    """Finite distribution over distinct reward values"""

    def __init__(self, values, probabilities):
        self.values = np.asarray(values, dtype=float)
        self.probabilities = np.asarray(probabilities, dtype=float)
        if self.values.shape != self.probabilities.shape or self.values.ndim != 1:
            raise ConfigurationError("values and probabilities must be 1-d arrays of equal length")
        if np.any(self.probabilities < 0) or abs(self.probabilities.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ConfigurationError(f"atom probabilities sum to {self.probabilities.sum()!r}, expected 1")
        if np.unique(self.values).size != self.values.size:
            raise ConfigurationError("atom values must be distinct")

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.probabilities.tolist()))

    def __len__(self):
        return self.values.size


class CurvePoint(NamedTuple):
    n_o: int
    value: float
    ties: int = 0


class BinnedAtoms(NamedTuple):
    probabilities: np.ndarray
    clamped: bool


def perturbed_atoms(disc_r: Discretization, matrix: ConfusionMatrix, r: float) -> AtomicDistribution:
    y, _ = reward_label(disc_r, r)
    row = matrix.row(y)
    support = np.flatnonzero(row > 0.0)
    return AtomicDistribution(r + (support - y) * disc_r.width, row[support] / row[support].sum())


def discretize_atoms(atoms: AtomicDistribution, disc_o: Discretization) -> BinnedAtoms:
    labels, clamped = disc_o.labels(atoms.values)
    probabilities = np.zeros(disc_o.n)
    np.add.at(probabilities, labels, atoms.probabilities)
    return BinnedAtoms(probabilities, bool(clamped.any()))


def entropy(probabilities) -> float:
    """Shannon entropy in nats"""
    p = np.asarray(probabilities, dtype=float)
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum())


def _candidate_disc(disc_r: Discretization, n_o: int) -> Discretization:
    return Discretization(r_min=disc_r.r_min, r_max=disc_r.r_max, n=n_o)


def min_cross_entropy_curve(
    disc_r: Discretization, matrix: ConfusionMatrix, r: float, candidates: list[int]
) -> list[CurvePoint]:
    atoms = perturbed_atoms(disc_r, matrix, r)
    return [
        CurvePoint(n_o, entropy(discretize_atoms(atoms, _candidate_disc(disc_r, n_o)).probabilities))
        for n_o in candidates
    ]


def _expected_error(atoms: AtomicDistribution, disc_o: Discretization, r: float) -> tuple[float, bool]:
    binned = discretize_atoms(atoms, disc_o).probabilities
    y_hat = int(np.argmax(binned))
    tied = int(np.count_nonzero(binned == binned[y_hat])) > 1
    y_tilde, _ = disc_o.labels(atoms.values)
    corrected = atoms.values + disc_o.width * (y_hat - y_tilde)
    return float(np.dot(atoms.probabilities, np.abs(corrected - r))), tied


def reconstruction_error_curve(
    disc_r: Discretization, matrix: ConfusionMatrix, true_rewards, candidates: list[int]
) -> list[CurvePoint]:
    """Expected |r_hat - r| of an ideal critic, averaged over `true_rewards`.

    Argmax ties resolve to the lowest label; their count is reported per point.
    """
    true_rewards = np.asarray(true_rewards, dtype=float)
    all_atoms = [perturbed_atoms(disc_r, matrix, r) for r in true_rewards]
    curve = []
    for n_o in candidates:
        disc_o = _candidate_disc(disc_r, n_o)
        errors, ties = [], 0
        for r, atoms in zip(true_rewards, all_atoms):
            error, tied = _expected_error(atoms, disc_o, r)
            errors.append(error)
            ties += int(tied)
        curve.append(CurvePoint(n_o, float(np.mean(errors)), ties))
    return curve


def default_true_rewards(disc_r: Discretization, rng: np.random.Generator, per_interval: int = 100) -> np.ndarray:
    """`per_interval` uniform draws inside every interval of disc_r"""
    offsets = rng.random((disc_r.n, per_interval))
    lows = disc_r.r_min + np.arange(disc_r.n)[:, None] * disc_r.width
    rewards = lows + offsets * disc_r.width
    # stay strictly inside each interval
    return np.minimum(rewards, lows + np.nextafter(disc_r.width, 0.0)).reshape(-1)


def snap_max_error(model: NoiseModel, disc: Discretization, samples: int, rng: np.random.Generator) -> float:
    """Largest gap between a continuous perturbation and its GCM snap.

    True rewards are drawn uniformly over the range; each perturbed draw is
    clamped into the range and replaced by the true reward shifted by whole
    intervals onto the perturbed draw's interval. The gap never exceeds the
    interval width.
    """
    r = rng.uniform(disc.r_min, disc.r_max, size=samples)
    perturbed = np.clip(continuous_perturb_many(model, r, rng), disc.r_min, np.nextafter(disc.r_max, disc.r_min))
    y, _ = disc.labels(r)
    y_bar, _ = disc.labels(perturbed)
    snapped = r + (y_bar - y) * disc.width
    return float(np.max(np.abs(snapped - perturbed)))


def empirical_label_distribution(
    disc_r: Discretization,
    matrix: ConfusionMatrix,
    r: float,
    disc_o: Discretization,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte-Carlo counterpart of discretize_atoms(perturbed_atoms(...), disc_o)"""
    r_tilde, _, _ = gcm_perturb_many(disc_r, matrix, np.full(samples, r), rng)
    labels, _ = disc_o.labels(r_tilde)
    return np.bincount(labels, minlength=disc_o.n) / samples


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
