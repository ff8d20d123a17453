"""Attack quality metrics: confidence tables, gap scores, detectability.

All evaluation encodes with the mean head only (no latent sampling), so a
report is a pure function of the trained artifacts and the test set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attack import Perturbation, apply_perturbation
from .data import Dataset
from .models import ClassifierParams, VaeParams, classify, decode, encode_mean

# Half-width of the central interval covering 99.5% of a unit Gaussian.
PRIOR_INTERVAL_HALFWIDTH = 2.807

# An element counts as inactive when below this fraction of the largest one.
SPARSITY_THRESHOLD_RATIO = 0.05

ROW_NAMES = (
    "original_class1",
    "reconstruction_class1",
    "attacked_0to1",
    "original_class0",
    "reconstruction_class0",
    "attacked_1to0",
)


@dataclass
class ConfidenceRow:
    name: str
    mean: float
    sd: float


@dataclass
class AttackReport:
    """Everything one experiment reports about a learned perturbation."""

    mode: str
    family: str
    norm_order: int
    rows: list[ConfidenceRow]
    epsilon_plus: float
    epsilon_minus: float
    detection_probabilities: list[float]
    detection_max: float
    sparsity_fraction: float
    config: dict = field(default_factory=dict)

    def row(self, name: str) -> ConfidenceRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)


def confidence(score, true_label):
    """Score for label 1, complement for label 0; works elementwise."""
    score = np.asarray(score, dtype=np.float64)
    label = np.asarray(true_label)
    out = np.where(label == 1, score, 1.0 - score)
    return float(out) if out.ndim == 0 else out


def _scores(x: np.ndarray, classifier: ClassifierParams) -> np.ndarray:
    return classify(x, classifier).data[:, 0]


def confidence_table(
    vae: VaeParams,
    perturbation: Perturbation,
    classifier: ClassifierParams,
    test_set: Dataset,
) -> list[ConfidenceRow]:
    """Mean and standard deviation of confidence for the six comparison groups.

    Per class: the raw inputs, their reconstructions, and the decoded
    tampered encodings of the opposite class moved into this class.
    Attacked groups are scored against the direction's target label, so a
    perfect attack matches the reconstruction rows exactly.
    """
    if classifier.role != "eval":
        raise ValueError(
            f"confidence tables must use the eval classifier, got role "
            f"{classifier.role!r}"
        )
    x0 = test_set.images[test_set.class_indices(0)]
    x1 = test_set.images[test_set.class_indices(1)]
    if len(x0) == 0 or len(x1) == 0:
        raise ValueError("test set must contain both classes")
    z0, z1 = encode_mean(x0, vae), encode_mean(x1, vae)
    groups = {
        "original_class1": confidence(_scores(x1, classifier), 1),
        "reconstruction_class1": confidence(_scores(decode(z1, vae).data, classifier), 1),
        "attacked_0to1": confidence(
            _scores(decode(apply_perturbation(z0, perturbation, "0to1"), vae).data, classifier), 1
        ),
        "original_class0": confidence(_scores(x0, classifier), 0),
        "reconstruction_class0": confidence(_scores(decode(z0, vae).data, classifier), 0),
        "attacked_1to0": confidence(
            _scores(decode(apply_perturbation(z1, perturbation, "1to0"), vae).data, classifier), 0
        ),
    }
    return [
        ConfidenceRow(name, float(values.mean()), float(values.std()))
        for name, values in groups.items()
    ]


def epsilon_gap(rows: list[ConfidenceRow]) -> tuple[float, float]:
    """Signed confidence gaps between reconstructions and attacked groups.

    Returns (plus, minus): plus compares class-1 reconstructions with the
    0-to-1 attacked group, minus compares class-0 reconstructions with the
    1-to-0 attacked group. Values near zero mean tampered outputs score
    like untampered ones; magnitudes are what stealth rankings use.
    """
    by_name = {row.name: row.mean for row in rows}
    plus = by_name["reconstruction_class1"] - by_name["attacked_0to1"]
    minus = by_name["reconstruction_class0"] - by_name["attacked_1to0"]
    return plus, minus


def detection_probability(shift: float, interval_halfwidth: float = PRIOR_INTERVAL_HALFWIDTH) -> float:
    """Chance a unit-Gaussian latent element shifted by ``shift`` leaves the interval.

    With Phi the standard normal CDF and h the half-width, this is
    1 - Phi(h - shift) + Phi(-h - shift); an untouched element already
    falls outside with probability ~0.005 for the default interval.
    """
    def phi(x: float) -> float:
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    return 1.0 - phi(interval_halfwidth - shift) + phi(-interval_halfwidth - shift)


def sparsity_profile(delta: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-element values plus the fraction below 5% of the largest magnitude.

    An all-zero vector counts as fully sparse (fraction 1.0).
    """
    values = np.asarray(delta, dtype=np.float64).copy()
    largest = float(np.abs(values).max()) if values.size else 0.0
    if largest == 0.0:
        return values, 1.0
    fraction = float((np.abs(values) < SPARSITY_THRESHOLD_RATIO * largest).mean())
    return values, fraction


def pixel_diff(
    vae: VaeParams,
    perturbation: Perturbation,
    test_set: Dataset,
    direction: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel change the perturbation causes, per affected test sample.

    Uses the samples whose encodings the given direction tampers with
    (class 0 for "0to1", class 1 for "1to0"). Returns (raw, scaled): the
    signed differences decode(tampered) - decode(untampered), and the same
    data linearly rescaled to [0, 1] for rendering.
    """
    source_label = 0 if direction == "0to1" else 1
    x = test_set.images[test_set.class_indices(source_label)]
    if len(x) == 0:
        raise ValueError(f"test set has no class-{source_label} samples")
    z = encode_mean(x, vae)
    recon = decode(z, vae).data
    attacked = decode(apply_perturbation(z, perturbation, direction), vae).data
    raw = attacked - recon
    lo, hi = float(raw.min()), float(raw.max())
    if hi > lo:
        scaled = (raw - lo) / (hi - lo)
    else:
        scaled = np.full_like(raw, 0.5)
    return raw, scaled


def evaluate_attack(
    vae: VaeParams,
    perturbation: Perturbation,
    classifier: ClassifierParams,
    test_set: Dataset,
    config: dict | None = None,
    mode: str | None = None,
) -> AttackReport:
    """Assemble the full report for one trained attack."""
    rows = confidence_table(vae, perturbation, classifier, test_set)
    plus, minus = epsilon_gap(rows)
    probabilities = [detection_probability(v) for v in perturbation.delta]
    _, sparsity = sparsity_profile(perturbation.delta)
    return AttackReport(
        mode=mode or perturbation.provenance,
        family=perturbation.family,
        norm_order=perturbation.norm_order,
        rows=rows,
        epsilon_plus=plus,
        epsilon_minus=minus,
        detection_probabilities=probabilities,
        detection_max=max(probabilities),
        sparsity_fraction=sparsity,
        config=dict(config or {}),
    )
