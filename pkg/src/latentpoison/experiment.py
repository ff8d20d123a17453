"""Experiment plans and the end-to-end pipeline behind the CLI.

A plan pins every knob of one experiment: data generation, training,
attack and output location. Running a plan produces checkpoints, a
report, a perturbation dump and image grids in the plan's directory, and
the full plan is echoed into each of them, so any result can be
regenerated from its report alone.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import (
    AttackConfig,
    Perturbation,
    learn_attack_independent,
    learn_attack_poisoning,
    learn_attack_poisoning_class,
)
from .data import Dataset, generate_synthetic, split
from .evaluation import AttackReport, evaluate_attack, pixel_diff
from .models import (
    ClassifierParams,
    TrainConfig,
    VaeParams,
    decode,
    encode_mean,
    train_classifier,
    train_vae,
)
from .attack import apply_perturbation
from .checkpoint import save_checkpoint
from .reporting import render_grid, write_delta, write_report
from .seeds import ATTACK, ATTACK_CLASSIFIER, EVAL_CLASSIFIER, derive_seed

MODES = ("independent", "poisoning", "poisoning+class")
GRID_IMAGES = 16
GRID_COLUMNS = 4


class ExperimentError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass
class ExperimentPlan:
    """Complete configuration of one attack experiment."""

    mode: str = "independent"
    family: str = "additive"
    norm_order: int = 2
    # data
    sample_count: int = 2100
    width: int = 16
    height: int = 16
    test_count: int = 100
    data_seed: int = 7
    # vae / classifier training
    vae_epochs: int = 150
    kl_weight: float = 0.1
    recon_class_weight: float = 1.0
    lr: float = 2e-4
    batch_size: int = 64
    latent_dim: int = 32
    # attack training
    attack_epochs: int = 80
    attack_lr: float = 0.01
    reg_weight: float = 0.01
    # reproducibility and output
    seed: int = 0
    out_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def vae_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.vae_epochs,
            kl_weight=self.kl_weight,
            recon_class_weight=self.recon_class_weight if self.mode == "poisoning+class" else 0.0,
            lr=self.lr,
            batch_size=self.batch_size,
            latent_dim=self.latent_dim,
            seed=self.seed,
        )

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            epochs=self.attack_epochs,
            lr=self.attack_lr,
            reg_weight=self.reg_weight,
            norm_order=self.norm_order,
            family=self.family,
            batch_size=self.batch_size,
            seed=derive_seed(self.seed, ATTACK),
        )


def _stage(name: str):
    def wrap(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise ExperimentError(f"stage {name!r} failed: {exc}") from exc

    return wrap


def make_dataset(plan: ExperimentPlan) -> tuple[Dataset, Dataset]:
    full = generate_synthetic(plan.sample_count, plan.width, plan.height, plan.data_seed)
    return split(full, plan.test_count, plan.data_seed)


def train_artifacts(
    plan: ExperimentPlan, train_set: Dataset
) -> tuple[VaeParams, ClassifierParams | None, Perturbation]:
    """Train whatever the plan's attack mode calls for."""
    vae_config = plan.vae_config()
    attack_config = plan.attack_config()
    if plan.mode == "independent":
        vae = _stage("train-vae")(train_vae, train_set, vae_config)
        attack_clf_config = dataclasses.replace(
            vae_config, seed=derive_seed(plan.seed, ATTACK_CLASSIFIER)
        )
        attack_classifier = _stage("train-attack-classifier")(
            train_classifier, train_set, attack_clf_config, "attack"
        )
        perturbation = _stage("learn-attack")(
            learn_attack_independent, vae, attack_classifier, train_set, attack_config
        )
        return vae, attack_classifier, perturbation
    if plan.mode == "poisoning":
        vae, perturbation = _stage("learn-attack")(
            learn_attack_poisoning, train_set, vae_config, attack_config
        )
        return vae, None, perturbation
    vae, attack_classifier, perturbation = _stage("learn-attack")(
        learn_attack_poisoning_class, train_set, vae_config, attack_config
    )
    return vae, attack_classifier, perturbation


def _grid_images(pixels: np.ndarray, width: int, height: int) -> list[np.ndarray]:
    count = min(GRID_IMAGES, pixels.shape[0])
    return [pixels[i].reshape(height, width) for i in range(count)]


def write_outputs(
    plan: ExperimentPlan,
    report: AttackReport,
    vae: VaeParams,
    eval_classifier: ClassifierParams,
    attack_classifier: ClassifierParams | None,
    perturbation: Perturbation,
    test_set: Dataset,
) -> None:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = plan.as_dict()
    save_checkpoint(vae, out / "vae.ckpt", config=echo)
    save_checkpoint(eval_classifier, out / "eval_classifier.ckpt", config=echo)
    if attack_classifier is not None:
        save_checkpoint(attack_classifier, out / "attack_classifier.ckpt", config=echo)
    save_checkpoint(perturbation, out / "perturbation.ckpt", config=echo)
    write_report(report, out / "report.csv")
    write_delta(perturbation, out / "delta_elements.csv")
    w, h = plan.width, plan.height
    for label, direction in ((1, "1to0"), (0, "0to1")):
        x = test_set.images[test_set.class_indices(label)]
        z = encode_mean(x, vae)
        recon = decode(z, vae).data
        attacked = decode(apply_perturbation(z, perturbation, direction), vae).data
        render_grid(_grid_images(recon, w, h), GRID_COLUMNS, out / f"recon_class{label}.pgm")
        render_grid(_grid_images(attacked, w, h), GRID_COLUMNS, out / f"attacked_{direction}.pgm")
        _, scaled = pixel_diff(vae, perturbation, test_set, direction)
        render_grid(_grid_images(scaled, w, h), GRID_COLUMNS, out / f"diff_{direction}.pgm")


def run_experiment(plan: ExperimentPlan) -> AttackReport:
    """Execute the full pipeline for one plan and write all outputs."""
    train_set, test_set = _stage("data")(make_dataset, plan)
    eval_clf_config = dataclasses.replace(
        plan.vae_config(), seed=derive_seed(plan.seed, EVAL_CLASSIFIER)
    )
    eval_classifier = _stage("train-eval-classifier")(
        train_classifier, train_set, eval_clf_config, "eval"
    )
    vae, attack_classifier, perturbation = train_artifacts(plan, train_set)
    report = _stage("evaluate")(
        evaluate_attack,
        vae,
        perturbation,
        eval_classifier,
        test_set,
        config=plan.as_dict(),
        mode=plan.mode,
    )
    _stage("write-outputs")(
        write_outputs, plan, report, vae, eval_classifier, attack_classifier, perturbation, test_set
    )
    return report


def grid_plans(
    out_root, base: ExperimentPlan | None = None, include_multiplicative: bool = False
) -> list[ExperimentPlan]:
    """One plan per attack mode and norm order (and family, if requested).

    All plans share the base seeds and data, so cross-plan comparisons see
    the same world and differ only in mode, regularization and family.
    """
    base = base or ExperimentPlan()
    families = ("additive", "multiplicative") if include_multiplicative else ("additive",)
    plans = []
    for family in families:
        for mode in MODES:
            for norm_order in (2, 1):
                name = f"{mode.replace('+', '_')}_{family}_l{norm_order}"
                plans.append(
                    dataclasses.replace(
                        base,
                        mode=mode,
                        family=family,
                        norm_order=norm_order,
                        out_dir=str(Path(out_root) / name),
                    )
                )
    return plans


def run_grid(plans: list[ExperimentPlan], workers: int = 1) -> list[AttackReport]:
    """Run independent plans, optionally on parallel threads."""
    if workers <= 1:
        return [run_experiment(plan) for plan in plans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_experiment, plans))
