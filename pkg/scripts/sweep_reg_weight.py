#!/usr/bin/env python3
"""Sweep the perturbation penalty weight and report the norm/stealth trade-off.

Trains the VAE and classifiers once, then learns an independent attack at
each penalty weight, printing attack confidence, gap, sparsity and the
worst per-element detection probability.
"""

import argparse
import dataclasses
import sys

import numpy as np

from latentpoison.attack import learn_attack_independent
from latentpoison.evaluation import evaluate_attack
from latentpoison.experiment import ExperimentPlan, make_dataset
from latentpoison.models import train_classifier, train_vae
from latentpoison.seeds import ATTACK_CLASSIFIER, EVAL_CLASSIFIER, derive_seed

WEIGHTS = (0.001, 0.01, 0.1, 1.0)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--norm-order", type=int, choices=(1, 2), default=2)
    parser.add_argument("--family", choices=("additive", "multiplicative"), default="additive")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    plan = ExperimentPlan(norm_order=args.norm_order, family=args.family, seed=args.seed)
    train_set, test_set = make_dataset(plan)
    vae_config = plan.vae_config()
    print("training VAE and classifiers once...")
    vae = train_vae(train_set, vae_config)
    attack_clf = train_classifier(
        train_set,
        dataclasses.replace(vae_config, seed=derive_seed(plan.seed, ATTACK_CLASSIFIER)),
        role="attack",
    )
    eval_clf = train_classifier(
        train_set,
        dataclasses.replace(vae_config, seed=derive_seed(plan.seed, EVAL_CLASSIFIER)),
        role="eval",
    )

    print(f"{'weight':>8s} {'|delta|':>8s} {'attacked 0to1':>14s} {'attacked 1to0':>14s} "
          f"{'|eps|max':>9s} {'sparsity':>9s} {'detection':>10s}")
    for weight in WEIGHTS:
        config = dataclasses.replace(plan.attack_config(), reg_weight=weight)
        perturbation = learn_attack_independent(vae, attack_clf, train_set, config)
        report = evaluate_attack(vae, perturbation, eval_clf, test_set)
        gap = max(abs(report.epsilon_plus), abs(report.epsilon_minus))
        print(
            f"{weight:8.3f} {np.linalg.norm(perturbation.delta):8.3f} "
            f"{report.row('attacked_0to1').mean:14.3f} {report.row('attacked_1to0').mean:14.3f} "
            f"{gap:9.3f} {report.sparsity_fraction:9.3f} {report.detection_max:10.3f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
