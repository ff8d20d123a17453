"""Deterministic RNG streams derived from a single master seed.

Every stochastic operation in the package receives a generator obtained
through :func:`stream`, so a run is fully reproducible from the seeds
echoed into its outputs. Stream tags keep the per-purpose generators
decorrelated; per-epoch streams are derived fresh so epoch k does not
depend on how much randomness epoch k-1 consumed.
"""

from __future__ import annotations

import numpy as np

PARAM_INIT = 1
SHUFFLE = 2
LATENT_NOISE = 3
DATA = 4
SPLIT = 5
ATTACK_INIT = 6
ATTACK_CLASSIFIER = 7
EVAL_CLASSIFIER = 8
ATTACK = 9

_MASK = 0xFFFFFFFFFFFFFFFF


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, *path); same inputs, same stream."""
    entropy = [seed & _MASK, *(p & _MASK for p in path)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *path: int) -> int:
    """A printable integer sub-seed for a named artifact."""
    return int(stream(seed, *path).integers(0, 2**63))
