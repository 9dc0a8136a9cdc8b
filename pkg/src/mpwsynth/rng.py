"""Seeded random streams.

All randomness runs on numpy's Philox4x64 counter-based generator. Child
streams are derived from ``(seed, *path)`` through ``SeedSequence`` so every
consumer (initialisation, shuffling, noise, dropout, projections) owns an
independent, reproducible stream.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``seed`` and an optional stream path."""
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))


# stream ids used by the trainer and experiment runner
INIT, PERMUTE, NOISE, DROPOUT, PROJECT, SAMPLE, DATA, EVAL = range(8)
