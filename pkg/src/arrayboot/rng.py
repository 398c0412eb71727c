"""Keyed random-stream derivation for reproducible (parallel) sampling.

Every random draw in this package comes from a stream identified by a
master seed plus a small integer key tuple.  Streams are derived from the
key, not from draw order, so workers can create any subset of streams in
any order and still produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

# Leading key tags, one per consumer, so different subsystems sharing a
# seed never collide on a stream.
TAG_JOINT_LATENT = 1
TAG_SEPARATE_LATENT = 2
TAG_REPLICATE = 3
TAG_MULTIPLIER = 4
TAG_RUN = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def child_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for run ``index``.

    Used by study drivers that hand one integer seed to each simulated
    dataset.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(TAG_RUN, index))
    return int(ss.generate_state(1, np.uint64)[0])
