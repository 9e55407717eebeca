"""Deterministic child RNG streams derived from a seed plus string tags."""

from __future__ import annotations

import zlib

import numpy as np


def child_rng(seed: int, *tags) -> np.random.Generator:
    """A generator keyed by (seed, tags); stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        entropy.append(zlib.crc32(str(tag).encode("utf-8")))
    return np.random.default_rng(entropy)
