"""Named random streams derived from a single integer seed.

Every subsystem draws from its own stream (``stream(seed, "sampler")``,
``stream(seed, "init")`` ...), so adding draws in one place never shifts the
numbers seen by another.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
