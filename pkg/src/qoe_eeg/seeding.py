"""Seed derivation.

Every random stream in the package comes from one integer seed. Child seeds
are derived with ``numpy.random.SeedSequence(seed, spawn_key=keys)`` where
string keys are mapped to integers with CRC-32, so a stage (a fold, a grid
cell, a channel) can be rerun on its own and still draw the same numbers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def derive(seed: int, *keys) -> int:
    """Return a 63-bit child seed of ``seed`` for the given key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng(seed: int, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator for ``derive(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(derive(seed, *keys)))
