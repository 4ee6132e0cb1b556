"""Deterministic splittable randomness.

Every random draw in the package flows from a single integer run seed
plus a path of string/int keys, so any component (dropout mask, shuffle
order, fixture video) can be replayed in isolation without consuming
anyone else's stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"rng keys must be non-negative, got {key}")
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"rng key must be int or str, got {type(key).__name__}")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Child generator at (seed, *keys); the same path replays the same stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_word(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))
