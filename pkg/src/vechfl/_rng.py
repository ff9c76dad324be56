"""Named, independent random streams derived from one experiment seed.

Every consumer (mobility of vehicle n, SGD of a cell, a scheduler in round g)
gets its own generator keyed by a tuple, so results do not depend on the order
in which unrelated components draw numbers.
"""
from __future__ import annotations

import zlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Generator for the (seed, *keys) stream."""
    seed = int(seed)
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    for key in keys:
        w = _word(key)
        # split wide ints into 32-bit words so big ids stay distinct
        while True:
            words.append(w & 0xFFFFFFFF)
            w >>= 32
            if not w:
                break
    return np.random.default_rng(np.random.SeedSequence(words))
