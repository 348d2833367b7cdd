"""Scheduling-independent seed derivation."""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Chain ``splitmix64(seed XOR index)`` along ``path``."""
    seed = master & MASK64
    for idx in path:
        seed = splitmix64(seed ^ (idx & MASK64))
    return seed


def rng_for(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))


def tag(name: str) -> int:
    """Stable 64-bit integer for a namespace string."""
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h
