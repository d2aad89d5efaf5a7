"""Deterministic seed derivation.

Every random choice in the toolkit flows from a single 64-bit seed through
the SplitMix64 finalizer, so individual scenes, prompts, and training runs
are reproducible in isolation.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One SplitMix64 step on a 64-bit value (Steele et al. constants)."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Child seed for item `index`: splitmix64(seed XOR index)."""
    return splitmix64((seed ^ index) & _MASK64)


def rng_from(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & _MASK64)
