"""Deterministic 64-bit generator for parameter and input streams.

SplitMix-style mixing over pure Python integers: the stream depends only on
the seed, never on platform or numpy version.  Weight initialization draws
uniform(-b, b) with b = 1/sqrt(fan_in).
"""
from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Prng:
    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        if seed < 0 or seed > _MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 significant bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def fill(self, shape, bound: float) -> np.ndarray:
        """Row-major array of uniform(-bound, bound) draws, float64."""
        n = int(np.prod(shape))
        vals = np.fromiter(
            ((2.0 * self.uniform() - 1.0) * bound for _ in range(n)),
            dtype=np.float64,
            count=n,
        )
        return vals.reshape(shape)


def init_bound(fan_in: int) -> float:
    return 1.0 / math.sqrt(fan_in)


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def substream(seed: int, label: str) -> Prng:
    """Domain-separated stream: same seed, different labels, unrelated draws."""
    h = _FNV_OFFSET
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return Prng(seed ^ h)
