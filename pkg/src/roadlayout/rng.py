"""Counter-based SplitMix64 random numbers.

Every draw is ``mix64(seed + counter * GOLDEN_GAMMA)`` so a stream is fully
determined by its 64-bit seed, independent of platform or numpy version.
The mixing constants are the ones published with SplitMix64 (Steele, Lea and
Flood, 2014):

    GOLDEN_GAMMA = 0x9E3779B97F4A7C15
    MIX1         = 0xBF58476D1CE4E5B9
    MIX2         = 0x94D049BB133111EB
"""

from __future__ import annotations

import math
from typing import Sequence

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
SPLIT_TAG = 0x5DEECE66D1F3A9B7


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def split(seed: int, index: int) -> int:
    """Derive the sub-seed of stream ``index`` from ``seed``.

    Sub-seeds depend only on ``(seed, index)``, so element ``i`` of a batch is
    reproducible without generating elements ``0..i-1``.
    """
    if index < 0:
        raise ValueError("index must be nonnegative")
    return mix64(mix64(seed ^ SPLIT_TAG) + (index + 1) * GOLDEN_GAMMA)


class CounterRNG:
    """Small deterministic generator built on :func:`mix64`."""

    __slots__ = ("seed", "counter", "_spare")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0
        self._spare: float | None = None

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.seed + self.counter * GOLDEN_GAMMA)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def randint(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() >> 11) * n >> 53

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        # Box-Muller; the second variate is cached
        if self._spare is not None:
            z, self._spare = self._spare, None
            return mean + std * z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return mean + std * r * math.cos(2.0 * math.pi * u2)

    def truncated_normal(self, mean: float, std: float, low: float, high: float) -> float:
        # bounds used here keep the acceptance rate well above 50 %
        while True:
            x = self.normal(mean, std)
            if low <= x <= high:
                return x

    def categorical(self, weights: Sequence[float]) -> int:
        total = float(sum(weights))
        if total <= 0:
            raise ValueError("categorical weights must have positive mass")
        u = self.uniform() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        return last
