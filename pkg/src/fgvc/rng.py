"""Seeded, platform-independent pseudo-random numbers.

The scalar stream is xorshift64* whose state is expanded from the seed with
SplitMix64. Bulk array draws use SplitMix64 in counter mode, keyed by one
draw from the scalar stream, so they can be vectorised with numpy uint64
arithmetic while staying bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_XS_MULT = 0x2545F4914F6CDD1D
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64_mix(z: int) -> int:
    """SplitMix64 finaliser applied to a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _splitmix64_array(key: int, n: int) -> np.ndarray:
    counters = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + counters * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Single-owner random stream.

    Not thread-safe. Parallel or per-item work should take its own stream
    from :meth:`stream`, which depends only on the seed and the keys.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        sm = (self.seed + GOLDEN_GAMMA) & MASK64
        state = splitmix64_mix(sm)
        # xorshift state must be non-zero
        self._state = state or GOLDEN_GAMMA

    def stream(self, *keys: int) -> "Rng":
        """Independent child stream derived from the seed and ``keys``."""
        h = self.seed
        for k in keys:
            h = splitmix64_mix((h ^ splitmix64_mix(int(k) + GOLDEN_GAMMA)) + GOLDEN_GAMMA)
        return Rng(h)

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XS_MULT) & MASK64

    def uniform_f64(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return low + (high - low) * self.uniform_f64()

    def integers(self, n: int) -> int:
        """Unbiased integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = self.uniform_f64()
        u2 = self.uniform_f64()
        r = math.sqrt(-2.0 * math.log1p(-u1))
        return mean + std * r * math.cos(2.0 * math.pi * u2)

    def choice(self, probs) -> int:
        """Index drawn with probability proportional to ``probs``."""
        p = np.asarray(probs, dtype=np.float64)
        cdf = np.cumsum(p)
        u = self.uniform_f64() * cdf[-1]
        idx = int(np.searchsorted(cdf, u, side="right"))
        return min(idx, len(p) - 1)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = _splitmix64_array(self.next_u64(), n)
        u = (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return (low + (high - low) * u).reshape(shape)

    def normal_array(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        u1 = self.uniform_array(shape)
        u2 = self.uniform_array(shape)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        return mean + std * r * np.cos(2.0 * np.pi * u2)
