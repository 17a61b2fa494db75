"""Portable pseudo-random generator for synthetic fixtures.

The generator is SplitMix64 (Steele, Lea & Flood's 64-bit finalizer, the same
mix used by Java's SplittableRandom) run in counter mode: draw i of a stream
seeded with s is mix64(s + (i+1) * 0x9E3779B97F4A7C15) mod 2^64. The algorithm
is pinned here on purpose: fixtures must be bit-identical across platforms,
numpy versions, and reimplementations in other languages. Floats are the top
53 bits scaled by 2^-53, giving uniform values in [0, 1).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 stream with a vectorized batch path.

    The batch methods advance the stream exactly as the scalar ones do, so
    mixing scalar and batch draws keeps the stream reproducible.
    """

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK
        self._drawn = 0

    def next_u64(self) -> int:
        self._drawn += 1
        return _mix64(self._state + self._drawn * _GOLDEN)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        threshold = (1 << 64) - ((1 << 64) % bound)
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % bound

    def floats(self, count: int) -> np.ndarray:
        """Batch of `count` uniform floats, identical to `count` next_float calls."""
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        idx = np.arange(self._drawn + 1, self._drawn + count + 1, dtype=np.uint64)
        z = np.uint64(self._state) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self._drawn += count
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
