"""Deterministic random streams built on SplitMix64.

Every stochastic choice in the toolkit (subset sampling, task noise, weight
init, batch shuffles, bootstrap draws) flows through these streams so that
runs are bit-reproducible across platforms and easy to re-implement in other
languages: the generator is the public-domain SplitMix64 finalizer and all
derived quantities are specified in terms of its 64-bit outputs.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 output function applied to a single 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def subset_stream_seed(seed: int, subset_index: int) -> int:
    # Fixed cross-language rule: stream i is seeded with seed XOR (i+1)*GOLDEN.
    return (seed ^ ((subset_index + 1) * GOLDEN)) & MASK64


def derive_seed(seed: int, *words: int) -> int:
    """Fold integer words into a seed, one mix round per word.

    Used to give independent substreams (task noise vs. weight init vs.
    batch order) to components that share one user-facing seed.
    """
    h = seed & MASK64
    for w in words:
        h = mix64(h ^ (((w + 1) * GOLDEN) & MASK64))
    return h


class SplitMix64:
    """Scalar SplitMix64 stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by modulo reduction.

        Modulo bias is < n / 2**64, irrelevant at toolkit scales, and the
        rule is trivial to reproduce elsewhere.
        """
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def next_float(self) -> float:
        # 53-bit mantissa, uniform in (0, 1].
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def u64_array(self, count: int) -> np.ndarray:
        """Next `count` outputs as a uint64 array (vectorized finalizer)."""
        start = self.state
        idx = np.arange(1, count + 1, dtype=np.uint64)
        z = (np.uint64(start) + idx * np.uint64(GOLDEN)).astype(np.uint64)
        self.state = (start + count * GOLDEN) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def floats(self, count: int) -> np.ndarray:
        """Uniform (0, 1] doubles."""
        return ((self.u64_array(count) >> np.uint64(11)) + np.uint64(1)) * 2.0**-53

    def uniform(self, low: float, high: float, count: int) -> np.ndarray:
        return low + (high - low) * self.floats(count)

    def normal(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive float pairs."""
        pairs = (count + 1) // 2
        u = self.floats(2 * pairs)
        u1, u2 = u[:pairs], u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:count]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of 0..n-1."""
        order = list(range(n))
        draws = self.u64_array(max(n - 1, 0)).tolist()
        for i in range(n - 1):
            j = i + draws[i] % (n - i)
            order[i], order[j] = order[j], order[i]
        return np.asarray(order, dtype=np.int64)

    def choose(self, n: int, k: int) -> np.ndarray:
        """k distinct ids from 0..n-1 by partial Fisher-Yates, unsorted."""
        if not 0 <= k <= n:
            raise ValueError("need 0 <= k <= n")
        ids = list(range(n))
        draws = self.u64_array(k).tolist()
        for i in range(k):
            j = i + draws[i] % (n - i)
            ids[i], ids[j] = ids[j], ids[i]
        return np.asarray(ids[:k], dtype=np.int64)


def sample_subset(seed: int, subset_index: int, num_classes: int, subset_size: int) -> np.ndarray:
    """The manifest sampling rule: partial Fisher-Yates, then ascending sort."""
    stream = SplitMix64(subset_stream_seed(seed, subset_index))
    return np.sort(stream.choose(num_classes, subset_size))
