"""Seeded SplitMix64 generator.

Every random draw in the package goes through :class:`SplitMix64`. The
generator is counter based: output ``i`` is ``mix(seed + (i + 1) * GAMMA)``,
which lets whole blocks be produced with vectorized uint64 arithmetic while
staying bit-identical to the scalar recurrence.
"""

from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """Scalar SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tags: int | str) -> int:
    """Deterministically derive a child seed from ``seed`` and a tag path."""
    s = seed & MASK64
    for tag in tags:
        if isinstance(tag, str):
            t = int.from_bytes(tag.encode("utf-8")[:32].ljust(32, b"\0"), "little")
            t = mix64(t) ^ mix64(t >> 64) ^ mix64(t >> 128) ^ mix64(t >> 192)
        else:
            t = int(tag) & MASK64
        s = mix64(s ^ mix64((t + GAMMA) & MASK64))
    return s


class SplitMix64:
    """SplitMix64 stream with vectorized block output."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            z = np.uint64(self.state) + steps
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """``n`` doubles in ``[low, high)`` built from the top 53 bits."""
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return low + (high - low) * u

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; consumes ``2 * ceil(n / 2)`` outputs."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * math.pi * u2), r * np.sin(2 * math.pi * u2)])
        return z[:n]

    def laplace(self, n: int, scale: float) -> np.ndarray:
        """Laplace(0, scale) draws by inverse CDF."""
        u = self.uniform(n) - 0.5
        return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def below(self, bounds: np.ndarray) -> np.ndarray:
        """One integer in ``[0, b)`` for each entry of ``bounds``.

        Uses Lemire's multiply-shift on 32-bit draws; bias is below 2**-32 * b,
        irrelevant for the sizes handled here.
        """
        bounds = np.asarray(bounds, dtype=np.uint64)
        hi32 = self.u64(len(bounds)) >> np.uint64(32)
        with np.errstate(over="ignore"):
            return ((hi32 * bounds) >> np.uint64(32)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        # swap positions i and j_i for i = n-1 .. 1
        js = self.below(np.arange(n, 1, -1, dtype=np.uint64))
        p = perm.tolist()
        for i, j in zip(range(n - 1, 0, -1), js.tolist()):
            p[i], p[j] = p[j], p[i]
        return np.asarray(p, dtype=np.int64)

    def shuffle(self, items):
        """Return a new array holding ``items`` in Fisher-Yates shuffled order."""
        items = np.asarray(items)
        return items[self.permutation(len(items))]

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``."""
        if size > n:
            raise ValueError("cannot draw more distinct items than available")
        return self.permutation(n)[:size]
