"""Deterministic random number generation for reproducible synthesis.

All randomness in the package flows from a single 64-bit seed through
xoshiro256** (Blackman & Vigna), seeded via splitmix64. Both update
functions are implemented here in full so streams are identical across
platforms and library versions.

splitmix64 (used only to expand the seed into the 256-bit state):

    z = (state += 0x9E3779B97F4A7C15)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

xoshiro256** next():

    result = rotl(s1 * 5, 7) * 9
    t = s1 << 17
    s2 ^= s0;  s3 ^= s1;  s1 ^= s2;  s0 ^= s3
    s2 ^= t
    s3 = rotl(s3, 45)
    return result

All arithmetic is modulo 2^64. Uniform doubles take the top 53 bits of a
64-bit draw; Gaussians use the Box-Muller transform on two uniforms.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** stream seeded from a single 64-bit integer."""

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        state = seed
        s = []
        for _ in range(4):
            state, value = _splitmix64(state)
            s.append(value)
        # The all-zero state is invalid; splitmix64 cannot produce it from
        # any seed, but guard anyway.
        if not any(s):
            s[0] = 0x9E3779B97F4A7C15
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller; pairs drawn in order."""
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = self.uniform()
            u2 = self.uniform()
            # Guard log(0); u1 == 0 has probability 2^-53 per draw.
            while u1 <= 0.0:
                u1 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            i += 1
            if i < n:
                out[i] = r * math.sin(2.0 * math.pi * u2)
                i += 1
        return out

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection on the top range."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % bound)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % bound

    def choose(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), by partial Fisher-Yates.

        Returned indices are the first k entries of the shuffled range,
        sorted ascending for stable downstream iteration.
        """
        if not 0 <= k <= n:
            raise ValueError("need 0 <= k <= n")
        idx = np.arange(n)
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(idx[:k])
