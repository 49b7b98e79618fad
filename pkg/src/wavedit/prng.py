"""Deterministic, platform-independent random streams.

The generator is xoshiro256++ seeded through SplitMix64, implemented on
Python integers so the stream is bit-identical on every platform.  Named
sub-streams are derived by hashing (parent key, label), so adding a new
consumer never shifts the draws seen by an existing one.

Stream consumption is part of each sampler's contract:

* ``next_u64`` consumes one generator output.
* ``uniform_block(n)`` consumes n outputs; u = (x >> 11) * 2**-53 in [0, 1).
* ``gaussian_block(n)`` consumes 2 * ceil(n / 2) outputs via Box-Muller:
  each pair (x0, x1) maps to u1 = ((x0 >> 11) + 1) * 2**-53 in (0, 1],
  u2 = (x1 >> 11) * 2**-53, and yields
  r*cos(2*pi*u2), r*sin(2*pi*u2) with r = sqrt(-2*ln(u1)), in that order.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Prng:
    """xoshiro256++ stream with label-based splitting."""

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self._seed = seed
        sm = seed
        words = []
        for _ in range(4):
            sm, w = _splitmix64(sm)
            words.append(w)
        if not any(words):  # all-zero state is invalid for xoshiro
            words[0] = 1
        self._s = tuple(words)

    @property
    def seed(self) -> int:
        return self._seed

    def split(self, label: str) -> "Prng":
        """Derive an independent child stream; does not consume from self."""
        digest = hashlib.sha256(
            self._seed.to_bytes(8, "little") + b"/" + label.encode("utf-8")
        ).digest()
        return Prng(int.from_bytes(digest[:8], "little"))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        r = (s0 + s3) & _MASK64
        r = ((((r << 23) & _MASK64) | (r >> 41)) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) & _MASK64) | (s3 >> 19)
        self._s = (s0, s1, s2, s3)
        return r

    def _u64_block(self, n: int) -> np.ndarray:
        # Hot path: local-variable loop, one state store at the end.
        s0, s1, s2, s3 = self._s
        mask = _MASK64
        out = [0] * n
        for i in range(n):
            r = (s0 + s3) & mask
            out[i] = ((((r << 23) & mask) | (r >> 41)) + s0) & mask
            t = (s1 << 17) & mask
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) & mask) | (s3 >> 19)
        self._s = (s0, s1, s2, s3)
        return np.array(out, dtype=np.uint64)

    def uniform_block(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in [0, 1), one u64 each."""
        bits = self._u64_block(n)
        return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def gaussian_block(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller (see module docstring)."""
        pairs = (n + 1) // 2
        bits = self._u64_block(2 * pairs)
        u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], rejection-sampled (no modulo bias)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + (x % span)


def sample_gaussian(prng: Prng, shape) -> np.ndarray:
    """Standard-normal grid of the given (channels, height, width) shape."""
    c, h, w = (int(v) for v in shape)
    if min(c, h, w) <= 0:
        raise ValueError(f"invalid grid shape {shape!r}")
    return prng.gaussian_block(c * h * w).reshape(c, h, w)


def sample_uniform(prng: Prng, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    flat = prng.uniform_block(int(np.prod(shape)))
    return (low + (high - low) * flat).reshape(shape)
