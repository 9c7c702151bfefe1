"""Deterministic random number generation.

Every random decision in the package (weight init, dataset synthesis,
shuffling, augmentation) flows through this generator so that outputs are
reproducible bit-for-bit across runs and across reimplementations. The
algorithm, written out so another implementation can match it exactly:

* Seeding: splitmix64. State ``z`` starts at the 64-bit seed; each draw does
  ``z = (z + 0x9E3779B97F4A7C15) mod 2^64`` then returns
  ``mix(z)`` where ``mix`` is the two-round xor-multiply finalizer
  ``(z ^ z>>30) * 0xBF58476D1CE4E5B9``, ``(z ^ z>>27) * 0x94D049BB133111EB``,
  ``z ^ z>>31`` (all mod 2^64). Four such draws form the xoshiro state.
* Stream: xoshiro256++ (xorshift family). Output is
  ``rotl(s0 + s3, 23) + s0``; the state update is the standard
  ``t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t;
  s3 = rotl(s3, 45)``.
* Floats: ``next_u64() >> 11`` scaled by ``2^-53``, giving uniforms in [0, 1).
* Substreams: ``derive(seed, *tags)`` hashes the tag words into the seed with
  splitmix64 steps, so independent purposes (shuffle of epoch k, flip of step
  s, image i attempt a) get decorrelated deterministic streams.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def splitmix64(seed: int, n: int) -> list[int]:
    """First n outputs of the splitmix64 stream started at seed."""
    z = seed & _MASK
    out = []
    for _ in range(n):
        z = (z + _GAMMA) & _MASK
        out.append(_mix(z))
    return out


def derive(seed: int, *tags: int) -> int:
    """Deterministically fold integer tags into a seed for a substream."""
    z = seed & _MASK
    for t in tags:
        z = _mix((z + _GAMMA + (t & _MASK)) & _MASK)
    return z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256++ seeded via splitmix64."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = splitmix64(self.seed, 4)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & _MASK, 23) + s0) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive (rejection-free modulo is
        fine here: ranges are tiny relative to 2^64)."""
        if hi < lo:
            raise ValueError(f"randint range empty: [{lo}, {hi}]")
        span = hi - lo + 1
        return lo + self.next_u64() % span

    def choice(self, items):
        return items[self.randint(0, len(items) - 1)]

    def bernoulli(self, p: float = 0.5) -> bool:
        return self.random() < p

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def uniform_array(self, lo: float, hi: float, shape, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        flat = np.empty(n, dtype=np.float64)
        for i in range(n):
            flat[i] = self.random()
        return (lo + (hi - lo) * flat).reshape(shape).astype(dtype)
