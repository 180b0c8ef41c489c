"""Deterministic random number generation.

Every stochastic component in the package draws from a single algorithm
family so that a seed fully determines every result on every platform:

* seed mixing / derivation: SplitMix64
* sequential stream: xoshiro256** (Blackman & Vigna)
* bulk tensor-sized draws: counter-mode SplitMix64, keyed from the
  xoshiro stream (one key per request), so large Bernoulli masks can be
  produced with numpy instead of a Python-level loop.

There is no global RNG; callers own `Rng` instances and derive child
streams explicitly via `derive_seed` / `Rng.spawn`.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# FNV-1a 64-bit, used to fold string labels into seed derivation.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return state, z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, *fields: int | str) -> int:
    """Derive a child seed from a master seed and a tuple of labels.

    Fields may be integers (mission index, trial index, raw float bits)
    or strings (task kind).  The derivation is order-sensitive and
    collision-resistant enough for experiment bookkeeping.
    """
    state = master & _MASK64
    for field in fields:
        word = _fnv1a(field) if isinstance(field, str) else field & _MASK64
        state, out = splitmix64(state ^ word)
        state ^= out
    _, out = splitmix64(state)
    return out


def float_bits(x: float) -> int:
    """IEEE-754 bit pattern of a float, for seed derivation from e.g. a BER."""
    return int.from_bytes(np.float64(x).tobytes(), "little")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream seeded through SplitMix64.

    Single-owner and mutable; concurrent tasks must each derive their
    own instance (see `derive_seed`).
    """

    algorithm = "splitmix64+xoshiro256**"
    __slots__ = ("seed", "_s", "_gauss_spare")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        state = self.seed
        s = []
        for _ in range(4):
            state, word = splitmix64(state)
            s.append(word)
        if not any(s):  # xoshiro state must not be all zero
            s[0] = 1
        self._s = s
        self._gauss_spare: float | None = None

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection."""
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def gauss(self) -> float:
        """Standard normal via Box-Muller (pairs cached)."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        u1 = self.uniform()
        while u1 <= 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def poisson(self, lam: float) -> int:
        """Poisson sample by inversion; adequate for small means."""
        if lam <= 0.0:
            return 0
        u = self.uniform()
        p = math.exp(-lam)
        cdf = p
        k = 0
        while u >= cdf and k < 10_000:
            k += 1
            p *= lam / k
            cdf += p
        return k

    def bulk_u64(self, n: int) -> np.ndarray:
        """n pseudo-random uint64 words as a numpy array.

        Keyed from the sequential stream (consumes exactly one xoshiro
        draw), then expanded in counter mode with SplitMix64 so the
        whole block is produced vectorized.
        """
        key = self.next_u64()
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(key) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def bernoulli(self, n: int, p: float) -> np.ndarray:
        """n independent Bernoulli(p) draws as a boolean array."""
        if p <= 0.0:
            return np.zeros(n, dtype=bool)
        if p >= 1.0:
            return np.ones(n, dtype=bool)
        threshold = np.uint64(int(p * 2.0 ** 64))
        return self.bulk_u64(n) < threshold

    def binomial(self, n: int, p: float) -> int:
        """Exact Binomial(n, p) by counting a Bernoulli block."""
        return int(self.bernoulli(n, p).sum())

    def spawn(self, *fields: int | str) -> "Rng":
        """Child stream derived from this stream's seed and labels."""
        return Rng(derive_seed(self.seed, *fields))
