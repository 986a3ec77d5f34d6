"""Portable seeded randomness for split generation.

Dataset splits have to reproduce bit-for-bit across platforms and across
independent implementations of this pipeline, so everything here is built on
SplitMix64 (a fixed, public-domain 64-bit generator) rather than on a
platform RNG. Classifier training uses numpy's PCG64 instead, seeded from
values derived here; that contract is same-seed determinism, not
cross-implementation portability.
"""

from __future__ import annotations

from typing import Iterable, Sequence, TypeVar

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

T = TypeVar("T")


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free via rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


def shuffled(items: Iterable[T], seed: int) -> list[T]:
    """Fisher-Yates shuffle driven by ``SplitMix64(seed)``; input untouched."""
    out = list(items)
    gen = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = gen.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def derive_seed(*parts: int) -> int:
    """Mix integer components into one 64-bit seed (order-sensitive)."""
    h = len(parts) & _MASK64
    for p in parts:
        h = _mix64((h + _GAMMA + (p & _MASK64)) & _MASK64)
    return h


def sample_prefix(items: Sequence[T], count: int, seed: int) -> list[T]:
    """First ``count`` elements of one seeded permutation.

    Using a permutation prefix (instead of independent draws) makes samples
    taken at increasing counts nested: the 20% sample is a subset of the 40%
    sample for the same seed.
    """
    if count >= len(items):
        return list(items)
    return shuffled(items, seed)[:count]
