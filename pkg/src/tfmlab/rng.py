"""Random number generation.

Every stochastic routine in tfmlab takes an explicit ``numpy.random.Generator``
backed by PCG64 (O'Neill's permuted congruential generator, 128-bit state).
PCG64 output for a given seed is identical on every platform numpy supports.

Per-trial substreams are derived by hashing ``(seed, index)`` through
``numpy.random.SeedSequence`` so results do not depend on how trials are
scheduled across workers.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """Generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & _MASK64)))


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trial ``index`` under ``seed``."""
    ss = np.random.SeedSequence([seed & _MASK64, index & _MASK64])
    return np.random.Generator(np.random.PCG64(ss))


def uniform_below(rng: np.random.Generator, n: int) -> int:
    """Exactly uniform integer in ``[0, n)`` for arbitrarily large ``n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if n <= (1 << 62):
        return int(rng.integers(0, n))
    nbits = n.bit_length()
    while True:
        x = 0
        got = 0
        while got < nbits:
            x = (x << 32) | int(rng.integers(0, 1 << 32))
            got += 32
        x >>= got - nbits
        if x < n:
            return x


def bernoulli(rng: np.random.Generator, p: Fraction) -> bool:
    """Exact Bernoulli(p) draw for rational ``p`` in [0, 1]."""
    if p <= 0:
        return False
    if p >= 1:
        return True
    return uniform_below(rng, p.denominator) < p.numerator


def random_subset(rng: np.random.Generator, size: int, k: int) -> list[int]:
    """Uniformly random ``k``-subset of ``range(size)``, sorted."""
    if k >= size:
        return list(range(size))
    if k <= 0:
        return []
    return sorted(int(i) for i in rng.choice(size, size=k, replace=False))
