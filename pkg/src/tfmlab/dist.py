"""Honest-value distributions, median splitting and reproducible bid sampling.

Distributions are finite and discrete with exact rational probabilities.  A
continuous distribution is handled by passing a discretization of it.
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import lcm
from typing import Any, Iterable, Sequence

import mpmath
import numpy as np

from .errors import TFMError
from .rng import bernoulli, uniform_below
from .serialize import fmt_rational, parse_rational

HALF = Fraction(1, 2)


class DistributionError(TFMError, ValueError):
    reason = "InvalidDistribution"


class EmptySupport(DistributionError):
    reason = "EmptySupport"


class NegativeValue(DistributionError):
    reason = "NegativeValue"


class NonPositiveProbability(DistributionError):
    reason = "NonPositiveProbability"


class ProbabilitySumMismatch(DistributionError):
    reason = "ProbabilitySumMismatch"


class Label(str, enum.Enum):
    H = "H"
    L = "L"


@dataclass(frozen=True)
class ValueDistribution:
    """Sorted, deduplicated support of ``(value, probability)`` atoms."""

    support: tuple[tuple[Fraction, Fraction], ...]

    @property
    def values(self) -> tuple[Fraction, ...]:
        return tuple(v for v, _ in self.support)

    @property
    def probs(self) -> tuple[Fraction, ...]:
        return tuple(p for _, p in self.support)

    @cached_property
    def _cumulative(self) -> tuple[int, tuple[int, ...]]:
        # integer cumulative weights over a common denominator
        den = lcm(*(p.denominator for p in self.probs))
        cum, acc = [], 0
        for p in self.probs:
            acc += p.numerator * (den // p.denominator)
            cum.append(acc)
        return den, tuple(cum)

    def prob_below(self, x: Fraction) -> Fraction:
        return sum((p for v, p in self.support if v < x), Fraction(0))

    def prob_at(self, x: Fraction) -> Fraction:
        return sum((p for v, p in self.support if v == x), Fraction(0))

    def prob_above(self, x: Fraction) -> Fraction:
        return sum((p for v, p in self.support if v > x), Fraction(0))

    def to_json(self) -> list[dict[str, str]]:
        return [{"value": fmt_rational(v), "prob": fmt_rational(p)} for v, p in self.support]

    @classmethod
    def from_json(cls, literal: Iterable[dict[str, Any]]) -> "ValueDistribution":
        return make_distribution(
            (parse_rational(a["value"]), parse_rational(a["prob"])) for a in literal
        )


def make_distribution(pairs: Iterable[tuple[Any, Any]]) -> ValueDistribution:
    """Validate and canonicalize ``(value, probability)`` pairs.

    Atoms with equal values are merged.  The probabilities must sum to exactly
    one; no renormalization is attempted.
    """
    merged: dict[Fraction, Fraction] = {}
    for value, prob in pairs:
        v, p = Fraction(value), Fraction(prob)
        if v < 0:
            raise NegativeValue(f"negative value {v}")
        if p <= 0:
            raise NonPositiveProbability(f"probability {p} for value {v} is not positive")
        merged[v] = merged.get(v, Fraction(0)) + p
    if not merged:
        raise EmptySupport("distribution has no atoms")
    total = sum(merged.values(), Fraction(0))
    if total != 1:
        raise ProbabilitySumMismatch(f"probabilities sum to {total}, not 1")
    return ValueDistribution(tuple(sorted(merged.items())))


def uniform(values: Sequence[Any]) -> ValueDistribution:
    p = Fraction(1, len(values)) if values else Fraction(0)
    return make_distribution((v, p) for v in values)


@dataclass(frozen=True)
class MedianSplit:
    """Threshold ``m`` plus the probability that a bid exactly at ``m`` is high.

    Chosen so that a bid drawn from the distribution is labeled H with
    probability exactly one half.
    """

    m: Fraction
    p_below: Fraction
    p_at: Fraction
    high_prob_at_m: Fraction

    def __post_init__(self) -> None:
        p_above = 1 - self.p_below - self.p_at
        if not (0 <= self.high_prob_at_m <= 1):
            raise DistributionError(f"tie probability {self.high_prob_at_m} outside [0,1]")
        if p_above + self.high_prob_at_m * self.p_at != HALF:
            raise DistributionError("split does not give Pr[H] = 1/2")
        if self.p_below > HALF or self.p_below + self.p_at < HALF:
            raise DistributionError(f"{self.m} is not a median")

    @property
    def p_above(self) -> Fraction:
        return 1 - self.p_below - self.p_at

    @property
    def prob_high(self) -> Fraction:
        return self.p_above + self.high_prob_at_m * self.p_at

    def to_json(self) -> dict[str, str]:
        return {
            "m": fmt_rational(self.m),
            "p_below": fmt_rational(self.p_below),
            "p_at": fmt_rational(self.p_at),
            "high_prob_at_m": fmt_rational(self.high_prob_at_m),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "MedianSplit":
        return cls(*(parse_rational(d[k]) for k in ("m", "p_below", "p_at", "high_prob_at_m")))


def split_at(dist: ValueDistribution, m: Any) -> MedianSplit:
    """Split at an explicit threshold ``m``; raises if ``m`` cannot be a median."""
    m = Fraction(m)
    p_below, p_at = dist.prob_below(m), dist.prob_at(m)
    p_above = 1 - p_below - p_at
    if p_at > 0:
        q = (HALF - p_above) / p_at
    elif p_above == HALF:
        q = Fraction(0)
    else:
        raise DistributionError(f"no tie-break at {m} gives Pr[H] = 1/2")
    return MedianSplit(m, p_below, p_at, q)


def median_split(dist: ValueDistribution) -> MedianSplit:
    """Lower median of ``dist`` with the tie-break that makes Pr[H] = 1/2."""
    below = Fraction(0)
    for v, p in dist.support:
        if below <= HALF <= below + p:
            return split_at(dist, v)
        below += p
    raise AssertionError("unreachable: cumulative mass reaches 1")


def label_bid(bid: Fraction, split: MedianSplit, rng: np.random.Generator) -> Label:
    """H above ``m``, L below; a bid equal to ``m`` is H with the split's tie probability.

    The generator is consumed only for bids exactly at ``m``.
    """
    m = split.m
    # integer cross-multiplication: Fraction comparisons dominate simulation time
    diff = bid.numerator * m.denominator - m.numerator * bid.denominator
    if diff > 0:
        return Label.H
    if diff < 0:
        return Label.L
    return Label.H if bernoulli(rng, split.high_prob_at_m) else Label.L


def sample_indices(dist: ValueDistribution, count: int, rng: np.random.Generator) -> list[int]:
    """Support indices of ``count`` i.i.d. draws (inverse CDF on integer weights)."""
    if count <= 0:
        return []
    den, cum = dist._cumulative
    if den <= (1 << 62):
        u = rng.integers(0, den, size=count)
        return np.searchsorted(np.asarray(cum, dtype=np.int64), u, side="right").tolist()
    return [bisect.bisect_right(cum, uniform_below(rng, den)) for _ in range(count)]


def sample_bids(dist: ValueDistribution, count: int, rng: np.random.Generator) -> list[Fraction]:
    values = dist.values
    return [values[i] for i in sample_indices(dist, count, rng)]


def moments(dist: ValueDistribution, prec: int = 128) -> tuple[Fraction, mpmath.mpf, Fraction]:
    """``(E[X], E[sqrt X], max X)``; the square-root moment is computed at ``prec`` bits."""
    expectation = sum((v * p for v, p in dist.support), Fraction(0))
    with mpmath.workprec(prec):
        c = mpmath.fsum(
            mpmath.mpf(p.numerator) / p.denominator
            * mpmath.sqrt(mpmath.mpf(v.numerator) / v.denominator)
            for v, p in dist.support
        )
    return expectation, c, dist.values[-1]
