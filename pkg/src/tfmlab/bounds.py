"""Closed-form epsilon parameters and miner-revenue limits.

Real-valued results are ``mpmath.mpf`` at ``PREC`` bits.  Quantities that are
rational by construction (binomial tails, the dilution factor, the diluted
revenue cap) are returned exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb, isqrt
from typing import Any, Sequence

import mpmath

from .errors import InvalidParameters

PREC = 128


def _mpf(x: Any) -> mpmath.mpf:
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


@dataclass(frozen=True)
class BoundInputs:
    h: int
    n: int
    rho: Fraction
    epsilon_u: Fraction = Fraction(0)
    epsilon_m: Fraction = Fraction(0)
    epsilon_s: Fraction = Fraction(0)
    E_D: Any = Fraction(0)
    C_D: Any = 0

    def __post_init__(self) -> None:
        if not self.n >= self.h >= 1:
            raise InvalidParameters(f"need n >= h >= 1, got n={self.n}, h={self.h}")
        if not 0 < self.rho < 1:
            raise InvalidParameters(f"rho={self.rho} outside (0,1)")
        if min(self.epsilon_u, self.epsilon_m, self.epsilon_s) < 0:
            raise InvalidParameters("epsilon terms must be nonnegative")

    @property
    def epsilon(self) -> Fraction:
        return Fraction(self.epsilon_u) + self.epsilon_m + self.epsilon_s


def bayesian_revenue_limit(inp: BoundInputs) -> mpmath.mpf:
    """h*E(D) + 2(n-h)/rho * (eps + C_D*sqrt(eps))."""
    with mpmath.workprec(PREC):
        eps = _mpf(inp.epsilon)
        slack = 2 * (inp.n - inp.h) / _mpf(inp.rho) * (eps + _mpf(inp.C_D) * mpmath.sqrt(eps))
        return inp.h * _mpf(inp.E_D) + slack


def expost_revenue_limit(bids: Sequence[Any], rho: Any, epsilon: Any) -> mpmath.mpf:
    """2*n*eps/rho + 2*sqrt(eps)/rho * sum(sqrt(b_i)); zero when eps is zero."""
    with mpmath.workprec(PREC):
        eps, r = _mpf(epsilon), _mpf(rho)
        root_sum = mpmath.fsum(mpmath.sqrt(_mpf(b)) for b in bids)
        return 2 * len(bids) * eps / r + 2 * mpmath.sqrt(eps) / r * root_sum


def threshold_epsilon(h: int, m: Any, exponent_divisor: int = 16) -> mpmath.mpf:
    """(h/4)*m*exp(-h/16).  ``exponent_divisor=8`` gives the weaker variant for comparison."""
    with mpmath.workprec(PREC):
        return mpmath.mpf(h) / 4 * _mpf(m) * mpmath.exp(-mpmath.mpf(h) / exponent_divisor)


def binomial_lower_tail(n: int, threshold: Fraction) -> Fraction:
    """Pr[Bin(n, 1/2) < threshold], exactly."""
    total = sum(comb(n, i) for i in range(n + 1) if i < threshold)
    return Fraction(total, 1 << n)


def chernoff_pair(h: int) -> tuple[mpmath.mpf, Fraction]:
    """``(exp(-h/16), Pr[Bin(h,1/2) < h/4])``; asserts the exact tail is below the bound."""
    if h < 1:
        raise InvalidParameters("h must be >= 1")
    with mpmath.workprec(PREC):
        bound = mpmath.exp(-mpmath.mpf(h) / 16)
    tail = binomial_lower_tail(h, Fraction(h, 4))
    if not tail_below(tail, bound):
        raise AssertionError(f"exact tail {tail} exceeds exp(-{h}/16)")
    return bound, tail


def tail_below(exact: Fraction, bound: mpmath.mpf) -> bool:
    with mpmath.workprec(PREC):
        return _mpf(exact) <= bound


def dilution_factor(k: int, T: Fraction, epsilon: Fraction, c: int) -> int:
    """R = max(2c*sqrt(kT/eps), k) rounded up to an integer.

    The square root is resolved exactly: the smallest integer r with
    r^2 >= 4c^2 kT/eps.
    """
    if epsilon <= 0:
        raise InvalidParameters("epsilon must be positive")
    if T < epsilon:
        raise InvalidParameters(f"T={T} must be at least epsilon={epsilon}")
    if k < 1 or c < 1:
        raise InvalidParameters("k and c must be >= 1")
    radicand = Fraction(4 * c * c * k) * T / epsilon
    r = isqrt(radicand.numerator // radicand.denominator)
    while r * r < radicand:
        r += 1
    return max(r, k)


def min_diluted_epsilon(h: int, m: Any) -> mpmath.mpf:
    """Smallest epsilon the diluted mechanism supports: m*(h/2)*exp(-h/16)."""
    return 2 * threshold_epsilon(h, m)


@dataclass(frozen=True)
class DilutedParameters:
    R: int
    mu_bar: Fraction
    min_epsilon: mpmath.mpf
    expected_revenue: mpmath.mpf


def diluted_parameters(k: int, T: Any, epsilon: Any, c: int, h: int, m: Any) -> DilutedParameters:
    T, epsilon, m = Fraction(T), Fraction(epsilon), Fraction(m)
    if h < 1:
        raise InvalidParameters("h must be >= 1")
    R = dilution_factor(k, T, epsilon, c)
    mu_bar = m * min(Fraction(h, 4) * Fraction(k, R), Fraction(k))
    with mpmath.workprec(PREC):
        stated = _mpf(m) * min(
            h * mpmath.sqrt(k * _mpf(epsilon)) / (8 * c * mpmath.sqrt(_mpf(T))),
            mpmath.mpf(h) / 4,
            mpmath.mpf(k),
        )
    return DilutedParameters(R, mu_bar, min_diluted_epsilon(h, m), stated)


def honest_majority_limit(E_D: Any) -> mpmath.mpf:
    return 2 * _mpf(E_D)
