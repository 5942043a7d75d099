"""Rational and real number (de)serialization used by every JSON surface."""
from __future__ import annotations

from fractions import Fraction
from typing import Any

import mpmath

SPEC_VERSION = "1"


def parse_rational(x: Any) -> Fraction:
    """Accept ints, "p/q" strings, and decimal strings. Floats are rejected."""
    if isinstance(x, bool):
        raise TypeError("boolean is not a rational")
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot parse {x!r} as a rational; use an int or a 'p/q' string")


def fmt_rational(x: Fraction | int) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def fmt_real(x: Any) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, Fraction):
        x = mpmath.mpf(x.numerator) / x.denominator
    return mpmath.nstr(mpmath.mpf(x), 17, min_fixed=-30, max_fixed=30)


def parse_block_size(x: Any) -> int | None:
    """``None``, ``"inf"`` or ``"INFINITE"`` mean an unbounded block."""
    if x is None or (isinstance(x, str) and x.strip().lower() in {"inf", "infinite", "infinity"}):
        return None
    k = int(x)
    if k < 1:
        raise ValueError("block size must be positive")
    return k


def fmt_block_size(k: int | None) -> Any:
    return "INFINITE" if k is None else k
