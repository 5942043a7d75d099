"""Transaction fee mechanisms executed by a trusted in-process ideal functionality.

Every mechanism here is label based: a bid is H (a candidate) or L according to
the median split, confirmed bids pay ``m``, and the miner revenue depends only
on labels and, for finite blocks, on how many candidates there are.

Besides the seeded executors (``run_*``) the module provides
``exact_outcome_distribution``, which enumerates the mechanism's randomness
instead of sampling it.
"""
from __future__ import annotations

import enum
import itertools
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from math import comb, floor
from typing import Any, Iterator, Sequence

import numpy as np

from . import bounds
from .dist import Label, MedianSplit, label_bid
from .errors import InvalidParameters, TFMError
from .lpsolve import LPSolution
from .rng import bernoulli, random_subset
from .serialize import fmt_block_size, fmt_rational, parse_block_size, parse_rational


ZERO = Fraction(0)


class IndexOutOfRange(TFMError, IndexError):
    reason = "IndexOutOfRange"


@dataclass(frozen=True)
class Environment:
    """(h, rho, c, d) strategic setting plus block size (``None`` = infinite)."""

    h: int
    rho: Fraction
    c: int
    d: int
    block_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rho", Fraction(self.rho))
        if self.h < 1:
            raise InvalidParameters("h must be >= 1")
        if not 0 < self.rho < 1:
            raise InvalidParameters(f"rho={self.rho} outside (0,1)")
        if not self.d >= self.c >= 1:
            raise InvalidParameters(f"need d >= c >= 1 (c={self.c}, d={self.d})")
        if self.block_size is not None and self.block_size < 1:
            raise InvalidParameters("block size must be positive")

    @property
    def k(self) -> int | None:
        return self.block_size

    def to_json(self) -> dict[str, Any]:
        return {
            "h": self.h,
            "rho": fmt_rational(self.rho),
            "c": self.c,
            "d": self.d,
            "block_size": fmt_block_size(self.block_size),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Environment":
        return cls(
            h=int(d["h"]),
            rho=parse_rational(d["rho"]),
            c=int(d["c"]),
            d=int(d["d"]),
            block_size=parse_block_size(d.get("block_size")),
        )


class Kind(str, enum.Enum):
    PARITY = "Parity"
    THRESHOLD = "Threshold"
    LP = "LP"
    LP_RANDOM_SELECT = "LPRandomSelect"
    DILUTED_THRESHOLD = "DilutedThreshold"


LP_KINDS = (Kind.LP, Kind.LP_RANDOM_SELECT)


@dataclass(frozen=True)
class MechanismSpec:
    kind: Kind
    split: MedianSplit
    env: Environment
    lp_solution: LPSolution | None = None
    epsilon: Fraction | None = None
    T: Fraction | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        k = self.env.block_size
        if self.kind in (Kind.PARITY, Kind.THRESHOLD) and k is not None:
            raise InvalidParameters(f"{self.kind.value} needs an infinite block")
        if self.kind in (Kind.LP_RANDOM_SELECT, Kind.DILUTED_THRESHOLD) and k is None:
            raise InvalidParameters(f"{self.kind.value} needs a finite block size")
        if self.kind in LP_KINDS:
            sol = self.lp_solution
            if sol is None:
                raise InvalidParameters("LP mechanisms need an lp_solution")
            if sol.m != self.split.m:
                raise InvalidParameters(f"lp_solution.m={sol.m} differs from median {self.split.m}")
            if sol.k != k:
                raise InvalidParameters(f"lp_solution.k={sol.k} differs from block size {k}")
        if self.kind is Kind.DILUTED_THRESHOLD:
            if self.epsilon is None or self.T is None:
                raise InvalidParameters("diluted threshold needs epsilon and T")
            object.__setattr__(self, "epsilon", Fraction(self.epsilon))
            object.__setattr__(self, "T", Fraction(self.T))
            bounds.dilution_factor(k, self.T, self.epsilon, self.env.c)
            floor_eps = bounds.min_diluted_epsilon(self.env.h, self.split.m)
            if not bounds._mpf(self.epsilon) >= floor_eps:
                raise InvalidParameters(
                    f"epsilon={self.epsilon} below the supported minimum {float(floor_eps):.6g}"
                )

    @property
    def m(self) -> Fraction:
        return self.split.m

    @cached_property
    def R(self) -> int:
        return bounds.dilution_factor(self.env.block_size, self.T, self.epsilon, self.env.c)

    @cached_property
    def mu_bar(self) -> Fraction:
        """Threshold revenue paid when ``4s >= h``."""
        h = self.env.h
        if self.kind is Kind.THRESHOLD:
            return Fraction(h, 4) * self.m
        if self.kind is Kind.DILUTED_THRESHOLD:
            k = self.env.block_size
            return self.m * min(Fraction(h, 4) * Fraction(k, self.R), Fraction(k))
        raise AttributeError(f"{self.kind.value} has no threshold revenue")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "kind": self.kind.value,
            "split": self.split.to_json(),
            "environment": self.env.to_json(),
        }
        if self.lp_solution is not None:
            out["lp_solution"] = self.lp_solution.to_json()
        if self.epsilon is not None:
            out["epsilon"] = fmt_rational(self.epsilon)
        if self.T is not None:
            out["T"] = fmt_rational(self.T)
        return out

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "MechanismSpec":
        return cls(
            kind=Kind(d["kind"]),
            split=MedianSplit.from_json(d["split"]),
            env=Environment.from_json(d["environment"]),
            lp_solution=LPSolution.from_json(d["lp_solution"]) if d.get("lp_solution") else None,
            epsilon=parse_rational(d["epsilon"]) if d.get("epsilon") is not None else None,
            T=parse_rational(d["T"]) if d.get("T") is not None else None,
        )


@dataclass(frozen=True)
class Outcome:
    confirmed: tuple[bool, ...]
    payments: tuple[Fraction, ...]
    miner_revenue: Fraction
    labels: tuple[Label, ...] = ()

    @property
    def total_payment(self) -> Fraction:
        return sum(self.payments, Fraction(0))

    def violations(self, bids: Sequence[Fraction]) -> list[str]:
        """Individual rationality and budget feasibility problems, if any."""
        out = []
        for i, (b, x, p) in enumerate(zip(bids, self.confirmed, self.payments)):
            if x and p > b:
                out.append(f"bid {i} pays {p} > bid {b}")
            if not x and p != 0:
                out.append(f"unconfirmed bid {i} pays {p}")
        if self.miner_revenue > self.total_payment:
            out.append(f"revenue {self.miner_revenue} exceeds payments {self.total_payment}")
        if self.miner_revenue < 0:
            out.append(f"negative revenue {self.miner_revenue}")
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "confirmed": list(self.confirmed),
            "payments": [fmt_rational(p) for p in self.payments],
            "miner_revenue": fmt_rational(self.miner_revenue),
            "labels": [lab.value for lab in self.labels],
        }


def _labels(bids: Sequence[Fraction], split: MedianSplit, rng: np.random.Generator) -> list[Label]:
    return [label_bid(b, split, rng) for b in bids]


def _confirm(n: int, chosen: Sequence[int], m: Fraction) -> tuple[tuple[bool, ...], tuple[Fraction, ...]]:
    confirmed = [False] * n
    for i in chosen:
        confirmed[i] = True
    return tuple(confirmed), tuple(m if x else ZERO for x in confirmed)


def parity_groups(n: int, c: int) -> list[range]:
    """Consecutive groups of size ``c+1``; the last absorbs the remainder."""
    count = n // (c + 1)
    groups = [range(g * (c + 1), (g + 1) * (c + 1)) for g in range(count)]
    if groups:
        groups[-1] = range(groups[-1].start, n)
    return groups


def _parity_outcome(labels: Sequence[Label], order: Sequence[int], c: int, m: Fraction):
    n = len(labels)
    chosen, revenue = [], Fraction(0)
    for grp in parity_groups(n, c):
        members = [order[p] for p in grp]
        highs = [i for i in members if labels[i] is Label.H]
        if len(highs) % 2 == 1:
            chosen.extend(highs)
            revenue += m
    return chosen, revenue


def run_parity(bids: Sequence[Fraction], spec: MechanismSpec, rng: np.random.Generator) -> Outcome:
    """Grouped parity mechanism.

    Bids are labeled, placed in a uniformly random order, and cut into
    ``n // (c+1)`` groups.  A group with an odd number of H bids confirms its H
    bids at price ``m`` and pays ``m`` to the miners.
    """
    labels = _labels(bids, spec.split, rng)
    order = [int(i) for i in rng.permutation(len(bids))]
    chosen, revenue = _parity_outcome(labels, order, spec.env.c, spec.m)
    confirmed, payments = _confirm(len(bids), chosen, spec.m)
    return Outcome(confirmed, payments, revenue, tuple(labels))


def run_threshold(bids: Sequence[Fraction], spec: MechanismSpec, rng: np.random.Generator) -> Outcome:
    labels = _labels(bids, spec.split, rng)
    cands = [i for i, lab in enumerate(labels) if lab is Label.H]
    revenue = spec.mu_bar if 4 * len(cands) >= spec.env.h else Fraction(0)
    confirmed, payments = _confirm(len(bids), cands, spec.m)
    return Outcome(confirmed, payments, revenue, tuple(labels))


def lp_revenue(spec: MechanismSpec, s: int) -> Fraction:
    y = spec.lp_solution.y
    if s >= len(y):
        raise IndexOutOfRange(f"{s} candidates but the LP solution covers only 0..{len(y) - 1}")
    return y[s]


def run_lp(bids: Sequence[Fraction], spec: MechanismSpec, rng: np.random.Generator) -> Outcome:
    """LP-based mechanism, with uniform random selection when the block is finite.

    Revenue is ``y_s`` keyed on the candidate count ``s``.
    """
    labels = _labels(bids, spec.split, rng)
    cands = [i for i, lab in enumerate(labels) if lab is Label.H]
    revenue = lp_revenue(spec, len(cands))
    k = spec.env.block_size
    if k is not None and len(cands) > k:
        cands = [cands[i] for i in random_subset(rng, len(cands), k)]
    confirmed, payments = _confirm(len(bids), cands, spec.m)
    return Outcome(confirmed, payments, revenue, tuple(labels))


def diluted_count_distribution(spec: MechanismSpec, s: int) -> list[tuple[int, Fraction]]:
    """Distribution of the number of confirmed candidates given ``s`` candidates."""
    k, R = spec.env.block_size, spec.R
    if s > R:
        return [(k, Fraction(1))]
    x = Fraction(k * s, R)
    lo = floor(x)
    frac = x - lo
    if frac == 0:
        return [(lo, Fraction(1))]
    return [(lo, 1 - frac), (lo + 1, frac)]


def diluted_revenue(spec: MechanismSpec, s: int, confirmed_count: int) -> Fraction:
    if 4 * s < spec.env.h:
        return Fraction(0)
    return min(spec.mu_bar, spec.m * confirmed_count)


def run_diluted_threshold(bids: Sequence[Fraction], spec: MechanismSpec, rng: np.random.Generator) -> Outcome:
    """Diluted threshold mechanism.

    With ``s <= R`` candidates, ``k*s/R`` of them are confirmed in expectation
    (floor plus a Bernoulli on the fractional part), so each candidate is
    confirmed with probability exactly ``k/R``.  Otherwise ``k`` are chosen.
    """
    labels = _labels(bids, spec.split, rng)
    cands = [i for i, lab in enumerate(labels) if lab is Label.H]
    s = len(cands)
    k, R = spec.env.block_size, spec.R
    if s > R:
        count = k
    else:
        x = Fraction(k * s, R)
        count = floor(x) + int(bernoulli(rng, x - floor(x)))
    chosen = [cands[i] for i in random_subset(rng, s, count)]
    confirmed, payments = _confirm(len(bids), chosen, spec.m)
    return Outcome(confirmed, payments, diluted_revenue(spec, s, count), tuple(labels))


_RUNNERS = {
    Kind.PARITY: run_parity,
    Kind.THRESHOLD: run_threshold,
    Kind.LP: run_lp,
    Kind.LP_RANDOM_SELECT: run_lp,
    Kind.DILUTED_THRESHOLD: run_diluted_threshold,
}


def run(bids: Sequence[Fraction], spec: MechanismSpec, rng: np.random.Generator) -> Outcome:
    return _RUNNERS[spec.kind]([b if type(b) is Fraction else Fraction(b) for b in bids], spec, rng)


# -- exact enumeration --------------------------------------------------------

OutcomeKey = tuple[tuple[bool, ...], tuple[Fraction, ...], Fraction]


def _label_assignments(bids: Sequence[Fraction], split: MedianSplit) -> Iterator[tuple[tuple[Label, ...], Fraction]]:
    fixed: list[Label | None] = []
    ties = []
    for i, b in enumerate(bids):
        if b > split.m:
            fixed.append(Label.H)
        elif b < split.m:
            fixed.append(Label.L)
        else:
            fixed.append(None)
            ties.append(i)
    q = split.high_prob_at_m
    for pattern in itertools.product((Label.H, Label.L), repeat=len(ties)):
        w = Fraction(1)
        labels = list(fixed)
        for i, lab in zip(ties, pattern):
            labels[i] = lab
            w *= q if lab is Label.H else 1 - q
        if w:
            yield tuple(labels), w


def _multiset_permutations(items: list[int]) -> Iterator[tuple[int, ...]]:
    counts: dict[int, int] = defaultdict(int)
    for x in items:
        counts[x] += 1
    keys = sorted(counts)
    out: list[int] = []

    def rec() -> Iterator[tuple[int, ...]]:
        if len(out) == len(items):
            yield tuple(out)
            return
        for key in keys:
            if counts[key]:
                counts[key] -= 1
                out.append(key)
                yield from rec()
                out.pop()
                counts[key] += 1

    yield from rec()


def _subsets(cands: list[int], count: int) -> Iterator[tuple[tuple[int, ...], Fraction]]:
    w = Fraction(1, comb(len(cands), count))
    for sub in itertools.combinations(cands, count):
        yield sub, w


def exact_outcome_distribution(bids: Sequence[Any], spec: MechanismSpec, max_n: int = 8) -> dict[OutcomeKey, Fraction]:
    """Exact distribution of ``(confirmed, payments, revenue)`` over all mechanism coins."""
    bids = [Fraction(b) for b in bids]
    n = len(bids)
    if n > max_n:
        raise ValueError(f"exact enumeration limited to n <= {max_n}")
    m = spec.m
    dist: dict[OutcomeKey, Fraction] = defaultdict(Fraction)

    def add(chosen: Sequence[int], revenue: Fraction, w: Fraction) -> None:
        confirmed, payments = _confirm(n, chosen, m)
        dist[(confirmed, payments, revenue)] += w

    for labels, w in _label_assignments(bids, spec.split):
        cands = [i for i, lab in enumerate(labels) if lab is Label.H]
        s = len(cands)
        if spec.kind is Kind.PARITY:
            groups = parity_groups(n, spec.env.c)
            slot_group = [-1] * n
            for g, grp in enumerate(groups):
                for p in grp:
                    slot_group[p] = g
            arrangements = list(_multiset_permutations(slot_group))
            aw = w / len(arrangements)
            for arr in arrangements:
                # arr[i] is the group that bid i lands in
                chosen, revenue = [], Fraction(0)
                for g in range(len(groups)):
                    highs = [i for i in cands if arr[i] == g]
                    if len(highs) % 2 == 1:
                        chosen.extend(highs)
                        revenue += m
                add(chosen, revenue, aw)
        elif spec.kind is Kind.THRESHOLD:
            add(cands, spec.mu_bar if 4 * s >= spec.env.h else Fraction(0), w)
        elif spec.kind in LP_KINDS:
            revenue = lp_revenue(spec, s)
            k = spec.env.block_size
            if k is None or s <= k:
                add(cands, revenue, w)
            else:
                for sub, sw in _subsets(cands, k):
                    add(sub, revenue, w * sw)
        else:
            for count, cw in diluted_count_distribution(spec, s):
                revenue = diluted_revenue(spec, s, count)
                for sub, sw in _subsets(cands, count):
                    add(sub, revenue, w * cw * sw)
    return dict(dist)


def multiset_view(dist: dict[OutcomeKey, Fraction]) -> dict[tuple, Fraction]:
    """Forget bid identities: distribution of the sorted ``(confirmed, payment)`` pairs and revenue."""
    out: dict[tuple, Fraction] = defaultdict(Fraction)
    for (confirmed, payments, revenue), w in dist.items():
        out[(tuple(sorted(zip(confirmed, payments))), revenue)] += w
    return dict(out)


def confirmation_marginals(dist: dict[OutcomeKey, Fraction], n: int) -> list[Fraction]:
    probs = [Fraction(0)] * n
    for (confirmed, _, _), w in dist.items():
        for i, x in enumerate(confirmed):
            if x:
                probs[i] += w
    return probs
