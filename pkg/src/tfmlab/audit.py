"""Incentive-compatibility audits: exact where the label abstraction allows, Monte-Carlo otherwise."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from statistics import NormalDist
from typing import Any, Callable, Sequence

import mpmath
import numpy as np

from . import bounds
from .dist import HALF, ValueDistribution, sample_bids, split_at
from .errors import InvalidParameters, TFMError
from .lpsolve import binomial, construct_lp_solution
from .mech import (
    LP_KINDS,
    Environment,
    Kind,
    MechanismSpec,
    diluted_count_distribution,
    diluted_revenue,
    lp_revenue,
    run,
)
from .rng import substream
from .serialize import fmt_rational, fmt_real

Z99 = NormalDist().inv_cdf(0.995)


class InsufficientHonest(TFMError, ValueError):
    reason = "InsufficientHonest"


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


def _num(x: Any) -> Any:
    if x is None:
        return None
    if isinstance(x, (Fraction, int)):
        return fmt_rational(x)
    return fmt_real(x)


def _le(a: Any, b: Any) -> bool:
    """``a <= b`` for any mix of Fraction and mpf."""
    if isinstance(a, (Fraction, int)) and isinstance(b, (Fraction, int)):
        return a <= b
    with mpmath.workprec(bounds.PREC):
        return bounds._mpf(a) <= bounds._mpf(b)


@dataclass
class AuditReport:
    check: str
    honest_utility: Any
    best_deviation_utility: Any
    gain: Any
    epsilon_budget: Any
    verdict: Verdict
    ci_radius: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_json(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "honest_utility": _num(self.honest_utility),
            "best_deviation_utility": _num(self.best_deviation_utility),
            "gain": _num(self.gain),
            "ci_radius": _num(self.ci_radius),
            "epsilon_budget": _num(self.epsilon_budget),
            "verdict": self.verdict.value,
            "details": self.details,
        }


def exact_verdict(gain: Any, budget: Any) -> Verdict:
    return Verdict.PASS if _le(gain, budget) else Verdict.FAIL


def mc_verdict(gain: float, ci_radius: float, budget: Any) -> Verdict:
    eps = float(budget)
    if gain - 2 * ci_radius > eps:
        return Verdict.FAIL
    if gain + ci_radius <= eps:
        return Verdict.PASS
    return Verdict.INCONCLUSIVE


# -- exact expected revenue ---------------------------------------------------


def exact_revenue_given_j(revenue_fn: Callable[[int], Fraction], gamma: int, j: int) -> Fraction:
    """E[revenue(i + j)] with ``i ~ Bin(gamma, 1/2)``, exactly."""
    total = sum((binomial(gamma, i) * revenue_fn(i + j) for i in range(gamma + 1)), Fraction(0))
    return total / (1 << gamma)


def expected_revenue_fn(spec: MechanismSpec) -> Callable[[int], Fraction]:
    """Expected revenue (over the mechanism's own coins) given ``s`` candidates."""
    if spec.kind is Kind.THRESHOLD:
        mu_bar, h = spec.mu_bar, spec.env.h
        return lambda s: mu_bar if 4 * s >= h else Fraction(0)
    if spec.kind in LP_KINDS:
        return lambda s: lp_revenue(spec, s)
    if spec.kind is Kind.DILUTED_THRESHOLD:
        return lambda s: sum(
            (w * diluted_revenue(spec, s, cnt) for cnt, w in diluted_count_distribution(spec, s)),
            Fraction(0),
        )
    raise ValueError("parity revenue depends on grouping, not only on the candidate count")


def honest_expected_revenue(spec: MechanismSpec, honest_count: int) -> Fraction:
    """Exact expected revenue when all ``honest_count`` bids are honest draws."""
    if spec.kind is Kind.PARITY:
        return spec.m / 2 * (honest_count // (spec.env.c + 1))
    return exact_revenue_given_j(expected_revenue_fn(spec), honest_count, 0)


def confirmation_probability(spec: MechanismSpec, others: int) -> Fraction:
    """Pr[a candidate is confirmed] when ``others`` honest bids compete with it."""
    kind, k = spec.kind, spec.env.block_size
    if kind is Kind.PARITY:
        return HALF if others + 1 >= spec.env.c + 1 else Fraction(0)
    if kind is Kind.THRESHOLD or (kind is Kind.LP and k is None):
        return Fraction(1)
    if kind in LP_KINDS:
        marginal = lambda x: min(Fraction(1), Fraction(k, x + 1))  # noqa: E731
    else:
        R = spec.R
        marginal = lambda x: Fraction(k, max(x + 1, R))  # noqa: E731
    return exact_revenue_given_j(marginal, others, 0)


def honest_expected_welfare(spec: MechanismSpec, dist: ValueDistribution, honest_count: int) -> Fraction:
    """Exact expected user welfare with ``honest_count`` honest bidders.

    Bids tied at ``m`` contribute zero surplus, so only values above ``m`` count.
    """
    if honest_count == 0:
        return Fraction(0)
    surplus = sum(((v - spec.m) * p for v, p in dist.support if v > spec.m), Fraction(0))
    return honest_count * confirmation_probability(spec, honest_count - 1) * surplus


# -- MIC ---------------------------------------------------------------------


def audit_mic(spec: MechanismSpec, honest_count: int | None = None) -> AuditReport:
    """Exact miner-coalition audit over injections of ``j`` H bids, ``j in [0, d]``.

    The gain is the largest ``rho * (rev(j) - rev(j0))`` over every baseline
    ``j0`` and deviation ``j``; with ``j0 = 0`` this is the pure-injection gain,
    other baselines cover coalitions that already hold bids.
    """
    env = spec.env
    if spec.kind is Kind.PARITY:
        n = env.h if honest_count is None else honest_count
        rev = honest_expected_revenue(spec, n)
        return AuditReport(
            "MIC", env.rho * rev, env.rho * rev, Fraction(0), Fraction(0), Verdict.PASS,
            details={"note": "closed ID system: miners cannot inject bids", "honest_count": n},
        )
    fn = expected_revenue_fn(spec)
    if spec.kind in LP_KINDS:
        gamma = spec.lp_solution.gamma
        budget: Any = Fraction(0)
    else:
        gamma = env.h if honest_count is None else honest_count
        budget = bounds.threshold_epsilon(env.h, spec.m) if spec.kind is Kind.THRESHOLD else spec.epsilon
    revs = [exact_revenue_given_j(fn, gamma, j) for j in range(env.d + 1)]
    lo, hi = min(range(len(revs)), key=revs.__getitem__), max(range(len(revs)), key=revs.__getitem__)
    gain = env.rho * (revs[hi] - revs[lo])
    return AuditReport(
        "MIC",
        env.rho * revs[lo],
        env.rho * revs[hi],
        gain,
        budget,
        exact_verdict(gain, budget),
        details={
            "gamma": gamma,
            "revenue_by_injected_H": [fmt_rational(r) for r in revs],
            "baseline_j": lo,
            "best_j": hi,
        },
    )


# -- UIC ---------------------------------------------------------------------


def _prob_high(bid: Fraction, spec: MechanismSpec) -> Fraction:
    if bid > spec.m:
        return Fraction(1)
    if bid < spec.m:
        return Fraction(0)
    return spec.split.high_prob_at_m


def audit_uic_posted_price(
    spec: MechanismSpec,
    value_grid: Sequence[Any],
    bid_grid: Sequence[Any],
    others: int | None = None,
) -> AuditReport:
    """Exact single-user audit: U(v, b) = Pr[H | b] * Pr[confirm | H] * (v - m).

    Dropping out (utility 0) is always among the deviations.
    """
    others = spec.env.h if others is None else others
    p_conf = confirmation_probability(spec, others)
    m = spec.m

    def utility(v: Fraction, b: Fraction) -> Fraction:
        return _prob_high(b, spec) * p_conf * (v - m)

    worst = None
    for v in map(Fraction, value_grid):
        honest = utility(v, v)
        best = max([Fraction(0)] + [utility(v, Fraction(b)) for b in bid_grid])
        gain = max(Fraction(0), best - honest)
        if worst is None or gain > worst[0]:
            worst = (gain, v, honest, best)
    if worst is None:
        raise InvalidParameters("empty value grid")
    gain, v, honest, best = worst
    return AuditReport(
        "UIC", honest, best, gain, Fraction(0), exact_verdict(gain, Fraction(0)),
        details={"confirm_prob_given_H": fmt_rational(p_conf), "worst_value": fmt_rational(v), "others": others},
    )


# -- Monte-Carlo coalition utility ---------------------------------------------


class Action(str, enum.Enum):
    TRUTHFUL = "Truthful"
    BID = "Bid"
    DROP = "Drop"


@dataclass(frozen=True)
class Colluder:
    """A colluding user.  ``value=None`` draws the true value from the distribution."""

    value: Fraction | None = None
    action: Action = Action.TRUTHFUL
    bid: Fraction | None = None

    def bid_for(self, value: Fraction) -> Fraction | None:
        if self.action is Action.DROP:
            return None
        if self.action is Action.BID:
            return Fraction(self.bid)
        return value


@dataclass(frozen=True)
class Strategy:
    colluders: tuple[Colluder, ...] = ()
    injected_bids: tuple[Fraction, ...] = ()

    def truthful(self) -> "Strategy":
        return Strategy(tuple(replace(c, action=Action.TRUTHFUL, bid=None) for c in self.colluders), ())

    def check(self, env: Environment) -> None:
        if len(self.colluders) > env.c:
            raise InvalidParameters(f"{len(self.colluders)} colluding users exceeds c={env.c}")
        if len(self.colluders) + len(self.injected_bids) > env.d:
            raise InvalidParameters(f"coalition controls more than d={env.d} bids")

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Strategy":
        from .serialize import parse_rational

        cols = []
        for c in d.get("colluders", []):
            cols.append(
                Colluder(
                    value=parse_rational(c["value"]) if c.get("value") is not None else None,
                    action=Action(c.get("action", "Truthful")),
                    bid=parse_rational(c["bid"]) if c.get("bid") is not None else None,
                )
            )
        return cls(tuple(cols), tuple(parse_rational(b) for b in d.get("injected_bids", [])))


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    ci_radius: float
    trials: int
    std: float
    exact_mean: Fraction


def _ci(samples: np.ndarray, value_range: float | None) -> tuple[float, float, float]:
    n = len(samples)
    mean = float(samples.mean())
    std = float(samples.std(ddof=1)) if n > 1 else 0.0
    radius = Z99 * std / math.sqrt(n)
    if value_range is not None and (n < 30 or std == 0.0):
        radius = value_range * math.sqrt(math.log(2 / 0.01) / (2 * n))
    return mean, radius, std


def coalition_trial(
    spec: MechanismSpec,
    dist: ValueDistribution,
    strategy: Strategy,
    honest_count: int,
    seed: int,
    trial: int,
) -> tuple[Fraction, Fraction, Fraction]:
    """One execution: ``(coalition utility, miner revenue, honest users' utility)``.

    Honest values and colluder values come from one substream and the
    mechanism's coins from another, so a deviation and its truthful baseline
    see the same world.
    """
    value_rng = substream(seed, 2 * trial)
    honest = sample_bids(dist, honest_count, value_rng)
    values = [c.value if c.value is not None else sample_bids(dist, 1, value_rng)[0] for c in strategy.colluders]
    bids = list(honest)
    owner: list[int] = []  # colluder index per coalition user bid
    for idx, (col, v) in enumerate(zip(strategy.colluders, values)):
        b = col.bid_for(v)
        if b is not None:
            bids.append(b)
            owner.append(idx)
    n_user = len(bids)
    bids.extend(strategy.injected_bids)
    out = run(bids, spec, substream(seed, 2 * trial + 1))
    rho = spec.env.rho
    util = rho * out.miner_revenue
    for pos, idx in zip(range(honest_count, n_user), owner):
        if out.confirmed[pos]:
            util += values[idx] - out.payments[pos]
    for pos in range(n_user, len(bids)):
        util -= out.payments[pos]
    honest_util = sum(
        (honest[i] - out.payments[i] for i in range(honest_count) if out.confirmed[i]), Fraction(0)
    )
    return util, out.miner_revenue, honest_util


def _check_honest(spec: MechanismSpec, strategy: Strategy, honest_count: int) -> None:
    strategy.check(spec.env)
    if honest_count < spec.env.h - len(strategy.colluders):
        raise InsufficientHonest(
            f"{honest_count} honest bids violate the promise h={spec.env.h} "
            f"with {len(strategy.colluders)} colluding users"
        )


def monte_carlo_coalition_utility(
    spec: MechanismSpec,
    dist: ValueDistribution,
    strategy: Strategy,
    honest_count: int,
    trials: int,
    seed: int,
    value_range: float | None = None,
) -> MCEstimate:
    _check_honest(spec, strategy, honest_count)
    if trials < 1:
        raise InvalidParameters("trials must be >= 1")
    utils = [coalition_trial(spec, dist, strategy, honest_count, seed, t)[0] for t in range(trials)]
    arr = np.array([float(u) for u in utils])
    mean, radius, std = _ci(arr, value_range)
    return MCEstimate(mean, radius, trials, std, sum(utils, Fraction(0)) / trials)


def monte_carlo_gain(
    spec: MechanismSpec,
    dist: ValueDistribution,
    strategy: Strategy,
    honest_count: int,
    trials: int,
    seed: int,
    epsilon_budget: Any,
    value_range: float | None = None,
) -> AuditReport:
    """Paired estimate of ``util(strategy) - util(truthful)`` on common random numbers."""
    _check_honest(spec, strategy, honest_count)
    if trials < 1:
        raise InvalidParameters("trials must be >= 1")
    baseline = strategy.truthful()
    diffs = np.empty(trials)
    hon = np.empty(trials)
    dev = np.empty(trials)
    for t in range(trials):
        a = coalition_trial(spec, dist, baseline, honest_count, seed, t)[0]
        b = coalition_trial(spec, dist, strategy, honest_count, seed, t)[0]
        hon[t], dev[t], diffs[t] = float(a), float(b), float(b - a)
    gain, radius, std = _ci(diffs, value_range)
    return AuditReport(
        "SCP-MC",
        float(hon.mean()),
        float(dev.mean()),
        gain,
        epsilon_budget,
        mc_verdict(gain, radius, epsilon_budget),
        ci_radius=radius,
        details={"trials": trials, "seed": seed, "honest_count": honest_count, "std": std},
    )


# -- diluted threshold, exact SCP ------------------------------------------------


def audit_scp_diluted_exact(spec: MechanismSpec, s_max: int | None = None) -> AuditReport:
    """Largest per-user utility change from other colluders dropping out.

    For every ``s <= s_max`` (default ``4R``) and ``s - c <= s' <= s`` the
    change ``(T - m) * (k/max(s', R) - k/max(s, R))`` must stay within
    ``epsilon / (2c)``.
    """
    if spec.kind is not Kind.DILUTED_THRESHOLD:
        raise InvalidParameters("diluted SCP audit needs a DilutedThreshold spec")
    k, R, c = spec.env.block_size, spec.R, spec.env.c
    s_max = 4 * R if s_max is None else s_max
    margin = spec.T - spec.m
    best = (Fraction(0), 0, 0)
    for s in range(s_max + 1):
        base = Fraction(k, max(s, R))
        for sp in range(max(0, s - c), s + 1):
            change = margin * (Fraction(k, max(sp, R)) - base)
            if change > best[0]:
                best = (change, s, sp)
    budget = spec.epsilon / (2 * c)
    change, s, sp = best
    return AuditReport(
        "SCP-diluted-exact",
        margin * Fraction(k, max(s, R)) if s else Fraction(0),
        margin * Fraction(k, max(sp, R)) if s else Fraction(0),
        change,
        budget,
        exact_verdict(change, budget),
        details={"R": R, "s": s, "s_prime": sp, "s_max": s_max},
    )


# -- zero user welfare -----------------------------------------------------------


@dataclass
class ZeroWelfareReport:
    trials: int
    nonzero_user_utilities: int
    revenue_mean: float
    revenue_std: float
    exact_revenue: Fraction
    z_score: float

    @property
    def passed(self) -> bool:
        return self.nonzero_user_utilities == 0 and abs(self.z_score) <= 3 and self.exact_revenue > 0

    def to_json(self) -> dict[str, Any]:
        return {
            "check": "zero-user-welfare",
            "trials": self.trials,
            "nonzero_user_utilities": self.nonzero_user_utilities,
            "revenue_mean": fmt_real(self.revenue_mean),
            "revenue_std": fmt_real(self.revenue_std),
            "exact_revenue": fmt_rational(self.exact_revenue),
            "z_score": fmt_real(self.z_score),
            "verdict": "PASS" if self.passed else "FAIL",
        }


BERNOULLI_HALF = ((Fraction(0), HALF), (Fraction(1), HALF))


def zero_welfare_demo(
    dist: ValueDistribution,
    h: int = 64,
    d: int = 2,
    n: int = 70,
    k: int = 8,
    trials: int = 10_000,
    seed: int = 0,
) -> ZeroWelfareReport:
    """LP mechanism with random selection, Bernoulli(1/2) values, price 1.

    Every confirmed user has value 1 and pays 1, so user utility is always 0.
    The environment allows ``c = d`` colluding users, so ``d >= 2``.
    """
    if dist.support != BERNOULLI_HALF:
        raise InvalidParameters("zero-welfare demonstration requires Bernoulli(1/2) values")
    if d < 2:
        raise InvalidParameters("the demonstration targets c >= 2, so d must be >= 2")
    split = split_at(dist, 1)
    sol = construct_lp_solution(n, d, h, 1, k)
    env = Environment(h=h, rho=HALF, c=d, d=d, block_size=k)
    spec = MechanismSpec(Kind.LP_RANDOM_SELECT, split, env, lp_solution=sol)
    nonzero = 0
    revenue = np.empty(trials)
    for t in range(trials):
        bids = sample_bids(dist, n, substream(seed, 2 * t))
        out = run(bids, spec, substream(seed, 2 * t + 1))
        for b, x, p in zip(bids, out.confirmed, out.payments):
            if x and b - p != 0:
                nonzero += 1
        revenue[t] = float(out.miner_revenue)
    exact = exact_revenue_given_j(expected_revenue_fn(spec), n, 0)
    mean = float(revenue.mean())
    std = float(revenue.std(ddof=1)) if trials > 1 else 0.0
    se = std / math.sqrt(trials) if trials > 1 else float("inf")
    z = (mean - float(exact)) / se if se > 0 else 0.0
    return ZeroWelfareReport(trials, nonzero, mean, std, exact, z)
