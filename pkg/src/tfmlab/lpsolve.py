"""Exact construction of a fixed-revenue LP solution.

The LP asks for a miner-revenue schedule ``y_0..y_n`` (indexed by the number of
candidate bids) such that

* ``0 <= y_i <= min(i, k) * m``  (budget feasibility), and
* ``sum_i q_i * y_{i+j} = m * min(h, k) / 4`` for every ``j`` in ``[0, d]``,
  where ``q_i = C(gamma, i) / 2^gamma`` and ``gamma = n - d``.

Instead of running a general LP solver we start from a step function (zero up
to ``t = gamma // 4``, the target above it) and patch ``d + 1`` consecutive
cells so the fixed-revenue identities hold exactly.  The patch solves a small
binomial linear system ``A(z) delta = Delta`` over the rationals.  Nothing here
touches floating point except the reporting-only analytic norm bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Any, Sequence

import mpmath

from .errors import InvalidParameters, TFMError
from .serialize import fmt_block_size, fmt_rational, parse_block_size, parse_rational


class LPError(TFMError):
    reason = "LPError"


class RangeError(LPError, ValueError):
    reason = "RangeError"


class Singular(LPError):
    reason = "Singular"


class AllSingular(LPError):
    reason = "AllSingular"


class WindowTooLarge(LPError):
    reason = "WindowTooLarge"


class NormExceeded(LPError):
    reason = "NormExceeded"

    def __init__(self, message: str, search: "ZSearch"):
        super().__init__(message)
        self.search = search


class Infeasible(LPError):
    reason = "Infeasible"

    def __init__(self, message: str, report: "VerificationReport | None" = None):
        super().__init__(message)
        self.report = report


def binomial(n: int, k: int) -> int:
    """C(n, k), zero outside ``0 <= k <= n``."""
    if k < 0 or n < 0 or k > n:
        return 0
    return comb(n, k)


@dataclass(frozen=True)
class CorrectionSystem:
    A: tuple[tuple[int, ...], ...]
    Delta: tuple[int, ...]
    z: int
    gamma: int
    t: int

    @property
    def d(self) -> int:
        return len(self.Delta) - 1


def build_correction_system(gamma: int, d: int, z: int) -> CorrectionSystem:
    """``A[row][col] = C(gamma, z+d+col-row)``, ``Delta[row] = sum_{i<=t-row} C(gamma, i)``."""
    if d < 1:
        raise RangeError("d must be >= 1")
    if z < 0 or z + 2 * d > gamma:
        raise RangeError(f"need 0 <= z and z + 2d <= gamma (z={z}, d={d}, gamma={gamma})")
    t = gamma // 4
    A = tuple(
        tuple(binomial(gamma, z + d + col - row) for col in range(d + 1)) for row in range(d + 1)
    )
    Delta = tuple(sum(binomial(gamma, i) for i in range(t - row + 1)) for row in range(d + 1))
    return CorrectionSystem(A, Delta, z, gamma, t)


def scaled_matrix(gamma: int, d: int, z: int) -> list[list[Fraction]]:
    """``B(z) = A(z) / C(gamma, z) * prod_{i=1..2d} (z+i)``, without the range check.

    Only used for diagnostics: at ``z = gamma - d`` it is lower triangular.
    """
    scale = Fraction(1, binomial(gamma, z))
    for i in range(1, 2 * d + 1):
        scale *= z + i
    return [
        [binomial(gamma, z + d + col - row) * scale for col in range(d + 1)]
        for row in range(d + 1)
    ]


def _eliminate(A: Sequence[Sequence[Any]], b: Sequence[Any]) -> tuple[Fraction, list[Fraction] | None]:
    """Gaussian elimination over the rationals. Returns ``(det, solution or None)``."""
    size = len(A)
    M = [[Fraction(x) for x in row] + [Fraction(rhs)] for row, rhs in zip(A, b)]
    det = Fraction(1)
    for col in range(size):
        pivot = next((r for r in range(col, size) if M[r][col] != 0), None)
        if pivot is None:
            return Fraction(0), None
        if pivot != col:
            M[col], M[pivot] = M[pivot], M[col]
            det = -det
        p = M[col][col]
        det *= p
        for r in range(col + 1, size):
            f = M[r][col] / p
            if f:
                for c in range(col, size + 1):
                    M[r][c] -= f * M[col][c]
    x = [Fraction(0)] * size
    for r in range(size - 1, -1, -1):
        s = M[r][size] - sum(M[r][c] * x[c] for c in range(r + 1, size))
        x[r] = s / M[r][r]
    return det, x


def determinant(A: Sequence[Sequence[Any]]) -> Fraction:
    return _eliminate(A, [0] * len(A))[0]


def solve_exact(system: CorrectionSystem) -> list[Fraction]:
    """Exact solution of ``A delta = Delta``; raises ``Singular`` when det(A) = 0."""
    det, x = _eliminate(system.A, system.Delta)
    if x is None:
        raise Singular(f"A(z={system.z}) is singular")
    assert all(
        sum(a * xi for a, xi in zip(row, x)) == rhs for row, rhs in zip(system.A, system.Delta)
    )
    return x


def inf_norm(v: Sequence[Fraction]) -> Fraction:
    return max((abs(x) for x in v), default=Fraction(0))


@dataclass(frozen=True)
class ZSearch:
    z_star: int
    delta: tuple[Fraction, ...]
    norm: Fraction
    norm_exceeded: bool
    system: CorrectionSystem
    singular_z: tuple[int, ...] = ()


def search_window(gamma: int, d: int) -> range:
    lo = -(-gamma // 2)
    return range(lo, lo + 2 * d * d + 1)


def find_z_star(gamma: int, d: int) -> ZSearch:
    """First ``z`` in the window with non-singular ``A(z)`` and ``||delta||_inf <= 1``.

    If every non-singular candidate violates the norm bound, the one with the
    smallest norm is returned with ``norm_exceeded=True``.
    """
    window = search_window(gamma, d)
    if window[-1] + 2 * d > gamma:
        raise WindowTooLarge(
            f"search window [{window[0]}, {window[-1]}] needs gamma >= {window[-1] + 2 * d}, got {gamma}"
        )
    singular: list[int] = []
    best: ZSearch | None = None
    for z in window:
        system = build_correction_system(gamma, d, z)
        try:
            delta = solve_exact(system)
        except Singular:
            singular.append(z)
            continue
        norm = inf_norm(delta)
        cand = ZSearch(z, tuple(delta), norm, norm > 1, system)
        if norm <= 1:
            return ZSearch(z, tuple(delta), norm, False, system, tuple(singular))
        if best is None or norm < best.norm:
            best = cand
    if best is None:
        raise AllSingular(f"A(z) singular for every z in [{window[0]}, {window[-1]}]")
    return ZSearch(best.z_star, best.delta, best.norm, True, best.system, tuple(singular))


@dataclass(frozen=True)
class LPSolution:
    y: tuple[Fraction, ...]
    n: int
    d: int
    h: int
    m: Fraction
    k: int | None
    z_star: int | None = None
    delta: tuple[Fraction, ...] = ()
    norm_exceeded: bool = False

    @property
    def gamma(self) -> int:
        return self.n - self.d

    @property
    def target(self) -> Fraction:
        """Fixed expected revenue ``m * min(h, k) / 4``."""
        cap = self.h if self.k is None else min(self.h, self.k)
        return self.m * cap / 4

    def budget_cap(self, i: int) -> Fraction:
        return self.m * (i if self.k is None else min(i, self.k))

    def perturbed(self, index: int, delta: Fraction) -> "LPSolution":
        y = list(self.y)
        y[index] += delta
        return LPSolution(tuple(y), self.n, self.d, self.h, self.m, self.k, self.z_star, self.delta, self.norm_exceeded)

    def to_json(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "h": self.h,
            "m": fmt_rational(self.m),
            "k": fmt_block_size(self.k),
            "z_star": self.z_star,
            "target": fmt_rational(self.target),
            "norm_exceeded": self.norm_exceeded,
            "delta": [fmt_rational(x) for x in self.delta],
            "y": [fmt_rational(x) for x in self.y],
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "LPSolution":
        return cls(
            y=tuple(parse_rational(x) for x in d["y"]),
            n=int(d["n"]),
            d=int(d["d"]),
            h=int(d["h"]),
            m=parse_rational(d["m"]),
            k=parse_block_size(d.get("k")),
            z_star=d.get("z_star"),
            delta=tuple(parse_rational(x) for x in d.get("delta", [])),
            norm_exceeded=bool(d.get("norm_exceeded", False)),
        )


@dataclass
class VerificationReport:
    budget_violations: list[tuple[int, Fraction, Fraction]] = field(default_factory=list)
    identities: list[tuple[int, Fraction, Fraction]] = field(default_factory=list)
    length_ok: bool = True

    @property
    def failed_identities(self) -> list[tuple[int, Fraction, Fraction]]:
        return [(j, lhs, rhs) for j, lhs, rhs in self.identities if lhs != rhs]

    @property
    def ok(self) -> bool:
        return self.length_ok and not self.budget_violations and not self.failed_identities

    def to_json(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "length_ok": self.length_ok,
            "budget_violations": [
                {"i": i, "y_i": fmt_rational(y), "cap": fmt_rational(cap)}
                for i, y, cap in self.budget_violations
            ],
            "identities": [
                {"j": j, "lhs": fmt_rational(lhs), "rhs": fmt_rational(rhs), "holds": lhs == rhs}
                for j, lhs, rhs in self.identities
            ],
        }


def verify_lp_solution(sol: LPSolution) -> VerificationReport:
    """Check every budget inequality and all ``d + 1`` fixed-revenue identities exactly."""
    report = VerificationReport(length_ok=len(sol.y) == sol.n + 1)
    for i, y in enumerate(sol.y):
        cap = sol.budget_cap(i)
        if not 0 <= y <= cap:
            report.budget_violations.append((i, y, cap))
    gamma = sol.gamma
    weights = [binomial(gamma, i) for i in range(gamma + 1)]
    scale = 1 << gamma
    for j in range(sol.d + 1):
        total = sum(
            (w * sol.y[i + j] for i, w in enumerate(weights) if i + j < len(sol.y)), Fraction(0)
        )
        report.identities.append((j, total / scale, sol.target))
    return report


def construct_lp_solution(
    n: int, d: int, h: int, m: Any, k: int | None = None, *, allow_norm_exceeded: bool = False
) -> LPSolution:
    """Build and verify a feasible fixed-revenue schedule.

    ``k=None`` is the infinite-block LP.  For a finite block ``k < h`` the
    infinite-block solution is scaled by ``k/h``.  Raises ``NormExceeded`` when
    no window position keeps ``||delta||_inf <= 1`` (unless
    ``allow_norm_exceeded``), and ``Infeasible`` when the final exact check
    fails.
    """
    m = Fraction(m)
    if h < 2 or n < h:
        raise InvalidParameters(f"need n >= h >= 2 (n={n}, h={h})")
    if d < 1:
        raise InvalidParameters("d must be >= 1")
    if m <= 0:
        raise InvalidParameters("m must be positive")
    if k is not None and k < 1:
        raise InvalidParameters("k must be positive")
    gamma = n - d
    t = gamma // 4
    mu_bar = m * h / 4
    search = find_z_star(gamma, d)
    if search.norm_exceeded and not allow_norm_exceeded:
        raise NormExceeded(
            f"no z in the window gives ||delta||_inf <= 1 (best z={search.z_star}, "
            f"norm={float(search.norm):.6g})",
            search,
        )
    y = [Fraction(0) if i <= t else mu_bar for i in range(n + 1)]
    lo = search.z_star + d
    for offset, dlt in enumerate(search.delta):
        y[lo + offset] += mu_bar * dlt
    if k is not None and k < h:
        scale = Fraction(k, h)
        y = [v * scale for v in y]
    sol = LPSolution(tuple(y), n, d, h, m, k, search.z_star, search.delta, search.norm_exceeded)
    report = verify_lp_solution(sol)
    if not report.ok:
        what = (
            f"budget violated at i={report.budget_violations[0][0]}"
            if report.budget_violations
            else f"identity j={report.failed_identities[0][0]} fails"
        )
        raise Infeasible(f"constructed schedule is infeasible: {what}", report)
    return sol


@dataclass(frozen=True)
class NormDiagnostics:
    inf_norm_delta: Fraction
    inf_norm_Delta: int
    inverse_norm_bound: mpmath.mpf
    analytic_bound: mpmath.mpf


def norm_diagnostics(system: CorrectionSystem, delta: Sequence[Fraction]) -> NormDiagnostics:
    """Exact ``||delta||_inf`` beside the analytic bound on it (report only).

    The analytic bound multiplies the bound on ``||A(z)^-1||_inf`` by
    ``t * C(gamma, t)``, the stated bound on ``||Delta||_inf``.
    """
    d, z, gamma, t = system.d, system.z, system.gamma, system.t
    with mpmath.workprec(128):
        inv_bound = (
            mpmath.mpf(z + 2 * d) ** (2 * d * (d + 1))
            / mpmath.mpf(binomial(gamma, z))
            * (mpmath.mpf(d + 1) / mpmath.sqrt(d)) ** d
        )
        analytic = inv_bound * t * mpmath.mpf(binomial(gamma, t))
    return NormDiagnostics(inf_norm(delta), max(system.Delta), inv_bound, analytic)
