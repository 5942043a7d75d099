"""Command-line experiment runner.

Subcommands: ``solve-lp``, ``run``, ``audit``, ``bounds``.  Every command reads
a JSON config (``--config``) and writes JSON to ``--out`` or stdout.  Exit
codes: 0 ok, 1 audit FAIL, 2 invalid config or infeasible LP.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import audit, bounds
from .dist import ValueDistribution, median_split, moments, sample_bids, split_at
from .errors import TFMError
from .lpsolve import LPSolution, construct_lp_solution, verify_lp_solution
from .mech import LP_KINDS, Environment, Kind, MechanismSpec, run
from .rng import substream
from .serialize import (
    SPEC_VERSION,
    fmt_rational,
    fmt_real,
    parse_block_size,
    parse_rational,
)

log = logging.getLogger("tfmlab")

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


class ConfigError(TFMError, ValueError):
    reason = "InvalidConfig"


# -- config --------------------------------------------------------------------


def _load_json(path: str | os.PathLike) -> Any:
    with open(path) as fh:
        return json.load(fh)


def build_spec(
    mech: dict[str, Any],
    dist: ValueDistribution,
    env: Environment,
    base_dir: Path = Path("."),
) -> MechanismSpec:
    """Mechanism literal -> MechanismSpec.

    The split defaults to the distribution's median split; ``"m"`` picks an
    explicit threshold.  LP kinds take ``"lp_solution"`` (inline or a path) or
    ``"lp": {"n": ...}`` to construct one on the fly.
    """
    kind = Kind(mech["kind"])
    if "split" in mech:
        from .dist import MedianSplit

        split = MedianSplit.from_json(mech["split"])
    elif "m" in mech:
        split = split_at(dist, parse_rational(mech["m"]))
    else:
        split = median_split(dist)
    sol = None
    if kind in LP_KINDS:
        lit = mech.get("lp_solution")
        if isinstance(lit, str):
            lit = _load_json(base_dir / lit)
            lit = lit.get("lp_solution", lit)
        if lit is not None:
            sol = LPSolution.from_json(lit)
        elif "lp" in mech:
            n = int(mech["lp"]["n"])
            sol = construct_lp_solution(n, env.d, env.h, split.m, env.block_size)
        else:
            raise ConfigError("LP mechanisms need 'lp_solution' or 'lp': {'n': ...}")
    epsilon = parse_rational(mech["epsilon"]) if mech.get("epsilon") is not None else None
    T = None
    if kind is Kind.DILUTED_THRESHOLD:
        T = parse_rational(mech["T"]) if mech.get("T") is not None else dist.values[-1]
    return MechanismSpec(kind, split, env, lp_solution=sol, epsilon=epsilon, T=T)


@dataclass
class ExperimentConfig:
    spec: MechanismSpec | None
    dist: ValueDistribution
    env: Environment | None
    seeds: list[int]
    trials: int
    honest_count: int
    outputs: dict[str, str] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_json(cls, cfg: dict[str, Any], base_dir: Path = Path(".")) -> "ExperimentConfig":
        dist = ValueDistribution.from_json(cfg["distribution"])
        env = Environment.from_json(cfg["environment"]) if "environment" in cfg else None
        spec = None
        if "mechanism" in cfg:
            if env is None:
                raise ConfigError("a mechanism needs an environment")
            spec = build_spec(cfg["mechanism"], dist, env, base_dir)
        seeds = [int(s) for s in cfg.get("seeds", [0])]
        trials = int(cfg.get("trials", 1))
        if not seeds:
            raise ConfigError("at least one seed is required")
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        honest = int(cfg.get("honest_count", env.h if env else 0))
        return cls(spec, dist, env, seeds, trials, honest, dict(cfg.get("outputs", {})), cfg)


# -- output ----------------------------------------------------------------------


def _emit(doc: Any, out: str | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _error_doc(exc: Exception) -> dict[str, Any]:
    reason = getattr(exc, "reason", type(exc).__name__)
    return {"spec_version": SPEC_VERSION, "ok": False, "reason": reason, "message": str(exc)}


# -- solve-lp ----------------------------------------------------------------------


def cmd_solve_lp(args: argparse.Namespace) -> int:
    cfg = _load_json(args.config)
    try:
        n, d, h = int(cfg["n"]), int(cfg["d"]), int(cfg["h"])
        m = parse_rational(cfg.get("m", 1))
        k = parse_block_size(cfg.get("k"))
        sol = construct_lp_solution(n, d, h, m, k, allow_norm_exceeded=bool(cfg.get("allow_norm_exceeded", False)))
    except (TFMError, KeyError, TypeError, ValueError) as exc:
        log.error("solve-lp failed: %s", exc)
        doc = _error_doc(exc)
        report = getattr(exc, "report", None)
        if report is not None:
            doc["verification"] = report.to_json()
        _emit(doc, args.out)
        return EXIT_INVALID
    report = verify_lp_solution(sol)
    log.info("solve-lp: z*=%s, ||delta||=%s, verified=%s", sol.z_star, float(max(map(abs, sol.delta))), report.ok)
    doc = {
        "spec_version": SPEC_VERSION,
        "ok": report.ok,
        "target": fmt_rational(sol.target),
        "lp_solution": sol.to_json(),
        "verification": report.to_json(),
    }
    _emit(doc, args.out)
    return EXIT_OK if report.ok else EXIT_INVALID


# -- run -------------------------------------------------------------------------------


def _welfare(bids: Sequence[Fraction], honest_count: int, out) -> Fraction:
    return sum(
        (bids[i] - out.payments[i] for i in range(honest_count) if out.confirmed[i]), Fraction(0)
    )


def _run_seed(spec: MechanismSpec, dist: ValueDistribution, honest_count: int, seed: int, trials: int, keep: bool):
    revenues, welfares, stream = [], [], []
    for t in range(trials):
        bids = sample_bids(dist, honest_count, substream(seed, 2 * t))
        out = run(bids, spec, substream(seed, 2 * t + 1))
        revenues.append(out.miner_revenue)
        welfares.append(_welfare(bids, honest_count, out))
        if keep:
            stream.append({"seed": seed, "trial": t, "bids": [fmt_rational(b) for b in bids], **out.to_json()})
    return revenues, welfares, stream


def _summary(values: list[Fraction], exact: Fraction | None) -> dict[str, Any]:
    arr = np.array([float(v) for v in values])
    n = len(arr)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if n > 1 else 0.0
    se = std / math.sqrt(n) if n > 1 else float("nan")
    row: dict[str, Any] = {
        "count": n,
        "mean": fmt_real(mean),
        "std": fmt_real(std),
        "ci99_radius": fmt_real(audit.Z99 * se) if n > 1 else None,
    }
    if exact is not None:
        diff = abs(mean - float(exact))
        row["exact"] = fmt_rational(exact)
        row["abs_difference"] = fmt_real(diff)
        row["sigmas"] = fmt_real(diff / se) if n > 1 and se > 0 else None
    return row


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = ExperimentConfig.from_json(_load_json(args.config), Path(args.config).parent)
        if cfg.spec is None:
            raise ConfigError("run needs a mechanism")
    except (TFMError, KeyError, TypeError, ValueError) as exc:
        _emit(_error_doc(exc), args.out)
        return EXIT_INVALID
    seeds = args.seed or cfg.seeds
    trials = args.trials or cfg.trials
    spec, dist, honest = cfg.spec, cfg.dist, cfg.honest_count
    keep = "outcomes" in cfg.outputs
    jobs = max(1, args.jobs)
    work = [(spec, dist, honest, s, trials, keep) for s in seeds]
    log.info("run: %s, %d seed(s) x %d trial(s), %d job(s)", spec.kind.value, len(seeds), trials, jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed_star, work))
    else:
        results = [_run_seed(*w) for w in work]
    try:
        exact_rev = audit.honest_expected_revenue(spec, honest)
        exact_welfare = audit.honest_expected_welfare(spec, dist, honest)
    except (TFMError, ValueError) as exc:  # e.g. LP index out of range
        log.warning("no exact oracle: %s", exc)
        exact_rev = exact_welfare = None
    all_rev = [r for res in results for r in res[0]]
    all_wel = [w for res in results for w in res[1]]
    doc = {
        "spec_version": SPEC_VERSION,
        "mechanism": spec.kind.value,
        "honest_count": honest,
        "trials_per_seed": trials,
        "seeds": list(seeds),
        "per_seed": [_seed_row(s, res, exact_rev, exact_welfare) for s, res in zip(seeds, results)],
        "summary": {
            "revenue": _summary(all_rev, exact_rev),
            "welfare": _summary(all_wel, exact_welfare),
        },
    }
    if keep:
        with open(cfg.outputs["outcomes"], "w") as fh:
            for res in results:
                for row in res[2]:
                    fh.write(json.dumps(row) + "\n")
    _emit(doc, args.out or cfg.outputs.get("summary"))
    return EXIT_OK


def _seed_row(seed: int, res, exact_rev: Fraction | None, exact_welfare: Fraction | None) -> dict[str, Any]:
    row: dict[str, Any] = {"seed": seed}
    for name, values, exact in (("revenue", res[0], exact_rev), ("welfare", res[1], exact_welfare)):
        mean = sum(values, Fraction(0)) / len(values)
        row[f"mean_{name}"] = fmt_real(mean)
        if exact is not None:
            row[f"exact_{name}"] = fmt_rational(exact)
            row[f"abs_difference_{name}"] = fmt_real(abs(mean - exact))
    return row


def _run_seed_star(args):
    return _run_seed(*args)


# -- audit ---------------------------------------------------------------------------


def _default_grid(spec: MechanismSpec, dist: ValueDistribution) -> list[Fraction]:
    eps = Fraction(1, 1000)
    grid = set(dist.values) | {spec.m, spec.m + eps}
    if spec.m >= eps:
        grid.add(spec.m - eps)
    return sorted(grid)


def _parse_y_perturb(text: str) -> tuple[int, Fraction]:
    idx, _, delta = text.partition(":")
    if not delta:
        raise ConfigError("--y-perturb expects IDX:DELTA")
    return int(idx), parse_rational(delta)


def cmd_audit(args: argparse.Namespace) -> int:
    try:
        raw = _load_json(args.config)
        cfg = ExperimentConfig.from_json(raw, Path(args.config).parent)
        spec = cfg.spec
        if args.y_perturb:
            if spec is None or spec.kind not in LP_KINDS:
                raise ConfigError("--y-perturb needs an LP mechanism")
            idx, delta = _parse_y_perturb(args.y_perturb)
            spec = MechanismSpec(spec.kind, spec.split, spec.env, spec.lp_solution.perturbed(idx, delta))
        checks = raw.get("checks", [{"type": "mic"}, {"type": "uic"}])
        reports = []
        for chk in checks:
            log.info("audit: running %s", chk.get("type"))
            reports.append(_run_check(chk, spec, cfg))
        if spec is not None and spec.kind in LP_KINDS:
            ver = verify_lp_solution(spec.lp_solution)
            reports.insert(0, {"check": "LP-verify", "verdict": "PASS" if ver.ok else "FAIL", "details": ver.to_json()})
    except (TFMError, KeyError, TypeError, ValueError) as exc:
        log.error("audit failed: %s", exc)
        _emit(_error_doc(exc), args.out)
        return EXIT_INVALID
    failed = any(r["verdict"] == "FAIL" for r in reports)
    inconclusive = any(r["verdict"] == "INCONCLUSIVE" for r in reports)
    overall = "FAIL" if failed else ("INCONCLUSIVE" if inconclusive else "PASS")
    _emit({"spec_version": SPEC_VERSION, "verdict": overall, "reports": reports}, args.out)
    return EXIT_FAIL if failed else EXIT_OK


def _run_check(chk: dict[str, Any], spec: MechanismSpec | None, cfg: ExperimentConfig) -> dict[str, Any]:
    kind = chk["type"]
    if kind == "zero_welfare":
        keys = ("h", "d", "n", "k", "trials", "seed")
        return audit.zero_welfare_demo(cfg.dist, **{k: int(chk[k]) for k in keys if k in chk}).to_json()
    if spec is None:
        raise ConfigError(f"check {kind!r} needs a mechanism")
    if kind == "mic":
        return audit.audit_mic(spec, chk.get("honest_count")).to_json()
    if kind == "uic":
        grid = _default_grid(spec, cfg.dist)
        values = [parse_rational(v) for v in chk["value_grid"]] if "value_grid" in chk else grid
        bids = [parse_rational(b) for b in chk["bid_grid"]] if "bid_grid" in chk else grid
        return audit.audit_uic_posted_price(spec, values, bids, chk.get("others")).to_json()
    if kind == "scp_diluted_exact":
        return audit.audit_scp_diluted_exact(spec, chk.get("s_max")).to_json()
    if kind == "mc_gain":
        strategy = audit.Strategy.from_json(chk.get("strategy", {}))
        if "epsilon" in chk:
            budget: Any = parse_rational(chk["epsilon"])
        elif spec.kind is Kind.DILUTED_THRESHOLD:
            budget = spec.epsilon
        elif spec.kind is Kind.THRESHOLD:
            budget = bounds.threshold_epsilon(spec.env.h, spec.m)
        else:
            budget = Fraction(0)
        return audit.monte_carlo_gain(
            spec,
            cfg.dist,
            strategy,
            int(chk.get("honest_count", cfg.honest_count)),
            int(chk.get("trials", cfg.trials)),
            int(chk.get("seed", cfg.seeds[0])),
            budget,
        ).to_json()
    raise ConfigError(f"unknown check type {kind!r}")


# -- bounds ---------------------------------------------------------------------------


def cmd_bounds(args: argparse.Namespace) -> int:
    try:
        doc = bounds_table(_load_json(args.config))
    except (TFMError, KeyError, TypeError, ValueError) as exc:
        _emit(_error_doc(exc), args.out)
        return EXIT_INVALID
    _emit(doc, args.out)
    return EXIT_OK


def bounds_table(cfg: dict[str, Any]) -> dict[str, Any]:
    h = int(cfg["h"])
    n = int(cfg.get("n", h))
    rho = parse_rational(cfg.get("rho", "1/2"))
    if "distribution" in cfg:
        E_D, C_D, T = moments(ValueDistribution.from_json(cfg["distribution"]))
    else:
        E_D = parse_rational(cfg.get("E_D", 0))
        C_D = bounds._mpf(parse_rational(cfg.get("C_D", 0)))
        T = parse_rational(cfg["T"]) if "T" in cfg else None
    m = parse_rational(cfg.get("m", 1))
    eps = {k: parse_rational(cfg.get(k, 0)) for k in ("epsilon_u", "epsilon_m", "epsilon_s")}
    inp = bounds.BoundInputs(h=h, n=n, rho=rho, E_D=E_D, C_D=C_D, **eps)
    strict = bounds.BoundInputs(h=h, n=n, rho=rho, E_D=E_D, C_D=C_D)
    bound, tail = bounds.chernoff_pair(h)
    doc: dict[str, Any] = {
        "spec_version": SPEC_VERSION,
        "inputs": {
            "h": h,
            "n": n,
            "rho": fmt_rational(rho),
            "m": fmt_rational(m),
            "E_D": fmt_rational(E_D),
            "C_D": fmt_real(C_D),
            "T": fmt_rational(T) if T is not None else None,
            **{k: fmt_rational(v) for k, v in eps.items()},
        },
        "bayesian_revenue_limit": [
            {"epsilon": fmt_rational(inp.epsilon), "value": fmt_real(bounds.bayesian_revenue_limit(inp)),
             "h_E_D": fmt_rational(h * E_D)},
            {"epsilon": "0/1", "value": fmt_real(bounds.bayesian_revenue_limit(strict)),
             "h_E_D": fmt_rational(h * E_D)},
        ],
        "honest_majority_limit": fmt_real(bounds.honest_majority_limit(E_D)),
        "threshold_epsilon": {
            "exp_h_over_16": fmt_real(bounds.threshold_epsilon(h, m)),
            "exp_h_over_8": fmt_real(bounds.threshold_epsilon(h, m, exponent_divisor=8)),
        },
        "chernoff": {"bound": fmt_real(bound), "exact_tail": fmt_rational(tail), "holds": True},
    }
    if "bids" in cfg:
        bids = [parse_rational(b) for b in cfg["bids"]]
        e_post = parse_rational(cfg.get("expost_epsilon", inp.epsilon))
        doc["expost_revenue_limit"] = [
            {"epsilon": fmt_rational(e_post), "value": fmt_real(bounds.expost_revenue_limit(bids, rho, e_post))},
            {"epsilon": "0/1", "value": fmt_real(bounds.expost_revenue_limit(bids, rho, 0))},
        ]
    if "diluted" in cfg:
        dl = cfg["diluted"]
        T_d = parse_rational(dl["T"]) if "T" in dl else T
        p = bounds.diluted_parameters(int(dl["k"]), T_d, parse_rational(dl["epsilon"]), int(dl["c"]), h, m)
        doc["diluted"] = {
            "R": p.R,
            "mu_bar": fmt_rational(p.mu_bar),
            "min_epsilon": fmt_real(p.min_epsilon),
            "epsilon_supported": bool(bounds._mpf(parse_rational(dl["epsilon"])) >= p.min_epsilon),
            "stated_expected_revenue": fmt_real(p.expected_revenue),
            "threshold_revenue_times_prob": fmt_real(
                bounds._mpf(p.mu_bar) * (1 - bounds._mpf(bounds.binomial_lower_tail(h, Fraction(h, 4))))
            ),
        }
    return doc


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", help="output path (default: stdout)")

    p = sub.add_parser("solve-lp", help="construct and verify a fixed-revenue LP solution")
    common(p)
    p.set_defaults(func=cmd_solve_lp)

    p = sub.add_parser("run", help="simulate a mechanism over seeds")
    common(p)
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable; overrides config)")
    p.add_argument("--trials", type=int, help="executions per seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="run incentive-compatibility audits")
    common(p)
    p.add_argument("--y-perturb", metavar="IDX:DELTA", help="add DELTA to y[IDX] before auditing")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bounds", help="tabulate epsilon parameters and revenue limits")
    common(p)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("TFMLAB_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
