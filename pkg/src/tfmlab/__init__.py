"""Exact, reproducible transaction-fee mechanisms for MPC-assisted block building."""
from .audit import (
    AuditReport,
    Strategy,
    Verdict,
    audit_mic,
    audit_scp_diluted_exact,
    audit_uic_posted_price,
    monte_carlo_gain,
    zero_welfare_demo,
)
from .bounds import BoundInputs, bayesian_revenue_limit, chernoff_pair, diluted_parameters
from .dist import Label, MedianSplit, ValueDistribution, make_distribution, median_split, split_at
from .errors import InvalidParameters, TFMError
from .lpsolve import LPSolution, construct_lp_solution, find_z_star, verify_lp_solution
from .mech import Environment, Kind, MechanismSpec, Outcome, run

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "BoundInputs",
    "Environment",
    "InvalidParameters",
    "Kind",
    "LPSolution",
    "Label",
    "MechanismSpec",
    "MedianSplit",
    "Outcome",
    "Strategy",
    "TFMError",
    "ValueDistribution",
    "Verdict",
    "audit_mic",
    "audit_scp_diluted_exact",
    "audit_uic_posted_price",
    "bayesian_revenue_limit",
    "chernoff_pair",
    "construct_lp_solution",
    "diluted_parameters",
    "find_z_star",
    "make_distribution",
    "median_split",
    "monte_carlo_gain",
    "run",
    "split_at",
    "verify_lp_solution",
    "zero_welfare_demo",
]
