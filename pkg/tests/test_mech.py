import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_bids, random_spec
from tfmlab.dist import Label, make_distribution, median_split, sample_bids, uniform
from tfmlab.errors import InvalidParameters
from tfmlab.lpsolve import LPSolution, construct_lp_solution
from tfmlab.mech import (
    Environment,
    IndexOutOfRange,
    Kind,
    MechanismSpec,
    confirmation_marginals,
    diluted_count_distribution,
    exact_outcome_distribution,
    multiset_view,
    parity_groups,
    run,
)
from tfmlab.rng import make_rng, substream

F = Fraction
U3 = uniform([0, 1, 2])  # m = 1, tie-break 1/2


def spec_for(kind, h=16, c=1, d=1, k=None, dist=U3, **kw):
    env = Environment(h=h, rho=F(1, 2), c=c, d=d, block_size=k)
    return MechanismSpec(kind, median_split(dist), env, **kw)


def lp_spec(y, k=None, h=4):
    n = len(y) - 1
    sol = LPSolution(tuple(F(v) for v in y), n, 1, h, F(1), k)
    kind = Kind.LP if k is None else Kind.LP_RANDOM_SELECT
    return spec_for(kind, h=h, k=k, lp_solution=sol)


# -- environment and spec validation --------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(h=0, rho=F(1, 2), c=1, d=1), dict(h=1, rho=F(1), c=1, d=1), dict(h=1, rho=F(1, 2), c=2, d=1),
     dict(h=1, rho=F(1, 2), c=1, d=1, block_size=0)],
)
def test_environment_invariants(kw):
    with pytest.raises(InvalidParameters):
        Environment(**kw)


def test_spec_block_size_rules():
    with pytest.raises(InvalidParameters):
        spec_for(Kind.THRESHOLD, k=4)
    with pytest.raises(InvalidParameters):
        spec_for(Kind.DILUTED_THRESHOLD, epsilon=F(10), T=F(10))
    with pytest.raises(InvalidParameters):
        spec_for(Kind.LP)


def test_spec_lp_must_match_median_and_block():
    sol = LPSolution((F(0), F(1)), 1, 1, 4, F(2), None)
    with pytest.raises(InvalidParameters):
        spec_for(Kind.LP, h=4, lp_solution=sol)


def test_diluted_epsilon_floor():
    # minimum supported epsilon at h=16, m=1 is 2*4*e^-1 ~ 2.94
    with pytest.raises(InvalidParameters):
        spec_for(Kind.DILUTED_THRESHOLD, k=16, c=2, d=2, epsilon=F(1), T=F(4))
    spec_for(Kind.DILUTED_THRESHOLD, k=16, c=2, d=2, epsilon=F(3), T=F(4))


def test_spec_json_round_trip():
    spec = spec_for(Kind.DILUTED_THRESHOLD, k=4, c=2, d=2, epsilon=F(3), T=F(4))
    assert MechanismSpec.from_json(spec.to_json()) == spec
    lp = lp_spec([0, 1, 1], k=1)
    assert MechanismSpec.from_json(lp.to_json()) == lp
    assert spec.to_json()["environment"]["block_size"] == 4
    assert spec_for(Kind.PARITY).to_json()["environment"]["block_size"] == "INFINITE"


# -- parity ----------------------------------------------------------------------


def test_parity_groups():
    assert parity_groups(6, 1) == [range(0, 2), range(2, 4), range(4, 6)]
    assert parity_groups(7, 2) == [range(0, 3), range(3, 7)]
    assert parity_groups(1, 1) == []


def test_parity_no_highs():
    out = run([0, 0], spec_for(Kind.PARITY), make_rng(0))
    assert not any(out.confirmed) and out.miner_revenue == 0


def test_parity_single_high():
    out = run([2, 0], spec_for(Kind.PARITY), make_rng(0))
    assert out.confirmed == (True, False)
    assert out.payments == (1, 0) and out.miner_revenue == 1


def test_parity_too_few_bids():
    out = run([2, 2], spec_for(Kind.PARITY, c=2, d=2), make_rng(0))
    assert not any(out.confirmed) and out.miner_revenue == 0


def test_parity_mean_revenue():
    spec = spec_for(Kind.PARITY, h=4)
    N = 100_000
    total = 0
    for t in range(N):
        total += run(sample_bids(U3, 6, substream(5, 2 * t)), spec, substream(5, 2 * t + 1)).miner_revenue
    # revenue is m * Bin(3, 1/2): variance 3/4 per trial
    sd = math.sqrt(0.75 / N)
    assert abs(float(total) / N - 1.5) <= 3 * sd


@pytest.mark.parametrize("c", [1, 2, 3])
def test_parity_odd_probability_is_half(c):
    # one honest bid per group: Pr[odd number of H] = 1/2 whatever the other labels are
    dist = make_distribution([(0, F(1, 5)), (1, F(2, 5)), (5, F(2, 5))])
    spec = spec_for(Kind.PARITY, c=c, d=c, dist=dist)
    for others in [[F(0)] * c, [F(9)] * c, [F(1)] * c]:
        p_odd = F(0)
        for v, p in dist.support:
            for (_, _, rev), w in exact_outcome_distribution([v] + others, spec).items():
                if rev:
                    p_odd += p * w
        assert p_odd == F(1, 2)


# -- threshold ---------------------------------------------------------------------


def test_threshold_full():
    out = run([2] * 16, spec_for(Kind.THRESHOLD), make_rng(0))
    assert out.miner_revenue == 4 and all(p == 1 for p in out.payments)


def test_threshold_too_few():
    out = run([2, 2, 2] + [0] * 13, spec_for(Kind.THRESHOLD), make_rng(0))
    assert out.miner_revenue == 0
    assert sum(out.confirmed) == 3


def test_threshold_empty():
    out = run([], spec_for(Kind.THRESHOLD), make_rng(0))
    assert out.confirmed == () and out.miner_revenue == 0


# -- LP ------------------------------------------------------------------------------


def test_lp_no_candidates():
    out = run([0, 0, 0], lp_spec([0, 1, 2, 3]), make_rng(0))
    assert out.miner_revenue == 0 and not any(out.confirmed)


def test_lp_index_out_of_range():
    with pytest.raises(IndexOutOfRange):
        run([2, 2, 2], lp_spec([0, 1]), make_rng(0))


def test_lp_revenue_within_budget_on_constructed_solution():
    sol = construct_lp_solution(70, 1, 64, 1, 8)
    spec = spec_for(Kind.LP_RANDOM_SELECT, h=64, k=8, lp_solution=sol)
    for t in range(200):
        bids = sample_bids(U3, 70, substream(1, 2 * t))
        out = run(bids, spec, substream(1, 2 * t + 1))
        s = sum(lab is Label.H for lab in out.labels)
        assert out.miner_revenue == sol.y[s] <= min(s, 8)
        assert sum(out.confirmed) == min(s, 8)
        assert out.violations(bids) == []


def test_lp_random_subset_marginals():
    spec = lp_spec([0, 1, 2, 2, 2, 2], k=2)
    bids = [2] * 5
    N = 100_000
    counts = np.zeros(5)
    for t in range(N):
        out = run(bids, spec, substream(3, t))
        assert sum(out.confirmed) == 2 and all(p in (0, 1) for p in out.payments)
        counts += out.confirmed
    sd = math.sqrt(N * 0.4 * 0.6)
    assert np.all(np.abs(counts - 0.4 * N) <= 3 * sd)
    exact = confirmation_marginals(exact_outcome_distribution(bids, spec), 5)
    assert exact == [F(2, 5)] * 5


# -- diluted -----------------------------------------------------------------------

QUARTER = make_distribution([(F(1, 4), F(1, 2)), (4, F(1, 2))])  # m = 1/4, no tie-break


def diluted(h=16, k=16, c=2):
    return spec_for(Kind.DILUTED_THRESHOLD, h=h, k=k, c=c, d=c, dist=QUARTER, epsilon=F(1), T=F(4))


def test_diluted_R():
    assert diluted().R == 32


def test_diluted_nothing():
    out = run([F(1, 4)] * 4, diluted(), make_rng(0))
    assert not any(out.confirmed) and out.miner_revenue == 0


def test_diluted_expected_count():
    spec = diluted()
    assert diluted_count_distribution(spec, 8) == [(4, F(1))]
    assert diluted_count_distribution(spec, 9) == [(4, F(1, 2)), (5, F(1, 2))]
    bids = [4] * 9 + [0] * 7
    N = 20_000
    total = 0
    for t in range(N):
        out = run(bids, spec, substream(8, t))
        assert out.miner_revenue <= out.total_payment
        total += sum(out.confirmed)
    assert abs(total / N - 4.5) <= 3 * math.sqrt(0.25 / N)


def test_diluted_many_candidates_fill_block():
    spec = diluted()
    out = run([4] * 40, spec, make_rng(0))
    assert sum(out.confirmed) == 16


# -- invariants over random configurations -------------------------------------------

KINDS = list(Kind)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(KINDS), st.integers(0, 8))
def test_ir_and_budget(seed, kind, n):
    r = random.Random(seed)
    dist, spec = random_spec(r, kind, n)
    bids = random_bids(r, dist, spec.split, n)
    for t in range(5):
        out = run(bids, spec, substream(seed, t))
        assert out.violations(bids) == []
        assert all(p == spec.m for p, x in zip(out.payments, out.confirmed) if x)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(KINDS), st.integers(1, 5))
def test_label_only_dependence_pathwise(seed, kind, n):
    r = random.Random(seed)
    dist, spec = random_spec(r, kind, n)
    bids = random_bids(r, dist, spec.split, n)
    m = spec.m
    swapped = [b + 7 if b > m else (b / 3 if b < m else b) for b in bids]
    for t in range(5):
        a, b = run(bids, spec, substream(seed, t)), run(swapped, spec, substream(seed, t))
        assert (a.confirmed, a.payments, a.miner_revenue) == (b.confirmed, b.payments, b.miner_revenue)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(KINDS), st.integers(1, 5))
def test_weak_symmetry_exact(seed, kind, n):
    r = random.Random(seed)
    dist, spec = random_spec(r, kind, n)
    bids = random_bids(r, dist, spec.split, n)
    perm = list(range(n))
    r.shuffle(perm)
    base = exact_outcome_distribution(bids, spec)
    moved = exact_outcome_distribution([bids[i] for i in perm], spec)
    assert multiset_view(base) == multiset_view(moved)
    assert sum(base.values()) == 1
