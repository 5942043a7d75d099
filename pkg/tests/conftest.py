from fractions import Fraction

from hypothesis import strategies as st

from tfmlab.dist import make_distribution


@st.composite
def distributions(draw, max_atoms=6, max_value=12):
    values = draw(st.lists(st.integers(0, max_value), min_size=1, max_size=max_atoms, unique=True))
    weights = draw(st.lists(st.integers(1, 9), min_size=len(values), max_size=len(values)))
    total = sum(weights)
    return make_distribution((v, Fraction(w, total)) for v, w in zip(values, weights))


def random_distribution(r, max_atoms=4, max_value=6):
    values = r.sample(range(max_value + 1), r.randint(1, max_atoms))
    weights = [r.randint(1, 5) for _ in values]
    total = sum(weights)
    return make_distribution((v, Fraction(w, total)) for v, w in zip(values, weights))


def random_spec(r, kind, n):
    """Random valid spec of ``kind`` for ``n`` bids.

    LP kinds get a random budget-feasible schedule rather than a constructed
    one: the mechanism invariants must hold for any feasible ``y``.
    """
    from tfmlab import bounds
    from tfmlab.dist import median_split
    from tfmlab.lpsolve import LPSolution
    from tfmlab.mech import LP_KINDS, Environment, Kind, MechanismSpec

    dist = random_distribution(r)
    split = median_split(dist)
    c = r.randint(1, 3)
    d = r.randint(c, c + 2)
    rho = Fraction(r.randint(1, 9), 10)
    h = r.randint(1, 8)
    finite = kind in (Kind.LP_RANDOM_SELECT, Kind.DILUTED_THRESHOLD)
    k = r.randint(1, 4) if finite else None
    env = Environment(h=h, rho=rho, c=c, d=d, block_size=k)
    m = split.m
    if kind in LP_KINDS:
        y = [Fraction(0)] + [
            m * min(i, k or i) * Fraction(r.randint(0, 8), 8) for i in range(1, n + 1)
        ]
        sol = LPSolution(tuple(y), n, d, h, m, k)
        return dist, MechanismSpec(kind, split, env, lp_solution=sol)
    if kind is Kind.DILUTED_THRESHOLD:
        floor_eps = float(bounds.min_diluted_epsilon(h, m))
        eps = Fraction(max(1, int(floor_eps) + 1 + r.randint(0, 2)))
        T = eps + r.randint(0, 4)
        return dist, MechanismSpec(kind, split, env, epsilon=eps, T=T)
    return dist, MechanismSpec(kind, split, env)


def random_bids(r, dist, split, n):
    """Bids from the support, the threshold itself, and off-support points."""
    pool = list(dist.values) + [split.m, split.m + Fraction(1, 2), split.m + 3]
    if split.m > 0:
        pool.append(split.m / 2)
    return [r.choice(pool) for _ in range(n)]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
