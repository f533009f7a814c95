import math

import numpy as np
from hypothesis import given, settings, strategies as st

from glaubercut.analytics import distances, product_M, product_tv_asymptotic, product_tv_exact
from glaubercut.dynamics import UpdateSequence, evolve, grand_evolve, sample_updates
from glaubercut.graph import build_torus, components, from_text, to_text
from glaubercut.model import conditional_distribution, make_ising, make_potts
from glaubercut.support import BarrierSystem, support_exact, support_superset

seeds = st.integers(0, 2 ** 32 - 1)
betas = st.floats(0.0, 1.2, allow_nan=False)


def simplex(k):
    return st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k).map(lambda w: np.array(w) / sum(w))


@settings(max_examples=40, deadline=None)
@given(seed=seeds, horizon=st.floats(0.0, 5.0))
def test_sequence_round_trip(seed, horizon):
    W = sample_updates(build_torus(2, 3), horizon, seed)
    assert UpdateSequence.from_text(W.to_text()) == W
    assert UpdateSequence.from_bytes(W.to_bytes()) == W


@settings(max_examples=40, deadline=None)
@given(seed=seeds, beta=betas)
def test_conditionals_are_distributions(seed, beta):
    rng = np.random.default_rng(seed)
    m = make_potts(build_torus(2, 3), 3, beta)
    s = rng.integers(0, 3, size=9)
    p = conditional_distribution(m, s, int(rng.integers(9)))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=seeds, beta=betas)
def test_monotone_sandwich(seed, beta):
    rng = np.random.default_rng(seed)
    m = make_ising(build_torus(2, 3), beta)
    W = sample_updates(m.graph, 3.0, seed)
    X = rng.integers(0, 2, size=(4, 9))
    env = grand_evolve(m, W, "mono", configs=X).envelope
    for x in X:
        y = evolve(m, x, W)
        assert np.all(env.lower <= y) and np.all(y <= env.upper)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, beta=betas, r=st.integers(0, 2), horizon=st.floats(0.1, 3.0))
def test_exact_support_within_superset(seed, beta, r, horizon):
    m = make_ising(build_torus(1, 6), beta)
    b = BarrierSystem(m, r)
    W = sample_updates(m.graph, horizon, seed)
    assert set(support_exact(b, W).sites) <= set(support_superset(b, W).sites)


@settings(max_examples=60, deadline=None)
@given(nu=simplex(5), pi=simplex(5))
def test_distance_ordering(nu, pi):
    tv, l2, linf = distances(nu, pi)
    assert 0 <= tv <= 1 and tv <= 0.5 * l2 + 1e-12 and l2 <= linf + 1e-12


@settings(max_examples=40, deadline=None)
@given(pairs=st.lists(st.tuples(simplex(3), simplex(3)), min_size=1, max_size=4))
def test_product_tv_under_sqrt_m(pairs):
    M = product_M([distances(a, b)[1] for a, b in pairs])
    assert product_tv_exact(pairs) <= math.sqrt(M) + 1e-12
    assert 0 <= product_tv_asymptotic(M) <= 1


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), subset=st.sets(st.integers(0, 35)), t=st.integers(1, 3))
def test_components_partition(n, subset, t):
    g = build_torus(2, n)
    subset = {v for v in subset if v < n * n}
    comps = components(g, sorted(subset), t)
    flat = [v for c in comps for v in c]
    assert sorted(flat) == sorted(subset)
    assert to_text(from_text(to_text(g))) == to_text(g)
