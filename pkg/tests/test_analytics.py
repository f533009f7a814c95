import math

import numpy as np
import pytest

from glaubercut.analytics import (
    build_generator,
    block_profile,
    check_ls_bound,
    cutoff_report,
    distances,
    exact_curve,
    heat_kernel,
    hypercube_profile,
    hypercube_tv_exact,
    iid_two_state_tv,
    log_sobolev_estimate,
    normal_cdf,
    plus_cutoff_forms,
    plus_cutoff_predict,
    product_cutoff_predict,
    product_M,
    product_tv_asymptotic,
    product_tv_bound,
    product_tv_exact,
    spectral_gap,
    stationary_from_generator,
    tmix_bracket,
    two_point_log_sobolev,
)
from glaubercut.graph import BlockSpec, build_box, build_torus, from_edges
from glaubercut.model import ModelError, gibbs_enumerate, make_ising, make_potts

# frozen oracles, computed independently of the package
TWO_PHI_ONE_MINUS_ONE = 0.6826894921370859   # 2 Phi(1) - 1
ERF_INV_SQRT8 = 0.38292492254802624          # erf(1 / sqrt 8)


def one_site(beta=0.0, h=0.0):
    return make_ising(from_edges(1, []), beta, h)


def test_one_site_generator():
    G = build_generator(one_site())
    assert np.allclose(G.Q.toarray(), [[-0.5, 0.5], [0.5, -0.5]])


def test_generator_rows_and_detailed_balance():
    m = make_ising(build_box(1, 3), 0.7, 0.2)
    for kind in ("hb", "mh"):
        G = build_generator(m, kind)
        Q = G.Q.toarray()
        assert np.allclose(Q.sum(axis=1), 0, atol=1e-14)
        F = G.pi[:, None] * Q
        assert np.abs(F - F.T).max() < 1e-12
        assert np.allclose(stationary_from_generator(G.Q), gibbs_enumerate(m)[1], atol=1e-10)


def test_generator_budget():
    with pytest.raises(ModelError):
        build_generator(make_ising(build_torus(2, 5), 0.1))


def test_heat_kernel_two_state():
    G = build_generator(one_site())
    init = np.array([0.0, 1.0])
    assert np.allclose(heat_kernel(G, init, 0.0), init)
    for t in (0.1, 1.0, 3.0):
        assert heat_kernel(G, init, t)[1] == pytest.approx(0.5 * (1 + math.exp(-t)), abs=1e-12)


def test_heat_kernel_reaches_stationarity():
    G = build_generator(make_ising(build_box(1, 3), 0.5))
    out = heat_kernel(G, G.point_mass(0), 200.0)
    assert abs(out.sum() - 1) < 1e-10
    assert distances(out, G.pi)[0] < 1e-8


def test_distances_examples(rng):
    assert distances([0.3, 0.7], [0.3, 0.7]) == (0.0, 0.0, 0.0)
    tv, l2, linf = distances([1.0, 0.0], [0.5, 0.5])
    assert (tv, l2, linf) == (0.5, 1.0, 1.0)
    for _ in range(50):
        nu, pi = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        tv, l2, linf = distances(nu, pi)
        assert tv <= 0.5 * l2 + 1e-12 and l2 <= linf + 1e-12
    with pytest.raises(ValueError):
        distances([0.5, 0.5], [1.0, 0.0])


def test_one_site_gap_and_log_sobolev():
    G = build_generator(one_site())
    assert spectral_gap(G) == pytest.approx(1.0, abs=1e-10)
    est = log_sobolev_estimate(G)
    assert est.alpha == pytest.approx(0.5, abs=1e-6)
    assert all(est.certificate.values())


def test_asymmetric_two_point_closed_form():
    G = build_generator(one_site(0.0, 0.6))
    est = log_sobolev_estimate(G)
    a, b = float(G.Q[0, 1]), float(G.Q[1, 0])
    assert est.alpha == pytest.approx(two_point_log_sobolev(a, b), abs=1e-6)
    assert all(est.certificate.values())


def test_gap_and_alpha_ordering():
    for m in (make_ising(build_box(1, 3), 0.4), make_potts(build_torus(1, 3), 3, 0.3)):
        G = build_generator(m)
        est = log_sobolev_estimate(G)
        assert 0 < 2 * est.alpha <= est.gap * (1 + 1e-9) and est.gap <= 1 + 1e-9


def test_ls_bound_potts():
    G = build_generator(make_potts(build_box(1, 3), 3, 0.1))
    for s in (1, 2, 4):
        res = check_ls_bound(G, 0, s)
        assert res["holds"] and res["margin"] > 0
    # kept above the 1e-12 truncation floor of the heat kernel
    big = check_ls_bound(G, 0, 20)
    assert big["holds"] and big["l2"] < 1e-8


def test_ls_bound_clamp():
    G = build_generator(one_site())
    res = check_ls_bound(G, 0, 1, alpha=0.5, gap=1.0)
    assert res["t"] == pytest.approx(1.0)


def test_product_functions():
    assert product_M([]) == 0.0 and product_tv_bound(0.0) == 0.0 and product_tv_asymptotic(0.0) == 0.0
    assert product_tv_asymptotic(4.0) == pytest.approx(TWO_PHI_ONE_MINUS_ONE, abs=1e-12)
    assert product_M([1.0, 2.0]) == 5.0
    with pytest.raises(ValueError):
        product_M([-1.0])
    for c in (-1.0, 0.0, 0.7):
        assert product_tv_asymptotic(math.exp(-2 * c)) == pytest.approx(math.erf(math.exp(-c) / math.sqrt(8)), abs=1e-14)
    x = np.linspace(0, 10, 101)
    diff = 2 * normal_cdf(x / 2) - 1 - np.array([math.erf(v / math.sqrt(8)) for v in x])
    assert np.abs(diff).max() < 1e-9


def test_product_exact_under_bound(rng):
    for _ in range(30):
        comps = [(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))) for _ in range(3)]
        M = product_M([distances(a, b)[1] for a, b in comps])
        assert product_tv_exact(comps) <= math.sqrt(M) + 1e-12


def test_hypercube():
    for n in (1, 5, 20):
        assert hypercube_tv_exact(n, 0.0) == pytest.approx(1 - 2.0 ** -n, abs=1e-12)
    assert hypercube_tv_exact(10, 500.0) < 1e-12
    row = hypercube_profile(10_000, [0.0])[0]
    assert row["erf"] == pytest.approx(ERF_INV_SQRT8, abs=1e-12)
    assert abs(row["tv"] - row["erf"]) < 0.02
    assert 0 < hypercube_tv_exact(10 ** 6, 0.25 * 10 ** 6 * math.log(10 ** 6)) < 1
    with pytest.raises(ValueError):
        hypercube_tv_exact(0, 1.0)


def test_product_cutoff_predict():
    assert product_cutoff_predict(1.0, 0.5, 0.5, math.e ** 2)[0] == pytest.approx(1.0)
    loc, win = product_cutoff_predict(1.0, 0.5, 0.5, 256)
    assert loc == pytest.approx(math.log(256) / 2) and win == pytest.approx(1.0)
    # i.i.d. two-state refresh chains: exact TV at the predicted location is intermediate
    p = 0.5 * (1 - math.exp(-loc))
    assert 0.05 < iid_two_state_tv(256, 1 - p) < 0.95
    with pytest.raises(ValueError):
        product_cutoff_predict(0.0, 0.5, 0.5, 10)


def test_plus_cutoff_predict():
    n = 1000.0
    assert plus_cutoff_predict(2, n, [1, 1]) == pytest.approx(math.log(n))
    assert plus_cutoff_predict(2, n, [0.5, 2]) == pytest.approx(2 * math.log(n))
    assert plus_cutoff_predict(1, n, [0.8]) == pytest.approx(math.log(n) / 1.6)
    forms = plus_cutoff_forms(2, n, [0.5, 2])
    assert forms["half_max_ratio"] == pytest.approx(2 * math.log(n))
    assert forms["half_max_product"] == pytest.approx(math.log(n))
    assert forms["min_ratio"] == pytest.approx(0.5 * math.log(n))
    with pytest.raises(ValueError):
        plus_cutoff_predict(2, n, [1.0])


def test_block_profile_independent():
    prof = block_profile(BlockSpec(1, 3, 0), 0.0, [0.0, 1.0, 2.0])
    assert prof.lam == pytest.approx(1.0, abs=1e-10)
    assert np.all(np.diff(prof.m_t) <= 1e-12)


def test_block_profile_size_indicator():
    a = block_profile(BlockSpec(2, 3, 2), 0.1, [0.0, 1.0])
    b = block_profile(BlockSpec(2, 4, 2), 0.1, [0.0, 1.0])
    assert 0 < a.lam <= 1 + 1e-9 and 0 < b.lam <= 1 + 1e-9
    assert abs(a.lam - b.lam) < 0.5


def test_exact_curve_properties():
    m = make_ising(build_torus(2, 2), 0.3)
    G = build_generator(m)
    grid = np.linspace(0, 6, 25)
    c = exact_curve(G, grid, model=m)
    assert c.starts == "extreme"
    assert np.all(np.diff(c.tv) <= 1e-12) and np.all((c.tv >= 0) & (c.tv <= 1))
    assert np.all(c.tv <= 0.5 * c.l2 + 1e-12) and np.all(c.l2 <= c.linf + 1e-12)
    gap = spectral_gap(G)
    assert np.all(np.exp(-grid * gap) <= 2 * c.tv + 1e-12)
    half = exact_curve(G, grid / 2, model=m)
    assert np.all(c.linf <= half.l2 ** 2 + 1e-10)


def test_tmix_one_site():
    for eps in (0.1, 0.25, 0.4):
        br = tmix_bracket(one_site(), eps)
        assert br.lower <= br.upper
        assert br.upper == pytest.approx(math.log(1 / (2 * eps)), rel=1e-8)
    with pytest.raises(ValueError):
        tmix_bracket(one_site(), 1.5)


@pytest.mark.slow
def test_empirical_bracket_contains_exact():
    m = make_ising(build_torus(2, 2), 0.2)
    exact = tmix_bracket(m, 0.25)
    emp = tmix_bracket(m, 0.25, "empirical", grid=np.linspace(0, 6, 25), replicas=400, seed=7)
    assert emp.lower <= exact.lower and exact.upper <= emp.upper


def test_cutoff_report():
    m = make_ising(build_torus(2, 2), 0.2)
    G = build_generator(m)
    c = exact_curve(G, np.linspace(0, 10, 201), model=m)
    rep = cutoff_report(c)
    eps = sorted(rep.tmix)
    vals = [rep.tmix[e] for e in eps]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert rep.windows[0.25] == pytest.approx(rep.tmix[0.25] - rep.tmix[0.75])
