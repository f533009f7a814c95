import math

import numpy as np
import pytest

from glaubercut.graph import build_box, build_torus, from_edges
from glaubercut.model import (
    InfeasibleError,
    ModelError,
    all_states,
    canonical_start,
    clamps_to_fields,
    conditional_distribution,
    from_tables,
    gibbs_enumerate,
    induced,
    is_feasible,
    log_weight,
    make_antipotts,
    make_coloring,
    make_hardcore,
    make_ising,
    make_potts,
    perturbed_conditionals,
    zeta,
    zeta_floor,
    zeta_metropolis,
)

# frozen oracle: 1 / (1 + exp(-2.56)) evaluated independently
P_PLUS_032 = 0.9282425


def test_independent_spins_uniform():
    m = make_ising(build_torus(2, 3), 0.0)
    for x in range(9):
        assert np.allclose(conditional_distribution(m, np.zeros(9, int), x), 0.5)


def test_single_edge_weights():
    m = make_ising(build_box(1, 2), 0.5)
    assert log_weight(m, [1, 1]) == pytest.approx(0.5)
    assert log_weight(m, [0, 1]) == pytest.approx(-0.5)


def test_clamp_equals_field():
    plus = make_ising(build_box(1, 2, [1, None]), 0.4)
    fld = make_ising(build_box(1, 2), 0.4, [0.4, 0.0])
    s = np.array([0, 1])
    for x in range(2):
        assert np.allclose(conditional_distribution(plus, s, x), conditional_distribution(fld, s, x))
    assert np.allclose(gibbs_enumerate(plus)[1], gibbs_enumerate(clamps_to_fields(plus))[1])


def test_potts_two_matches_ising():
    g = build_torus(2, 3)
    s = np.array([0, 1, 1, 0, 0, 1, 0, 1, 1])
    a, b = make_ising(g, 0.3), make_potts(g, 2, 0.3)
    for x in range(9):
        assert np.allclose(conditional_distribution(a, s, x), conditional_distribution(b, s, x))


def test_hardcore_isolated():
    m = make_hardcore(from_edges(1, []), 3.0)
    assert conditional_distribution(m, [0], 0)[1] == pytest.approx(0.75)


def test_coloring_edge_enumeration():
    _, p = gibbs_enumerate(make_coloring(build_box(1, 2), 3))
    assert (p > 0).sum() == 6 and np.allclose(p[p > 0], 1 / 6)


def test_ising_four_plus_neighbours():
    m = make_ising(build_torus(2, 3), 0.32)
    p = conditional_distribution(m, np.ones(9, int), 4)[1]
    assert p == pytest.approx(1 / (1 + math.exp(-2.56)), abs=1e-15)
    assert p == pytest.approx(P_PLUS_032, abs=1e-7)


def test_forced_colour_and_blocked_site():
    col = make_coloring(build_box(1, 3), 3)
    assert conditional_distribution(col, [0, 0, 1], 1).tolist() == [0.0, 0.0, 1.0]
    hc = make_hardcore(build_box(1, 3), 2.0)
    assert conditional_distribution(hc, [1, 0, 0], 1)[1] == 0.0


def test_all_zero_conditional_raises():
    t = np.where(np.eye(2, dtype=bool), -np.inf, 0.0)
    col = from_tables(build_box(1, 3), (1, 2), lambda u, v: t)
    with pytest.raises(InfeasibleError):
        conditional_distribution(col, [0, 0, 1], 1)


def test_zeta_values():
    assert zeta(make_ising(build_torus(2, 3), 0.0)) == pytest.approx(1.0)
    assert zeta(make_hardcore(build_torus(2, 4), 0.2)) == pytest.approx(1 / 1.2)
    # the minimising neighbourhood is all-agreeing: 2 / (1 + e^{8 beta})
    assert zeta(make_ising(build_torus(2, 4), 0.1)) == pytest.approx(2 / (1 + math.exp(0.8)), abs=1e-15)
    assert zeta(make_ising(build_torus(2, 4), 0.1)) == pytest.approx(0.620051, abs=1e-6)


def test_zeta_brute_force_over_neighbourhoods():
    beta = 0.1
    best = 1.0
    for bits in range(16):
        s = sum(1 if bits >> k & 1 else -1 for k in range(4))
        p_plus = 1 / (1 + math.exp(-2 * beta * s))
        best = min(best, min(p_plus, 1 - p_plus))
    assert 2 * best == pytest.approx(zeta(make_ising(build_torus(2, 4), beta)), abs=1e-15)


def test_hardcore_threshold_rule():
    delta = 4
    g = build_torus(2, 4)
    below, above = make_hardcore(g, 0.9 / delta), make_hardcore(g, 1.1 / delta)
    assert zeta(below) > delta / (delta + 1) > zeta(above)


def test_zeta_floor_and_metropolis_range():
    m = make_potts(build_torus(2, 3), 3, 0.4)
    f = zeta_floor(m)
    assert f.shape == (3,) and f.sum() == pytest.approx(zeta(m))
    assert 0 <= zeta_metropolis(m) <= 1


def test_gibbs_examples():
    _, p = gibbs_enumerate(make_ising(build_box(1, 3), 0.0))
    assert np.allclose(p, 1 / 8)
    beta = 0.7
    _, p = gibbs_enumerate(make_ising(build_box(1, 2), beta))
    z = 2 * math.exp(beta) + 2 * math.exp(-beta)
    assert np.allclose(p, np.array([math.exp(beta), math.exp(-beta), math.exp(-beta), math.exp(beta)]) / z)
    _, p = gibbs_enumerate(make_hardcore(build_box(1, 2), 1.0))
    assert np.allclose(p, [1 / 3, 1 / 3, 1 / 3, 0])


def test_gibbs_budget():
    with pytest.raises(ModelError):
        gibbs_enumerate(make_ising(build_torus(2, 5), 0.1))


def test_validation_errors():
    with pytest.raises(ModelError, match="Delta"):
        make_coloring(build_torus(2, 4), 4)
    with pytest.raises(ModelError):
        make_hardcore(build_box(1, 3), 0.0)
    with pytest.raises(ModelError):
        make_antipotts(build_box(1, 3), 3, 0.5)
    with pytest.raises(ModelError):
        from_tables(build_box(1, 2), (0, 1), lambda u, v: np.zeros((2, 2)), np.array([[0.0, np.nan]] * 2))


def test_canonical_start_feasible():
    for m in (make_coloring(build_torus(2, 4), 5), make_hardcore(build_torus(2, 4), 1.0),
              make_ising(build_box(2, 3, -1), 0.3)):
        assert is_feasible(m, canonical_start(m))


def test_induced_keeps_clamps_as_fields():
    m = make_ising(build_box(1, 3, [1, None]), 0.5)
    sub = induced(m, [0])
    p = conditional_distribution(sub, [0], 0)
    assert p[1] == pytest.approx(1 / (1 + math.exp(-1.0)))


def test_monotonicity_flags():
    assert make_ising(build_torus(2, 3), 0.3).is_monotone
    assert not make_potts(build_torus(2, 3), 3, 0.3).is_monotone


def test_all_states_order():
    s = all_states(2, 3)
    assert s.shape == (9, 2) and s[1].tolist() == [0, 1] and s[3].tolist() == [1, 0]


def test_perturbation_hook_is_scoped():
    m = make_ising(build_box(1, 2), 0.0)
    with perturbed_conditionals(0.1):
        assert conditional_distribution(m, [0, 0], 0)[0] == pytest.approx(0.55)
    assert conditional_distribution(m, [0, 0], 0)[0] == pytest.approx(0.5)
