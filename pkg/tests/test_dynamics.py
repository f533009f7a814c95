import math

import numpy as np
import pytest

from glaubercut.dynamics import (
    PolicyError,
    UpdateSequence,
    clopper_pearson,
    contact_bound,
    coupling_floor,
    coupling_tv_upper,
    disagreement_curve,
    evolve,
    geometric_grid,
    grand_evolve,
    replica_seed,
    run_replicas,
    sample_updates,
    simulate_contact,
    trajectory,
    update_law,
)
from glaubercut.graph import build_box, build_torus, from_edges
from glaubercut.model import (
    InfeasibleError,
    canonical_start,
    conditional_distribution,
    gibbs_enumerate,
    make_coloring,
    make_hardcore,
    make_ising,
    make_potts,
    zeta,
)


def test_empty_horizon():
    W = sample_updates(build_torus(2, 3), 0.0, 1)
    assert len(W) == 0 and W.horizon == 0.0


def test_event_counts_concentrate():
    inside = sum(abs(len(sample_updates(100, 10.0, s)) - 1000) <= 4 * math.sqrt(1000) for s in range(100))
    assert inside >= 99


def test_sequences_sorted_and_prefix_stable():
    g = build_torus(2, 4)
    W = sample_updates(g, 5.0, 9)
    assert np.all(np.diff(W.times) >= 0)
    assert np.all((W.u >= 0) & (W.u < 1))
    assert sample_updates(g, 8.0, 9).truncate(5.0) == W
    assert sample_updates(g, 5.0, 10) != W


@pytest.mark.parametrize("kind,policy,q", [("hb", "mono", 2), ("hb", "thresh", 3), ("hb", "perm", 5), ("mh", "mono", 3)])
def test_serialisation_round_trip(tmp_path, kind, policy, q):
    W = sample_updates(build_torus(2, 3), 4.0, 3, kind, policy, q)
    text = W.to_text()
    assert UpdateSequence.from_text(text).to_text() == text
    assert UpdateSequence.from_bytes(W.to_bytes()) == W
    for binary in (False, True):
        path = tmp_path / f"w{binary}.w"
        W.save(path, binary=binary)
        assert UpdateSequence.load(path) == W


def test_window_shifts_to_zero():
    W = sample_updates(build_torus(2, 3), 6.0, 2)
    part = W.window(2.0, 5.0)
    inside = (W.times > 2.0) & (W.times <= 5.0)
    assert part.horizon == 3.0 and len(part) == int(inside.sum())
    assert np.allclose(part.times, W.times[inside] - 2.0)
    assert np.array_equal(part.sites, W.sites[inside])


def test_metropolis_rejects_bounding_policy():
    with pytest.raises(PolicyError):
        sample_updates(4, 1.0, 0, "mh", "thresh")


def test_empty_sequence_is_identity():
    m = make_ising(build_torus(2, 3), 0.4)
    s = np.arange(9) % 2
    assert np.array_equal(evolve(m, s, UpdateSequence.from_events([], 9, horizon=1.0)), s)


@pytest.mark.parametrize("u,expected", [(0.0, 0), (0.4999, 0), (0.5, 1), (0.99, 1)])
def test_independent_update_splits_at_half(u, expected):
    m = make_ising(build_torus(2, 3), 0.0)
    W = UpdateSequence.from_events([(0.5, 2, u)], 9, horizon=1.0)
    assert evolve(m, np.zeros(9, int), W)[2] == expected


@pytest.mark.parametrize("policy", ["mono", "thresh"])
def test_one_site_law_matches_conditional(policy):
    m = make_ising(from_edges(1, []), 0.0, 0.37)
    law = update_law(m, [0], 0, "hb", policy, 2 ** 16)
    assert np.abs(law - conditional_distribution(m, [0], 0)).sum() <= 4 / 2 ** 16


def test_permutation_update_is_uniform_over_allowed_colours():
    m = make_coloring(build_box(1, 3), 4)
    law = update_law(m, [0, 1, 2], 1, "hb", "perm")
    assert np.allclose(law, [0, 0.5, 0, 0.5])


def test_metropolis_law():
    m = make_potts(build_torus(1, 3), 3, 0.8)
    s = np.array([0, 0, 1])
    p = conditional_distribution(m, s, 1)
    law = update_law(m, s, 1, "mh", "mono", 2 ** 14)
    exp1 = min(1, p[1] / p[0]) / 2
    exp2 = min(1, p[2] / p[0]) / 2
    assert law[1] == pytest.approx(exp1, abs=1e-3) and law[2] == pytest.approx(exp2, abs=1e-3)


def test_trajectory_grid_and_infeasible_start():
    m = make_hardcore(build_box(1, 3), 1.0)
    W = sample_updates(m.graph, 3.0, 5)
    traj = trajectory(m, [0, 0, 0], W, [0.0, 1.0, 3.0])
    assert traj.shape == (3, 3) and traj[0].tolist() == [0, 0, 0]
    with pytest.raises(InfeasibleError):
        evolve(m, [1, 1, 0], W)


def test_monotone_envelope_at_time_zero():
    m = make_ising(build_torus(2, 3), 0.3)
    res = grand_evolve(m, UpdateSequence.from_events([], 9, horizon=0.0), "mono")
    assert res.envelope.lower.tolist() == [0] * 9 and res.envelope.upper.tolist() == [1] * 9
    assert res.envelope.unknown.all()


def test_threshold_independent_sites_determined_on_update():
    m = make_ising(build_torus(2, 3), 0.0)
    W = UpdateSequence.from_events([(0.1, 0, 0.3), (0.2, 4, 0.9)], 9, policy="thresh", horizon=1.0)
    env = grand_evolve(m, W, "thresh").envelope
    assert env.value[0] >= 0 and env.value[4] >= 0 and (env.value < 0).sum() == 7


def test_monotone_sandwich_cosimulation(rng):
    m = make_ising(build_torus(2, 4), 0.4)
    for seed in range(10):
        W = sample_updates(m.graph, 5.0, seed)
        X = rng.integers(0, 2, size=(10, 16))
        res = grand_evolve(m, W, "mono", configs=X)
        assert res.violations == 0
        for k in range(10):
            final = evolve(m, X[k], W)
            assert np.all(res.envelope.lower <= final) and np.all(final <= res.envelope.upper)


def test_bounding_policies_against_all_starts():
    m = make_potts(build_torus(1, 5), 3, 0.4)
    states, p = gibbs_enumerate(m)
    for seed in range(5):
        W = sample_updates(m.graph, 3.0, seed, "hb", "thresh")
        res = grand_evolve(m, W, "thresh", configs=states)
        assert res.violations == 0
        outs = np.array([evolve(m, s, W) for s in states])
        det = res.envelope.value >= 0
        assert np.all(outs[:, det] == res.envelope.value[det])
    col = make_coloring(build_box(1, 4), 5)
    states, p = gibbs_enumerate(col)
    feas = states[p > 0]
    for seed in range(5):
        W = sample_updates(col.graph, 3.0, seed, "hb", "perm", 5)
        assert grand_evolve(col, W, "perm", configs=feas).violations == 0


def test_permutation_coupling_coalesces_with_many_colours():
    col = make_coloring(build_torus(2, 4), 24)
    W = sample_updates(col.graph, 30.0, 1, "hb", "perm", 24)
    assert math.isfinite(grand_evolve(col, W, "perm").coalescence_time)


def test_policy_errors():
    m = make_ising(build_torus(2, 3), 0.2)
    with pytest.raises(PolicyError):
        grand_evolve(m, sample_updates(m.graph, 1.0, 0, "mh"), "mono")
    pm = make_potts(build_torus(2, 3), 3, 0.2)
    with pytest.raises(PolicyError):
        grand_evolve(pm, sample_updates(pm.graph, 1.0, 0), "mono")


def test_disagreement_curve_limits():
    m = make_ising(build_torus(2, 4), 0.0)
    W = sample_updates(m.graph, 12.0, 3)
    frac, ind = disagreement_curve(m, W, "mono", [0.0, 12.0])
    assert frac[0] == 1.0 and frac[-1] == 0.0 and ind.shape == (2, 16)


def test_coupling_floor_matches_zeta_for_ising():
    m = make_ising(build_torus(2, 4), 0.1)
    assert coupling_floor(m).sum() == pytest.approx(zeta(m))


def test_contact_death_process():
    g = build_torus(2, 6)
    grid = np.array([0.0, 0.5, 1.0])
    runs = np.array([simulate_contact(g, 1.0, 1.0, s, grid)[1] for s in range(300)], float)
    mean = runs.mean(axis=0)
    se = runs.std(axis=0, ddof=1) / math.sqrt(300)
    assert mean[0] == 36
    assert np.all(np.abs(mean[1:] - 36 * np.exp(-grid[1:])) < 4 * se[1:])


def test_contact_bound_formula():
    assert contact_bound(100, 2, 0.9, 0.0) == 100
    assert contact_bound(1, 2, 0.9, 2.0) == pytest.approx(math.exp(-1.0))


def test_coupling_bound_single_site():
    m = make_ising(from_edges(1, []), 0.0)
    grid = np.array([0.0, 0.5, 1.0, 2.0])
    res = coupling_tv_upper(m, grid, 500, 4, level=0.999)
    assert res["estimate"][0] == 1.0
    assert np.all((res["lower"] <= np.exp(-grid)) & (np.exp(-grid) <= res["upper"]))


def test_replicas_are_order_stable_across_workers():
    a = run_replicas(len_of_sequence, 11, 6, workers=1)
    b = run_replicas(len_of_sequence, 11, 6, workers=3)
    assert a == b and len(set(replica_seed(11, k) for k in range(6))) == 6


def len_of_sequence(seed):
    return len(sample_updates(9, 2.0, seed))


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0 and clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(5, 10)
    assert lo < 0.5 < hi


def test_geometric_grid():
    g = geometric_grid(10.0, 5)
    assert g[0] == 0.0 and g[-1] == pytest.approx(10.0) and len(g) == 5
