"""Self-check suites run by ``glaubercut verify``.

Every check is a function of a pinned seed returning ``(passed, detail)``
with a JSON-ready ``detail``; the suites are deterministic, so reports are
byte-identical across runs and worker counts.  ``invariants`` holds property
checks over randomised small instances, ``oracles`` compares against frozen
closed-form or hand-enumerated values.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from . import __version__
from .analytics import (
    build_generator,
    check_ls_bound,
    distances,
    exact_curve,
    heat_kernel,
    hypercube_tv_exact,
    iid_two_state_tv,
    log_sobolev_estimate,
    normal_cdf,
    plus_cutoff_predict,
    product_cutoff_predict,
    product_M,
    product_tv_asymptotic,
    product_tv_exact,
    spectral_gap,
    stationary_from_generator,
    tmix_bracket,
    two_point_log_sobolev,
    block_profile,
)
from .dynamics import (
    UpdateSequence,
    contact_bound,
    coupling_tv_upper,
    evolve,
    grand_evolve,
    sample_updates,
    simulate_contact,
    update_law,
)
from .graph import (
    BlockSpec,
    Graph,
    ball,
    build_block,
    build_box,
    build_torus,
    build_variant,
    components,
    diameter,
    distance,
    from_edges,
    from_text,
    to_text,
)
from .model import (
    SpinModel,
    all_states,
    canonical_start,
    clamps_to_fields,
    conditional_distribution,
    gibbs_enumerate,
    is_feasible,
    log_weight,
    make_antipotts,
    make_coloring,
    make_hardcore,
    make_ising,
    make_potts,
    perturbed_conditionals,
    zeta,
)
from .support import (
    BarrierSystem,
    SparseParams,
    barrier_evolve,
    check_sparse,
    compute_r,
    compute_rho,
    projection_inequality,
    support_exact,
    support_superset,
)

__all__ = ["SUITES", "CHECKS", "random_instance", "run_suite"]

SUITES = ("invariants", "oracles", "all")
VERIFY_SEED = 20240601
LAW_RESOLUTION = 2 ** 12


# ---------------------------------------------------------------------------
# Random small instances
# ---------------------------------------------------------------------------

def random_graph(rng: np.random.Generator, n: int, clamps: bool = True) -> Graph:
    """Random connected graph on ``n`` sites (a random tree plus extra edges),
    optionally with a few clamped boundary vertices."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    for _ in range(int(rng.integers(0, n))):
        u, v = sorted(int(x) for x in rng.choice(n, size=2, replace=False)) if n > 1 else (0, 0)
        if u != v:
            edges.add((u, v))
    cl = {}
    if clamps and n > 1:
        for k in range(int(rng.integers(0, 3))):
            b = n + k
            cl[b] = None
            edges.add((int(rng.integers(0, n)), b))
    return from_edges(n, sorted(edges), cl or None)


def random_instance(rng: np.random.Generator, max_sites: int = 6, kinds=("ising", "potts", "hardcore"),
                    max_states: int = 4096) -> SpinModel:
    """Random small Ising, Potts or hard-core model (at most ``max_states``
    configurations) with random couplings, fields and clamps."""
    kind = kinds[int(rng.integers(0, len(kinds)))]
    q = {"ising": 2, "hardcore": 2}.get(kind, 3)
    cap = max(1, int(math.floor(math.log(max_states) / math.log(q) + 1e-9)))
    n = int(rng.integers(1, min(max_sites, cap) + 1))
    g = random_graph(rng, n)
    spins = {"ising": (-1, 1), "hardcore": (0, 1)}.get(kind, (1, 2, 3))
    clamps = {b: spins[int(rng.integers(0, len(spins)))] for b in g.clamps}
    if kind == "hardcore":
        clamps = {b: 0 for b in g.clamps}
    g = from_edges(g.n_sites, [(u, v) for u, v in g.edges()], clamps or None)
    if kind == "ising":
        return make_ising(g, float(rng.uniform(-0.6, 1.0)), rng.uniform(-0.5, 0.5, size=n))
    if kind == "potts":
        return make_potts(g, 3, float(rng.uniform(-0.5, 1.0)))
    return make_hardcore(g, float(rng.uniform(0.2, 3.0)))


def _random_feasible(m: SpinModel, rng: np.random.Generator, steps: float = 3.0) -> np.ndarray:
    W = sample_updates(m.graph, steps, int(rng.integers(0, 2 ** 63)), "hb",
                       "perm" if m.kind == "coloring" else "thresh" if not m.is_monotone else "mono", m.q)
    return evolve(m, canonical_start(m), W)


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


# ---------------------------------------------------------------------------
# Invariants
# ---------------------------------------------------------------------------

def _expected_law(m: SpinModel, sigma, x: int, kind: str) -> np.ndarray:
    p = conditional_distribution(m, sigma, x)
    if kind == "hb":
        return p
    q, cur = m.q, int(sigma[x])
    out = np.zeros(q)
    for s in range(q):
        if s != cur:
            out[s] = min(1.0, p[s] / p[cur]) / (q - 1)
    out[cur] = 1.0 - out.sum()
    return out


def check_marginal_correctness(seed: int):
    """Compiled single-site updates reproduce the reference conditionals
    (heat-bath under every policy, Metropolis acceptance rule)."""
    rng = _rng(seed, 1)
    cases = [
        (make_ising(build_box(1, 3, [1, -1]), 0.4, [0.3, -0.2, 0.0]), [("hb", "mono"), ("hb", "thresh"), ("mh", "mono")]),
        (make_ising(build_torus(2, 3), 0.3, 0.1), [("hb", "mono"), ("hb", "thresh"), ("mh", "mono")]),
        (make_potts(build_box(2, 2), 3, 0.5), [("hb", "mono"), ("hb", "thresh"), ("mh", "mono")]),
        (make_antipotts(build_torus(1, 5), 3, -0.7), [("hb", "mono"), ("hb", "thresh")]),
        (make_hardcore(build_torus(1, 6), 1.5), [("hb", "mono"), ("hb", "thresh")]),
        (make_coloring(build_box(1, 4), 4), [("hb", "mono"), ("hb", "perm"), ("mh", "mono")]),
    ]
    worst = 0.0
    evaluated = 0
    for m, pols in cases:
        tol = 2.0 * m.q / LAW_RESOLUTION + 1e-12
        for _ in range(3):
            sigma = _random_feasible(m, rng)
            for x in range(m.n_sites):
                for kind, pol in pols:
                    law = update_law(m, sigma, x, kind, pol, LAW_RESOLUTION)
                    exp = _expected_law(m, sigma, x, kind)
                    err = float(np.abs(law - exp).sum())
                    worst = max(worst, err / tol)
                    evaluated += 1
    return worst <= 1.0, {"laws": evaluated, "worst_error_over_tolerance": worst}


def check_conditionals_match_enumeration(seed: int):
    """Conditionals equal ratios of enumerated Gibbs weights."""
    rng = _rng(seed, 2)
    worst = 0.0
    for _ in range(30):
        m = random_instance(rng, 5)
        states, probs = gibbs_enumerate(m)
        sigma = states[int(rng.choice(len(states), p=probs))]
        x = int(rng.integers(0, m.n_sites))
        idx = []
        for s in range(m.q):
            t = sigma.copy()
            t[x] = s
            idx.append(int(np.ravel_multi_index(tuple(t), (m.q,) * m.n_sites)))
        ref = probs[idx] / probs[idx].sum()
        worst = max(worst, float(np.abs(conditional_distribution(m, sigma, x) - ref).max()))
    return worst < 1e-12, {"max_abs_error": worst}


def check_clamps_as_fields(seed: int):
    """Replacing clamped neighbours by fields leaves the Gibbs measure unchanged."""
    rng = _rng(seed, 3)
    worst = 0.0
    for _ in range(20):
        m = random_instance(rng, 5)
        _, p1 = gibbs_enumerate(m)
        _, p2 = gibbs_enumerate(clamps_to_fields(m))
        worst = max(worst, float(np.abs(p1 - p2).max()))
    return worst < 1e-12, {"max_abs_error": worst}


def check_graph_structure(seed: int):
    """Adjacency is symmetric, loop-free, and survives a text round trip."""
    graphs = [build_box(2, 4), build_box(2, 3, "plus"), build_box(3, 2, [1, None, -1, None, None, 1]),
              build_torus(2, 5), build_torus(2, 2), build_block(BlockSpec(2, 6, 1)),
              build_variant("triangular", n1=4), build_variant("hexagonal", n1=4, n2=6),
              build_variant("ladder", n=5), build_variant("long_range", d=1, n=10, l=2)]
    ok = True
    for g in graphs:
        for v in range(g.n):
            nb = g.neighbors(v)
            if v in nb:
                ok = False
            for w in nb:
                if v not in g.neighbors(int(w)):
                    ok = False
        h = from_text(to_text(g))
        ok &= bool(np.array_equal(h.indptr, g.indptr) and np.array_equal(h.indices, g.indices))
        ok &= h.clamps == g.clamps
    return ok, {"graphs": len(graphs)}


def check_sequence_determinism(seed: int):
    """Sequences are reproducible, prefix-consistent in the horizon, and
    survive both serialisations."""
    g = build_torus(2, 4)
    ok = True
    for kind, pol, q in [("hb", "mono", 2), ("hb", "perm", 4), ("mh", "mono", 3)]:
        a = sample_updates(g, 5.0, seed, kind, pol, q)
        b = sample_updates(g, 5.0, seed, kind, pol, q)
        c = sample_updates(g, 9.0, seed, kind, pol, q).truncate(5.0)
        ok &= a == b and a == c
        ok &= UpdateSequence.from_text(a.to_text()) == a
        ok &= UpdateSequence.from_bytes(a.to_bytes()) == a
        ok &= UpdateSequence.from_text(a.to_text()).to_text() == a.to_text()
    return bool(ok), {"events": int(len(sample_updates(g, 5.0, seed)))}


def check_monotone_sandwich(seed: int):
    """Explicit chains stay between the extreme chains at every event."""
    rng = _rng(seed, 4)
    m = make_ising(build_torus(2, 4), 0.35)
    viol = 0
    for k in range(10):
        W = sample_updates(m.graph, 6.0, int(rng.integers(0, 2 ** 63)))
        X = rng.integers(0, 2, size=(10, m.n_sites))
        viol += grand_evolve(m, W, "mono", configs=X).violations
    return viol == 0, {"violations": int(viol), "trajectories": 100}


def _exhaustive_determined(m: SpinModel, W: UpdateSequence, policy: str) -> tuple[int, int]:
    """False-determined sites of a bounding coupling against every start."""
    states, probs = gibbs_enumerate(m)
    starts = states[probs > 0]
    res = grand_evolve(m, W, policy, configs=starts)
    return res.violations, int((res.envelope.value >= 0).sum())


def check_bounding_soundness(seed: int):
    """Threshold and permutation couplings never mark a site determined
    when the chains from all starts disagree there."""
    rng = _rng(seed, 5)
    false_det = 0
    determined = 0
    for k in range(12):
        m = random_instance(rng, 7)
        W = sample_updates(m.graph, float(rng.uniform(0.5, 4.0)), int(rng.integers(0, 2 ** 63)), "hb", "thresh")
        v, d = _exhaustive_determined(m, W, "thresh")
        false_det += v
        determined += d
    for k in range(6):
        m = make_coloring(build_box(1, 5), 5)
        W = sample_updates(m.graph, 3.0, int(rng.integers(0, 2 ** 63)), "hb", "perm", 5)
        v, d = _exhaustive_determined(m, W, "perm")
        false_det += v
        determined += d
    return false_det == 0, {"false_determined": int(false_det), "determined": determined}


def check_generator_stationarity(seed: int):
    """Heat-bath and Metropolis generators are reversible with respect to
    the enumerated Gibbs measure."""
    rng = _rng(seed, 6)
    worst = 0.0
    for _ in range(12):
        m = random_instance(rng, 5)
        for kind in ("hb", "mh"):
            G = build_generator(m, kind)
            pi = stationary_from_generator(G.Q)
            worst = max(worst, float(np.abs(pi - G.pi).max()))
            D = G.Q.multiply(G.pi[:, None]).tocsr()
            worst = max(worst, float(abs(D - D.T).max()) if D.nnz else 0.0)
    return worst < 1e-9, {"max_abs_error": worst}


def check_support_containment(seed: int):
    """Exact barrier-map supports lie inside the bounding superset."""
    rng = _rng(seed, 7)
    viol = 0
    for _ in range(40):
        m = random_instance(rng, 6, max_states=729)
        r = int(rng.integers(0, 3))
        b = BarrierSystem(m, r)
        pol = "mono" if m.is_monotone else "thresh"
        W = sample_updates(m.graph, float(rng.uniform(0.2, 3.0)), int(rng.integers(0, 2 ** 63)), "hb", pol)
        ex = set(support_exact(b, W).sites.tolist())
        sup = set(support_superset(b, W, pol).sites.tolist())
        viol += len(ex - sup)
    return viol == 0, {"violations": viol, "instances": 40}


def check_projection_inequality(seed: int):
    """Pushforward distance is bounded by the support-projected distance."""
    rng = _rng(seed, 8)
    worst = -math.inf
    for _ in range(15):
        m = random_instance(rng, 3, max_states=27)
        N = m.q ** m.n_sites
        phi = rng.dirichlet(np.ones(N))
        psi = rng.dirichlet(np.ones(N))
        lhs, rhs = projection_inequality(m, phi, psi)
        worst = max(worst, lhs - rhs)
    return worst <= 1e-12, {"max_lhs_minus_rhs": worst}


def check_barrier_equals_evolve(seed: int):
    """Barrier maps with balls covering the graph equal the plain map."""
    rng = _rng(seed, 9)
    bad = 0
    for _ in range(20):
        m = random_instance(rng, 6)
        b = BarrierSystem(m, m.n_sites)
        pol = "mono" if m.is_monotone else "thresh"
        W = sample_updates(m.graph, 3.0, int(rng.integers(0, 2 ** 63)), "hb", pol)
        s0 = _random_feasible(m, rng)
        bad += int(not np.array_equal(barrier_evolve(b, s0, W), evolve(m, s0, W)))
    return bad == 0, {"mismatches": bad}


def check_superset_frames(seed: int):
    """Superset fractions are nonincreasing and masks nested across frames."""
    m = make_ising(build_torus(2, 8), 0.2)
    W = sample_updates(m.graph, 8.0, seed)
    rep = support_superset(BarrierSystem(m, 1), W, "mono", frames=[0, 1, 2, 4, 8], keep_masks=True)
    fr = [float(f) for f in rep.fractions]
    ok = all(b <= a for a, b in zip(fr, fr[1:]))
    ok &= all(bool(np.all(b <= a)) for a, b in zip(rep.frame_masks, rep.frame_masks[1:]))
    ok &= fr[0] == 1.0
    return ok, {"fractions": fr}


def check_distance_curves(seed: int):
    """Worst-start TV is nonincreasing and sup-norm decay is controlled by
    the L2 distance at half the time."""
    rng = _rng(seed, 10)
    ok = True
    worst = -math.inf
    for _ in range(8):
        m = random_instance(rng, 4)
        G = build_generator(m)
        grid = np.linspace(0.0, 6.0, 25)
        c = exact_curve(G, grid, starts="all")
        half = exact_curve(G, grid / 2, starts="all")
        ok &= bool(np.all(np.diff(c.tv) <= 1e-12))
        worst = max(worst, float(np.max(c.linf - half.l2 ** 2)))
    return bool(ok and worst <= 1e-9), {"max_linf_minus_l2sq": worst}


def check_spectral_order(seed: int):
    """``0 < 2 alpha <= gap <= 1`` and the L2 decay bound holds."""
    rng = _rng(seed, 11)
    ok = True
    worst_margin = math.inf
    for _ in range(10):
        m = random_instance(rng, 4)
        G = build_generator(m)
        if G.N < 2:
            continue
        gap = spectral_gap(G)
        est = log_sobolev_estimate(G, restarts=8, seed=seed)
        ok &= 0 < 2 * est.alpha <= gap * (1 + 1e-9) and gap <= 1 + 1e-10
        start = int(np.argmin(G.pi))
        for s in (1, 2, 4):
            r = check_ls_bound(G, start, s, est.alpha, gap)
            ok &= bool(r["holds"])
            worst_margin = min(worst_margin, r["margin"])
    return bool(ok), {"min_margin": worst_margin}


def check_product_bound(seed: int):
    """Product TV never exceeds the root of the summed squared L2 distances."""
    rng = _rng(seed, 12)
    worst = -math.inf
    for _ in range(200):
        comps = []
        for _ in range(int(rng.integers(1, 5))):
            k = int(rng.integers(2, 4))
            comps.append((rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k) * 2)))
        l2 = [distances(nu, pi)[1] for nu, pi in comps]
        worst = max(worst, product_tv_exact(comps) - math.sqrt(product_M(l2)))
    return worst <= 1e-12, {"max_tv_minus_sqrtM": worst}


def check_normal_erf_identity(seed: int):
    xs = np.linspace(0.0, 6.0, 61)
    err = max(abs(2 * normal_cdf(x / 2) - 1 - math.erf(x / math.sqrt(8))) for x in xs)
    return err < 1e-14, {"max_abs_error": float(err)}


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def _close(a, b, tol):
    return abs(float(a) - float(b)) <= tol


def oracle_graph(seed: int):
    res = {}
    g = build_box(1, 3)
    res["path3"] = g.n_sites == 3 and g.delta == 2 and not g.clamps
    g = build_box(2, 2, 1)
    res["box2_plus"] = all(g.degree(v) == 4 for v in range(4)) and g.n == 12
    g = build_box(2, 4)
    res["box4_degrees"] = max(g.degree(v) for v in range(16)) == 4 and min(g.degree(v) for v in range(16)) == 2
    res["cycle4"] = build_torus(1, 4).n_sites == 4 and build_torus(1, 4).delta == 2
    res["torus3"] = all(build_torus(2, 3).degree(v) == 4 for v in range(9))
    res["torus64"] = build_torus(2, 64).n_sites == 4096
    b = build_block(BlockSpec(2, 6, 2))
    # 1-based window {1..4} per axis, stored 0-based
    coords = {tuple(int(c) for c in b.coords[v]) for v in b.inner_block}
    res["block_inner"] = coords == {(i, j) for i in range(4) for j in range(4)}
    res["ladder"] = build_variant("ladder", n=5).n_sites == 10 and build_variant("ladder", n=5).delta == 3
    res["triangular"] = build_variant("triangular", n1=8, n2=8).delta == 6
    lr = build_variant("long_range", d=1, n=10, l=2)
    res["long_range"] = all(lr.degree(v) == 4 for v in range(10))
    t = build_torus(2, 10)
    res["ball_r0"] = ball(t, 0, 0).tolist() == [0]
    res["ball_graph_r1"] = len(ball(t, 0, 1)) == 5
    res["ball_linf_r1"] = len(ball(t, 0, 1, "linf")) == 9
    res["distance_path"] = distance(build_box(1, 3), 0, 2) == 2
    res["diameter_single"] = diameter(t, [7]) == 0
    comps = components(build_torus(1, 10), [0, 1, 5], 1)
    res["components"] = sorted(sorted(c) for c in comps) == [[0, 1], [5]]
    res["compute_r"] = compute_r(2, 1.0, math.e) == 20
    res["rho"] = compute_rho(build_torus(2, 10), 2, "graph") == 13
    return all(res.values()), {k: bool(v) for k, v in res.items()}


def oracle_model(seed: int):
    res = {}
    e = build_box(1, 2)
    m = make_ising(e, 0.5)
    res["edge_weights"] = _close(log_weight(m, [1, 1]), 0.5, 1e-15) and _close(log_weight(m, [0, 1]), -0.5, 1e-15)
    m = make_ising(build_torus(2, 3), 0.0)
    res["uniform_conditionals"] = np.allclose(conditional_distribution(m, np.zeros(9, int), 4), 0.5, atol=0)
    m = make_ising(build_torus(2, 3), 0.32)
    p = conditional_distribution(m, np.ones(9, int), 4)[1]
    res["p_plus_0.32"] = _close(p, 1 / (1 + math.exp(-2.56)), 1e-15) and _close(p, 0.92824, 5e-6)
    iso = make_hardcore(from_edges(1, []), 3.0)
    res["hardcore_isolated"] = _close(conditional_distribution(iso, [0], 0)[1], 0.75, 1e-15)
    col = make_coloring(e, 3)
    states, probs = gibbs_enumerate(col)
    res["coloring_edge"] = int((probs > 0).sum()) == 6 and np.allclose(probs[probs > 0], 1 / 6, atol=1e-15)
    path = build_box(1, 3)
    colp = make_coloring(path, 3)
    res["forced_colour"] = conditional_distribution(colp, [0, 0, 1], 1).tolist() == [0.0, 0.0, 1.0]
    hc = make_hardcore(path, 2.0)
    res["hardcore_blocked"] = conditional_distribution(hc, [1, 0, 0], 1)[1] == 0.0
    g = build_torus(2, 3)
    pi_i = gibbs_enumerate(make_ising(g, 0.3))[1]
    pi_p = gibbs_enumerate(make_potts(g, 2, 0.3))[1]
    res["potts2_is_ising"] = float(np.abs(pi_i - pi_p).max()) < 1e-14
    # a single site with both faces clamped plus sees two plus neighbours
    plus = make_ising(build_box(1, 1, 1), 0.7)
    fld = make_ising(from_edges(1, []), 0.0, 1.4)
    res["clamp_is_field"] = np.allclose(conditional_distribution(plus, [0], 0),
                                        conditional_distribution(fld, [0], 0), atol=1e-15)
    res["zeta_beta0"] = _close(zeta(make_ising(g, 0.0)), 1.0, 1e-15)
    res["zeta_hardcore"] = _close(zeta(make_hardcore(build_torus(2, 4), 0.2)), 1 / 1.2, 1e-15)
    res["zeta_ising_0.1"] = _close(zeta(make_ising(build_torus(2, 4), 0.1)), 2 / (1 + math.exp(0.8)), 1e-15)
    _, p3 = gibbs_enumerate(make_ising(path, 0.0))
    res["uniform_8"] = np.allclose(p3, 1 / 8, atol=1e-15)
    _, pe = gibbs_enumerate(make_ising(e, 0.4))
    z = 2 * math.exp(0.4) + 2 * math.exp(-0.4)
    res["edge_vector"] = np.allclose(pe, [math.exp(0.4) / z, math.exp(-0.4) / z, math.exp(-0.4) / z, math.exp(0.4) / z], atol=1e-15)
    _, ph = gibbs_enumerate(make_hardcore(e, 1.0))
    res["hardcore_edge"] = np.allclose(ph, [1 / 3, 1 / 3, 1 / 3, 0.0], atol=1e-15)
    return all(bool(v) for v in res.values()), {k: bool(v) for k, v in res.items()}


def oracle_dynamics(seed: int):
    res = {}
    det = {}
    g = build_torus(2, 3)
    m0 = make_ising(g, 0.0)
    res["empty_sequence"] = len(sample_updates(g, 0.0, seed)) == 0
    s0 = np.zeros(9, dtype=np.int64)
    W0 = UpdateSequence.from_events([], 9, horizon=1.0)
    res["identity"] = np.array_equal(evolve(m0, s0, W0), s0)
    for u in (0.1, 0.4999, 0.5, 0.9):
        W = UpdateSequence.from_events([(0.5, 4, u)], 9, horizon=1.0)
        res[f"beta0_u{u}"] = int(evolve(m0, s0, W)[4]) == int(u >= 0.5)
    one = make_ising(from_edges(1, []), 0.0, 0.3)
    law = update_law(one, [0], 0, resolution=2 ** 16)
    res["one_site_law"] = float(np.abs(law - conditional_distribution(one, [0], 0)).sum()) <= 2 * 2 / 2 ** 16
    counts = [len(sample_updates(100, 10.0, seed + k)) for k in range(100)]
    inside = sum(abs(c - 1000) <= 4 * math.sqrt(1000) for c in counts)
    det["poisson_inside"] = inside
    res["poisson_counts"] = inside >= 99
    res["mono_t0"] = grand_evolve(make_ising(g, 0.3), W0, "mono").envelope.unknown.all()
    Wc = UpdateSequence.from_events([(0.1 * (x + 1), x, 0.3) for x in range(9)], 9, policy="thresh", horizon=1.0)
    res["thresh_beta0"] = not grand_evolve(m0, Wc, "thresh").envelope.unknown.any()
    # pure death process
    grid = np.array([0.0, 0.5, 1.0, 2.0])
    tor = build_torus(2, 6)
    runs = np.array([simulate_contact(tor, 1.0, 2.0, seed + k, grid)[1] for k in range(200)], float)
    mean = runs.mean(axis=0)
    se = runs.std(axis=0, ddof=1) / math.sqrt(len(runs)) + 1e-12
    z = np.abs(mean - 36 * np.exp(-grid)) / se
    det["death_z"] = [float(v) for v in z]
    res["death_process"] = bool(np.all(z[1:] < 4)) and mean[0] == 36
    res["contact_bound_rate"] = _close(math.log(36 / contact_bound(36, 2, 0.9, 1.0)), 0.5, 1e-12)
    single = make_ising(from_edges(1, []), 0.0)
    cg = np.array([0.0, 0.5, 1.0, 2.0])
    cu = coupling_tv_upper(single, cg, 400, seed, level=0.999)
    res["coupling_t0"] = cu["estimate"][0] == 1.0
    res["coupling_single_clock"] = bool(np.all((cu["lower"] <= np.exp(-cg)) & (np.exp(-cg) <= cu["upper"])))
    return all(bool(v) for v in res.values()), {"checks": {k: bool(v) for k, v in res.items()}, **det}


def oracle_support(seed: int):
    res = {}
    path = build_box(1, 3)
    m = make_ising(path, 0.5)
    # u in the band where the middle spin depends on the ends
    W = UpdateSequence.from_events([(0.5, 1, 0.5)], 3, horizon=1.0)
    res["path3"] = support_exact(m, W).sites.tolist() == [0, 2]
    empty = UpdateSequence.from_events([], 3, horizon=1.0)
    res["empty_all"] = support_exact(m, empty).sites.tolist() == [0, 1, 2]
    m0 = make_ising(path, 0.0)
    cover = UpdateSequence.from_events([(0.1, 0, 0.2), (0.2, 1, 0.7), (0.3, 2, 0.4)], 3, horizon=1.0)
    res["beta0_cover"] = len(support_exact(m0, cover).sites) == 0
    tor = build_torus(2, 6)
    b = BarrierSystem(make_ising(tor, 0.0), 1)
    Wf = sample_updates(tor, 0.0, seed)
    res["s0_everything"] = len(support_superset(b, Wf).sites) == 36
    Wl = sample_updates(tor, 12.0, seed)
    res["beta0_superset_empty"] = len(support_superset(b, Wl).sites) == 0
    cyc = build_torus(1, 20)
    p = SparseParams(max_size=3, max_diam=3, min_sep=4)
    res["sparse_empty"] = check_sparse(cyc, [], p).sparse
    v = check_sparse(cyc, [0, 3], p)
    res["sparse_merge"] = len(v.components) == 1 and v.sizes == [2]
    v = check_sparse(cyc, [0, 1, 2, 3], p)
    res["sparse_size_violation"] = (not v.sparse) and "size" in (v.violation or "")
    return all(bool(v) for v in res.values()), {k: bool(v) for k, v in res.items()}


def oracle_analytics(seed: int):
    res = {}
    det = {}
    one = make_ising(from_edges(1, []), 0.0)
    G = build_generator(one)
    res["one_site_Q"] = np.allclose(G.Q.toarray(), [[-0.5, 0.5], [0.5, -0.5]], atol=0)
    res["gap_one"] = _close(spectral_gap(G), 1.0, 1e-10)
    for t in (0.0, 0.3, 2.0):
        res[f"heat_{t}"] = _close(heat_kernel(G, G.point_mass(1), t)[1], 0.5 * (1 + math.exp(-t)), 1e-12)
    tv, l2, linf = distances([1.0, 0.0], [0.5, 0.5])
    res["distances_point"] = (tv, l2, linf) == (0.5, 1.0, 1.0)
    res["distances_zero"] = distances([0.5, 0.5], [0.5, 0.5]) == (0.0, 0.0, 0.0)
    two = log_sobolev_estimate(G)
    det["two_point_alpha"] = two.alpha
    res["two_point_half_gap"] = _close(two.alpha, 0.5, 1e-6) and _close(two_point_log_sobolev(0.5, 0.5), 0.5, 1e-12)
    res["M4"] = _close(product_tv_asymptotic(4.0), 0.682689, 1e-6)
    res["M0"] = product_tv_asymptotic(0.0) == 0.0
    for c in (-1.0, 0.0, 1.0):
        res[f"erf_{c}"] = _close(product_tv_asymptotic(math.exp(-2 * c)), math.erf(math.exp(-c) / math.sqrt(8)), 1e-14)
    hv = hypercube_tv_exact(10000, 0.25 * 10000 * math.log(10000))
    det["hypercube_c0"] = hv
    res["hypercube_c0"] = _close(hv, math.erf(1 / math.sqrt(8)), 0.02)
    res["hypercube_t0"] = _close(hypercube_tv_exact(12, 0.0), 1 - 2.0 ** -12, 1e-15)
    res["predict_e2"] = _close(product_cutoff_predict(1.0, 0.5, 0.5, math.e ** 2)[0], 1.0, 1e-15)
    res["predict_refresh"] = _close(product_cutoff_predict(1.0, 0.5, 0.5, 1e6)[0], math.log(1e6) / 2, 1e-12)
    loc = product_cutoff_predict(1.0, 0.5, 0.5, 256)[0]
    tv_loc = iid_two_state_tv(256, 0.5 * (1 + math.exp(-loc)))
    det["refresh_tv_at_prediction"] = tv_loc
    res["predict_vs_exact"] = 0.05 < tv_loc < 0.95
    n = 1e4
    res["plus_equal"] = _close(plus_cutoff_predict(2, n, [1.0, 1.0]), math.log(n), 1e-12)
    res["plus_unequal"] = _close(plus_cutoff_predict(2, n, [0.5, 2.0]), 2 * math.log(n), 1e-12)
    res["plus_d1"] = _close(plus_cutoff_predict(1, n, [0.7]), math.log(n) / 1.4, 1e-12)
    for eps in (0.05, 0.25, 0.4):
        br = tmix_bracket(one, eps)
        res[f"tmix_{eps}"] = br.lower - 1e-8 <= math.log(1 / (2 * eps)) <= br.upper + 1e-8
    bp = block_profile(BlockSpec(1, 3, 0), 0.0, [0.0, 0.5, 1.0, 2.0])
    k = len(bp.inner_block)
    expect = (1 + np.exp(-2 * bp.grid)) ** k - 1
    res["block_refresh"] = _close(bp.lam, 1.0, 1e-10) and np.allclose(bp.m_t, expect, atol=1e-10)
    tor = make_ising(build_torus(2, 2), 0.0)
    res["torus2_gap"] = _close(spectral_gap(build_generator(tor)), 1.0, 1e-10)
    m22 = make_ising(build_torus(2, 2), 0.2)
    ex = tmix_bracket(m22, 0.25)
    grid = np.linspace(0.0, 6.0, 31)
    emp = tmix_bracket(m22, 0.25, "empirical", grid=grid, replicas=400, seed=seed)
    det["bracket_exact"] = [ex.lower, ex.upper]
    det["bracket_empirical"] = [emp.lower, emp.upper]
    res["bracket_contains_exact"] = emp.lower <= ex.lower and ex.upper <= emp.upper
    return all(bool(v) for v in res.values()), {"checks": {k: bool(v) for k, v in res.items()}, **det}


CHECKS: dict[str, tuple[str, Callable]] = {
    "graph_structure": ("invariants", check_graph_structure),
    "conditionals_match_enumeration": ("invariants", check_conditionals_match_enumeration),
    "clamps_as_fields": ("invariants", check_clamps_as_fields),
    "marginal_correctness": ("invariants", check_marginal_correctness),
    "sequence_determinism": ("invariants", check_sequence_determinism),
    "monotone_sandwich": ("invariants", check_monotone_sandwich),
    "bounding_soundness": ("invariants", check_bounding_soundness),
    "generator_stationarity": ("invariants", check_generator_stationarity),
    "support_containment": ("invariants", check_support_containment),
    "projection_inequality": ("invariants", check_projection_inequality),
    "barrier_equals_evolve": ("invariants", check_barrier_equals_evolve),
    "superset_frames": ("invariants", check_superset_frames),
    "distance_curves": ("invariants", check_distance_curves),
    "spectral_order": ("invariants", check_spectral_order),
    "product_bound": ("invariants", check_product_bound),
    "normal_erf_identity": ("invariants", check_normal_erf_identity),
    "graph_examples": ("oracles", oracle_graph),
    "model_examples": ("oracles", oracle_model),
    "dynamics_examples": ("oracles", oracle_dynamics),
    "support_examples": ("oracles", oracle_support),
    "analytics_examples": ("oracles", oracle_analytics),
}


def _run_one(job: tuple) -> dict:
    name, seed, mutate = job
    suite, fn = CHECKS[name]
    try:
        if mutate:
            with perturbed_conditionals(mutate):
                ok, detail = fn(seed)
        else:
            ok, detail = fn(seed)
        err = None
    except Exception as exc:  # a crashing check is a failing check
        ok, detail, err = False, {}, f"{type(exc).__name__}: {exc}"
    out = {"name": name, "suite": suite, "passed": bool(ok), "detail": detail}
    if err:
        out["error"] = err
    return out


def run_suite(suite: str = "all", seed: int = VERIFY_SEED, workers: int = 1,
              mutate: float | None = None) -> dict:
    """Run a suite and return its report.

    ``mutate`` perturbs every reference conditional by that mass (negative
    control: the marginal-correctness check must then fail).
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    names = [n for n, (s, _) in CHECKS.items() if suite == "all" or s == suite]
    jobs = [(n, int(seed), mutate) for n in names]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    failed = [r["name"] for r in results if not r["passed"]]
    return {
        "suite": suite, "seed": int(seed), "version": __version__, "mutate": mutate,
        "checks": results, "n_passed": len(results) - len(failed), "n_failed": len(failed),
        "failed": failed, "ok": not failed,
    }
