"""Acceptance gate: eight end-to-end criteria with their stated tolerances.

Each test records its outcome in ``conftest.ACCEPTANCE`` and prints one
PASS/FAIL line; the terminal summary repeats all of them.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from glaubercut.analytics import (
    build_generator,
    check_ls_bound,
    distances,
    hypercube_profile,
    log_sobolev_estimate,
    product_M,
    product_tv_asymptotic,
    product_tv_exact,
    spectral_gap,
)
from glaubercut.dynamics import (
    contact_bound,
    disagreement_curve,
    evolve,
    grand_evolve,
    sample_updates,
    simulate_contact,
)
from glaubercut.graph import build_box, build_torus, from_edges
from glaubercut.model import gibbs_enumerate, make_coloring, make_ising, make_potts, zeta
from glaubercut.support import (
    BarrierSystem,
    SparseParams,
    check_sparse,
    compute_rho,
    projection_inequality,
    support_exact,
    support_superset,
)
from glaubercut.verify import random_instance


def record(key, title, ok, note=""):
    ACCEPTANCE[key] = (title, bool(ok), note)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}  [{note}]")


def test_criterion_1_hypercube_profile():
    t0 = time.perf_counter()
    rows = hypercube_profile(10_000, [-2, -1, 0, 1, 2])
    elapsed = time.perf_counter() - t0
    worst = max(abs(r["tv"] - r["erf"]) for r in rows)
    ok = worst < 0.02 and elapsed < 5.0
    record(1, "hypercube profile matches erf", ok, f"max |TV-erf|={worst:.4f}, {elapsed:.2f}s")
    assert ok


def _random_pair(rng, k, near):
    pi = rng.dirichlet(np.ones(k))
    if near:
        # small multiplicative perturbation keeps the L-infinity distance below 0.05
        z = rng.uniform(-1, 1, size=k)
        z -= (z * pi).sum()
        z *= 0.049 / max(np.abs(z).max(), 1e-12)
        return pi * (1 + z), pi
    return rng.dirichlet(np.ones(k)), pi


def test_criterion_2_product_bound():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    bound_viol = 0
    near_count = 0
    worst_gap = 0.0
    for i in range(1000):
        near = i % 2 == 1
        comps = [_random_pair(rng, int(rng.integers(2, 5)), near) for _ in range(int(rng.integers(1, 7)))]
        d = [distances(a, b) for a, b in comps]
        M = product_M([x[1] for x in d])
        tv = product_tv_exact(comps)
        bound_viol += tv > math.sqrt(M) + 1e-12
        if all(x[2] < 0.05 for x in d):
            near_count += 1
            worst_gap = max(worst_gap, abs(tv - product_tv_asymptotic(M)))
    elapsed = time.perf_counter() - t0
    ok = bound_viol == 0 and near_count > 0 and worst_gap < 0.08 and elapsed < 60
    record(2, "product TV <= sqrt(M); normal approximation near stationarity", ok,
           f"violations={bound_viol}, near instances={near_count}, max gap={worst_gap:.4f}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_support_oracle():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    viol = 0
    for _ in range(500):
        m = random_instance(rng, 8, max_states=3 ** 8)
        b = BarrierSystem(m, int(rng.integers(0, 3)))
        pol = "mono" if m.is_monotone else "thresh"
        W = sample_updates(m.graph, float(rng.uniform(0.2, 3.0)), int(rng.integers(0, 2 ** 63)), "hb", pol)
        ex = set(support_exact(b, W).sites.tolist())
        viol += len(ex - set(support_superset(b, W, pol).sites.tolist()))
    worst = -math.inf
    for _ in range(200):
        m = random_instance(rng, 4, max_states=81)
        N = m.q ** m.n_sites
        lhs, rhs = projection_inequality(m, rng.dirichlet(np.ones(N)), rng.dirichlet(np.ones(N)))
        worst = max(worst, lhs - rhs)
    elapsed = time.perf_counter() - t0
    ok = viol == 0 and worst <= 1e-12 and elapsed < 600
    record(3, "exact support within superset; projection inequality", ok,
           f"containment violations={viol}, max lhs-rhs={worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_coupling_soundness():
    rng = np.random.default_rng(4)
    m = make_ising(build_torus(2, 4), 0.4)
    lo0, hi0 = np.zeros(16, np.int64), np.ones(16, np.int64)
    sandwich_viol = 0
    for seed in range(100):
        W = sample_updates(m.graph, 4.0, seed)
        x0 = rng.integers(0, 2, size=16)
        sandwich_viol += grand_evolve(m, W, "mono", configs=[x0]).violations
        # independent replay at every event time
        for t in W.times:
            part = W.truncate(float(t))
            lo, hi, x = evolve(m, lo0, part), evolve(m, hi0, part), evolve(m, x0, part)
            sandwich_viol += int(np.any(lo > x) or np.any(x > hi))
    false_det = 0
    systems = [
        (make_ising(build_torus(2, 3), 0.3, 0.1), "thresh", 2),
        (make_ising(build_box(2, 3), -0.4), "thresh", 2),
        (make_potts(build_torus(1, 7), 3, 0.5), "thresh", 3),
        (make_coloring(build_box(1, 5), 5), "perm", 5),
        (make_coloring(build_torus(1, 5), 4), "perm", 4),
    ]
    for k, (sm, pol, q) in enumerate(systems):
        states, p = gibbs_enumerate(sm)
        starts = states[p > 0]
        for seed in range(10):
            W = sample_updates(sm.graph, 3.0, 1000 * k + seed, "hb", pol, q)
            res = grand_evolve(sm, W, pol, configs=starts)
            outs = np.array([evolve(sm, s, W) for s in starts])
            det = res.envelope.value >= 0
            false_det += res.violations + int(np.sum(outs[:, det] != res.envelope.value[det]))
    ok = sandwich_viol == 0 and false_det == 0
    record(4, "monotone sandwich and bounding determinedness", ok,
           f"sandwich violations={sandwich_viol}, false-determined={false_det}")
    assert ok


def test_criterion_5_contact_domination():
    g = build_torus(2, 32)
    n = g.n_sites
    grid = np.linspace(0.0, 10.0, 21)
    seeds = range(500)
    counts = np.array([simulate_contact(g, 0.9, 10.0, s, grid)[1] for s in seeds], dtype=float)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    bound = contact_bound(n, 2, 0.9, grid)
    assert np.allclose(bound, n * np.exp(-0.5 * grid))
    bound_ok = bool(np.all(mean <= bound + 3 * se))

    # Ising coupling floor matched to the contact heal rate
    beta = math.log(2 / 0.9 - 1) / 8
    m = make_ising(g, beta)
    assert abs(zeta(m) - 0.9) < 1e-12
    unk = np.array([disagreement_curve(m, sample_updates(g, 10.0, s, "hb", "thresh"), "thresh", grid)[0]
                    for s in seeds])
    u_mean = unk.mean(axis=0)
    u_se = unk.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    c_frac, c_se = mean / n, se / n
    dom_ok = bool(np.all(u_mean <= c_frac + 3 * np.sqrt(u_se ** 2 + c_se ** 2)))
    ok = bound_ok and dom_ok
    record(5, "contact bound and disagreement domination", ok,
           f"bound={'ok' if bound_ok else 'broken'}, domination={'ok' if dom_ok else 'broken'}, "
           f"unknown at t=2: {u_mean[4]:.3f} vs contact {c_frac[4]:.3f}")
    assert ok


def test_criterion_6_spectral():
    notes = []
    ok = True
    for n_sites, h in ((1, 0.0), (3, 0.4), (6, -0.8)):
        G = build_generator(make_ising(from_edges(n_sites, []), 0.0, h))
        ok &= abs(spectral_gap(G) - 1.0) <= 1e-10
    est = log_sobolev_estimate(build_generator(make_ising(from_edges(1, []), 0.0)))
    two_point_err = abs(est.alpha - est.gap / 2)
    ok &= two_point_err <= 1e-6
    rng = np.random.default_rng(6)
    worst = math.inf
    checked = 0
    while checked < 50:
        m = random_instance(rng, 10, max_states=1024)
        G = build_generator(m)
        if G.N < 2:
            continue
        checked += 1
        e = log_sobolev_estimate(G)
        ok &= 0 < 2 * e.alpha <= e.gap * (1 + 1e-9) and e.gap <= 1 + 1e-10
        start = int(np.argmin(G.pi))
        for s in (1, 2, 4):
            r = check_ls_bound(G, start, s, e.alpha, e.gap)
            ok &= bool(r["holds"]) and r["margin"] > 0
            worst = min(worst, r["margin"])
    notes.append(f"two-point error={two_point_err:.1e}, min LS margin={worst:.3e}")
    record(6, "gap, log-Sobolev ordering and L2 decay bound", ok, "; ".join(notes))
    assert ok


@pytest.mark.slow
def test_criterion_7_large_support():
    t0 = time.perf_counter()
    g = build_torus(2, (128, 256))
    m = make_ising(g, 0.32)
    r = 3
    b = BarrierSystem(m, r, "linf")
    frames = [0, 5, 10, 15, 20, 25, 30, 40, 50, 60]
    W = sample_updates(g, float(frames[-1]), 1)
    rep = support_superset(b, W, "mono", frames=frames)
    fr = np.asarray(rep.fractions)
    nonincreasing = bool(np.all(np.diff(fr) <= 0))
    rho = compute_rho(g, r, "linf")
    logn = math.log(g.n_sites)
    params = SparseParams(max_size=rho ** 3 * logn, max_diam=0.5 * logn ** 2, min_sep=r)
    verdict = check_sparse(g, rep.sites, params)
    elapsed = time.perf_counter() - t0
    ok = nonincreasing and verdict.sparse and elapsed < 1200
    record(7, "128x256 support shrinks and is sparse", ok,
           f"fractions={np.round(fr, 4).tolist()}, components={len(verdict.components)}, "
           f"max size={max(verdict.sizes, default=0)}, {elapsed:.0f}s")
    assert ok


def _verify_bytes(tmp_path, name, workers):
    out = tmp_path / name
    proc = subprocess.run([sys.executable, "-m", "glaubercut.cli", "verify", "all", "--workers", str(workers),
                           "--out", str(out)], capture_output=True, text=True, timeout=900)
    return proc.returncode, (out / "report.json").read_bytes()


def test_criterion_8_determinism(tmp_path):
    runs = [_verify_bytes(tmp_path, "a", 1), _verify_bytes(tmp_path, "b", 1), _verify_bytes(tmp_path, "c", 8)]
    passed = all(code == 0 for code, _ in runs) and json.loads(runs[0][1])["ok"]
    identical = runs[0][1] == runs[1][1] == runs[2][1]
    ok = passed and identical
    record(8, "verify all passes bit-identically", ok,
           f"passed={passed}, identical across runs and workers 1/8={identical}")
    assert ok
