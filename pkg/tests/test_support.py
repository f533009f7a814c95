import math

import numpy as np
import pytest

from glaubercut.dynamics import UpdateSequence, evolve, sample_updates
from glaubercut.graph import build_box, build_torus
from glaubercut.model import make_hardcore, make_ising, make_potts
from glaubercut.support import (
    AGE_LEVELS,
    SUPPORT_LEVEL,
    UNDETERMINED_LEVEL,
    BarrierSystem,
    SparseParams,
    all_balls,
    barrier_evolve,
    check_sparse,
    compute_r,
    compute_rho,
    frame_image,
    projection_inequality,
    suggest_s,
    support_exact,
    support_superset,
    write_frames,
    write_pgm,
)


def test_compute_r_example():
    assert compute_r(2, 1.0, math.e) == 20


def test_rho_diamond():
    assert compute_rho(build_torus(2, 10), 2, "graph") == 13
    assert compute_rho(build_torus(2, 10), 1, "linf") == 9


def test_all_balls_contains_centre():
    ptr, sites = all_balls(build_torus(2, 6), 2)
    for v in range(36):
        assert v in sites[ptr[v]:ptr[v + 1]]


def test_suggest_s_positive():
    assert suggest_s(4, 0.5, 13) > 0
    with pytest.raises(ValueError):
        suggest_s(4, 0.0, 13)


def test_sparse_params_from_inputs():
    p = SparseParams.from_inputs(2, 1.0, math.e, rho=3)
    assert p.max_size == pytest.approx(27.0) and p.max_diam == pytest.approx(0.5)
    assert p.min_sep == pytest.approx(50.0) and p.inputs["r"] == 20


def test_barrier_with_covering_balls_is_plain_map():
    m = make_ising(build_torus(2, 4), 0.3)
    b = BarrierSystem(m, 10)
    for seed in range(5):
        W = sample_updates(m.graph, 3.0, seed)
        s0 = np.arange(16) % 2
        assert np.array_equal(barrier_evolve(b, s0, W), evolve(m, s0, W))


def test_barrier_empty_sequence_identity():
    m = make_ising(build_torus(2, 4), 0.3)
    s0 = np.arange(16) % 2
    assert np.array_equal(barrier_evolve(BarrierSystem(m, 1), s0, UpdateSequence.from_events([], 16, horizon=1.0)), s0)


@pytest.mark.slow
def test_barrier_coupling_on_16x16():
    m = make_ising(build_torus(2, 16), 0.1)
    b = BarrierSystem(m, 8, "graph")
    agree = 0
    for seed in range(50):
        W = sample_updates(m.graph, 2.0, seed)
        s0 = np.zeros(256, dtype=np.int64)
        agree += np.array_equal(barrier_evolve(b, s0, W), evolve(m, s0, W))
    assert agree == 50


def test_superset_at_zero_is_everything():
    m = make_ising(build_torus(2, 6), 0.3)
    rep = support_superset(BarrierSystem(m, 1), sample_updates(m.graph, 0.0, 1))
    assert len(rep.sites) == 36 and rep.fraction == 1.0


def test_superset_empty_for_independent_spins():
    m = make_ising(build_torus(2, 6), 0.0)
    rep = support_superset(BarrierSystem(m, 1), sample_updates(m.graph, 15.0, 2))
    assert len(rep.sites) == 0


def test_superset_frames_nested():
    m = make_ising(build_torus(2, 8), 0.25)
    W = sample_updates(m.graph, 8.0, 5)
    rep = support_superset(BarrierSystem(m, 1), W, frames=[0, 2, 4, 8], keep_masks=True)
    assert rep.fractions[0] == 1.0
    assert all(b <= a for a, b in zip(rep.fractions, rep.fractions[1:]))
    for a, b in zip(rep.frame_masks, rep.frame_masks[1:]):
        assert np.all(b <= a)
    final = support_superset(BarrierSystem(m, 1), W)
    assert np.array_equal(np.sort(final.sites), np.sort(rep.sites))


def test_exact_support_three_path():
    m = make_ising(build_box(1, 3), 0.5)
    W = UpdateSequence.from_events([(0.5, 1, 0.5)], 3, horizon=1.0)
    assert support_exact(m, W).sites.tolist() == [0, 2]


def test_exact_support_limits():
    m = make_ising(build_box(1, 3), 0.5)
    assert support_exact(m, UpdateSequence.from_events([], 3, horizon=1.0)).sites.tolist() == [0, 1, 2]
    m0 = make_ising(build_box(1, 3), 0.0)
    W = UpdateSequence.from_events([(0.1, 0, 0.2), (0.2, 1, 0.7), (0.3, 2, 0.4)], 3, horizon=1.0)
    assert len(support_exact(m0, W).sites) == 0


def test_exact_within_superset_small():
    rng = np.random.default_rng(3)
    for k in range(20):
        m = make_potts(build_torus(1, 5), 3, float(rng.uniform(0, 1)))
        b = BarrierSystem(m, int(rng.integers(0, 3)))
        W = sample_updates(m.graph, float(rng.uniform(0.3, 3)), k, "hb", "thresh")
        assert set(support_exact(b, W).sites) <= set(support_superset(b, W, "thresh").sites)


def test_check_sparse_examples():
    cyc = build_torus(1, 20)
    p = SparseParams(max_size=3, max_diam=3, min_sep=4)
    assert check_sparse(cyc, [], p).sparse
    v = check_sparse(cyc, [0, 3], p)
    assert len(v.components) == 1 and v.sparse
    v = check_sparse(cyc, [0, 1, 2, 3], p)
    assert not v.sparse and v.violation.startswith("size")
    v = check_sparse(cyc, [0, 10], p)
    assert v.sparse and len(v.components) == 2 and v.min_separation >= 4


def test_check_sparse_five_r_rule():
    cyc = build_torus(1, 40)
    p = SparseParams(max_size=10, max_diam=10, min_sep=2)
    v = check_sparse(cyc, [0, 1, 2, 20, 21, 22], p, merge="5r", r=1, centres=[1, 21])
    assert sorted(v.sizes) == [3, 3] and v.sparse
    with pytest.raises(ValueError):
        check_sparse(cyc, [0], p, merge="5r")


def test_projection_inequality_small():
    rng = np.random.default_rng(8)
    m = make_hardcore(build_box(1, 3), 1.3)
    for _ in range(5):
        phi, psi = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        lhs, rhs = projection_inequality(m, phi, psi)
        assert lhs <= rhs + 1e-12


def test_pgm_and_frames(tmp_path):
    img = np.array([[0, 128], [255, 72]], dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img, binary=True)
    data = (tmp_path / "a.pgm").read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n") and data.endswith(bytes([0, 128, 255, 72]))
    write_pgm(tmp_path / "b.pgm", img, binary=False)
    assert (tmp_path / "b.pgm").read_text().startswith("P2")
    m = make_ising(build_torus(2, 8), 0.25)
    W = sample_updates(m.graph, 6.0, 1)
    rep = support_superset(BarrierSystem(m, 1), W, frames=[0, 3, 6], keep_masks=True)
    names = write_frames(m.graph, rep, tmp_path / "frames")
    assert names == ["0000.pgm", "0001.pgm", "0002.pgm"]
    assert (tmp_path / "frames" / "index.txt").read_text().count("\n") == 3
    first = frame_image(m.graph, rep, 0)
    assert first.shape == (8, 8) and set(np.unique(first)) <= {UNDETERMINED_LEVEL, SUPPORT_LEVEL}
    last = frame_image(m.graph, rep, 2)
    assert set(np.unique(last)) <= {UNDETERMINED_LEVEL, SUPPORT_LEVEL, *AGE_LEVELS}
