import math

import numpy as np
import pytest

from glaubercut.graph import (
    BlockSpec,
    GraphError,
    ball,
    build_block,
    build_box,
    build_torus,
    build_variant,
    components,
    default_metric,
    diameter,
    distance,
    from_edges,
    from_text,
    inner_window,
    to_text,
)


def test_path_box():
    g = build_box(1, 3)
    assert g.n_sites == 3 and g.delta == 2 and g.boundary == ()


def test_plus_collar_2x2():
    g = build_box(2, 2, 1)
    assert g.n == 12
    for v in range(4):
        nb = g.neighbors(v)
        assert len(nb) == 4
        assert sum(int(w) < 4 for w in nb) == 2
        assert all(g.clamps[int(w)] == 1 for w in nb if w >= 4)


def test_free_box_degrees():
    g = build_box(2, 4)
    deg = [g.degree(v) for v in range(16)]
    assert max(deg) == 4 and min(deg) == 2 and deg.count(2) == 4


def test_mixed_faces():
    g = build_box(2, 3, [1, None, -1, "free"])
    vals = sorted(g.clamps.values())
    assert vals.count(1) == 3 and vals.count(-1) == 3


@pytest.mark.parametrize("d,n,size", [(1, 4, 4), (2, 3, 9), (2, 64, 4096)])
def test_torus_regular(d, n, size):
    g = build_torus(d, n)
    assert g.n_sites == size
    assert all(g.degree(v) == 2 * d for v in range(0, size, max(1, size // 50)))


def test_side_two_torus_is_simple():
    g = build_torus(2, 2)
    assert g.n_sites == 4 and all(g.degree(v) == 2 for v in range(4))


def test_rectangular_torus():
    g = build_torus(2, (3, 5))
    assert g.n_sites == 15 and all(g.degree(v) == 4 for v in range(15))
    assert g.periods == (3, 5)
    with pytest.raises(GraphError):
        build_torus(2, (3, 4, 5))


def test_torus_rejects_side_one():
    with pytest.raises(GraphError):
        build_torus(2, 1)


def test_block_windows():
    assert list(inner_window(6, True)) == [1, 2, 3, 4]
    assert list(inner_window(6, False)) == [1, 2, 3, 4, 5]
    g = build_block(BlockSpec(2, 6, 2))
    coords = {tuple(int(c) for c in g.coords[v]) for v in g.inner_block}
    assert coords == {(i, j) for i in range(4) for j in range(4)}
    assert all(v == 1 for v in g.clamps.values())


def test_block_mixed_axes():
    g = build_block(BlockSpec(2, 6, 1))
    assert g.periods == (None, 6)
    assert len(g.clamps) == 12


def test_block_rejects_bad_j():
    with pytest.raises(GraphError):
        BlockSpec(1, 6, 2)


def test_variants():
    lad = build_variant("ladder", n=5)
    assert lad.n_sites == 10 and all(lad.degree(v) == 3 for v in range(10))
    tri = build_variant("triangular", n1=8, n2=8)
    assert all(tri.degree(v) == 6 for v in range(64))
    lr = build_variant("long_range", d=1, n=10, l=2)
    assert all(lr.degree(v) == 4 for v in range(10))
    hexa = build_variant("hexagonal", n1=4, n2=6)
    assert all(hexa.degree(v) == 3 for v in range(24))
    prod = build_variant("product_with", d=1, n=4, h=[(0, 1)], h_n=2)
    assert prod.n_sites == 8 and all(prod.degree(v) == 3 for v in range(8))
    with pytest.raises(GraphError):
        build_variant("mobius", n=4)


def test_balls():
    g = build_torus(2, 10)
    assert ball(g, 3, 0).tolist() == [3]
    assert len(ball(g, 0, 1, "graph")) == 5
    assert len(ball(g, 0, 1, "linf")) == 9
    assert len(ball(g, 0, 2, "graph")) == 13
    assert default_metric(g) in ("graph", "l_infinity")


def test_distance_and_diameter():
    p = build_box(1, 3)
    assert distance(p, 0, 2) == 2
    assert diameter(p, [1]) == 0
    assert diameter(p, [0, 1, 2]) == 2
    two = from_edges(2, [])
    assert distance(two, 0, 1) == math.inf


def test_components_on_cycle():
    comps = components(build_torus(1, 10), [0, 1, 5], 1)
    assert sorted(sorted(c) for c in comps) == [[0, 1], [5]]


def test_text_round_trip():
    for g in (build_box(2, 3, [1, None, -1, None]), build_torus(2, 4), build_block(BlockSpec(2, 6, 1))):
        h = from_text(to_text(g))
        assert np.array_equal(h.indices, g.indices) and h.clamps == g.clamps
        assert to_text(h) == to_text(g)


def test_from_edges_validation():
    with pytest.raises(GraphError):
        from_edges(2, [(0, 0)])
    with pytest.raises(GraphError):
        from_edges(2, [(0, 5)])
