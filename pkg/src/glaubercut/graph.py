"""Finite graphs for spin systems: boxes, tori, mixed-boundary blocks and
lattice variants, plus the metric queries the support machinery needs.

Vertex numbering convention: the non-boundary vertices ("sites") always come
first, ``0 .. n_sites - 1``, numbered row-major over lattice coordinates (axis
0 slowest).  Clamped boundary vertices follow.  A boundary vertex carries a
fixed spin value and is never updated; it acts on its unique site neighbour
exactly like an external field.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

__all__ = [
    "Graph",
    "BlockSpec",
    "GraphError",
    "INF",
    "build_box",
    "build_torus",
    "build_block",
    "build_variant",
    "from_edges",
    "ball",
    "distance",
    "diameter",
    "components",
    "default_metric",
    "to_text",
    "from_text",
]

INF = math.inf

# all-pairs tables are only materialised below this many sites; larger graphs
# use per-source BFS rows cached on demand
APSP_VERTEX_BUDGET = 2048


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable finite graph with optional lattice embedding.

    Attributes
    ----------
    n_sites : int
        Number of non-boundary vertices; these are vertices ``0..n_sites-1``.
    indptr, indices : ndarray
        CSR adjacency over *all* vertices (sites and boundary vertices).
    clamps : dict
        Boundary vertex -> spin value.  Keys are exactly ``n_sites..n-1``.
    coords : ndarray or None
        Integer coordinates, shape ``(n, dim)``.
    periods : tuple or None
        Per-axis period for wrapped axes, ``None`` for open axes.
    inner_block : tuple of int or None
        Site subset designated as the inner block (mixed-boundary blocks only).
    """

    n_sites: int
    indptr: np.ndarray
    indices: np.ndarray
    clamps: Mapping[int, object] = field(default_factory=dict)
    coords: np.ndarray | None = None
    periods: tuple | None = None
    name: str = "graph"
    inner_block: tuple | None = None

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.coords):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    @property
    def delta(self) -> int:
        """Maximum degree over sites (boundary neighbours count)."""
        if self.n_sites == 0:
            return 0
        return int(np.diff(self.indptr)[: self.n_sites].max())

    @property
    def boundary(self) -> tuple:
        return tuple(range(self.n_sites, self.n))

    def is_site(self, v: int) -> bool:
        return 0 <= v < self.n_sites

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(u, v)`` with ``u < v``."""
        out = []
        for u in range(self.n):
            for v in self.neighbors(u):
                if u < v:
                    out.append((u, int(v)))
        return out

    def site_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency restricted to site-site edges."""
        return _site_csr(self)

    def distances_from(self, v: int) -> np.ndarray:
        """Hop distances from site ``v`` to every site (``inf`` if unreachable).

        Paths run through sites only; boundary vertices are not part of the
        metric.
        """
        if not self.is_site(v):
            raise GraphError(f"vertex {v} is not a site")
        if self.n_sites <= APSP_VERTEX_BUDGET:
            return _apsp(self)[v]
        return _bfs_row(self, v)


@lru_cache(maxsize=64)
def _site_csr(g: Graph):
    ns = g.n_sites
    ptr = [0]
    idx: list[int] = []
    for u in range(ns):
        nb = g.neighbors(u)
        nb = nb[nb < ns]
        idx.extend(int(x) for x in nb)
        ptr.append(len(idx))
    return np.asarray(ptr, dtype=np.int64), np.asarray(idx, dtype=np.int64)


def _site_matrix(g: Graph) -> csr_matrix:
    ptr, idx = g.site_csr()
    data = np.ones(len(idx), dtype=np.int8)
    return csr_matrix((data, idx, ptr), shape=(g.n_sites, g.n_sites))


@lru_cache(maxsize=8)
def _apsp(g: Graph) -> np.ndarray:
    d = shortest_path(_site_matrix(g), method="D", unweighted=True)
    d.setflags(write=False)
    return d


@lru_cache(maxsize=4096)
def _bfs_row(g: Graph, v: int) -> np.ndarray:
    d = shortest_path(_site_matrix(g), method="D", unweighted=True, indices=[v])[0]
    d.setflags(write=False)
    return d


def from_edges(
    n_sites: int,
    edges: Iterable[tuple[int, int]],
    clamps: Mapping[int, object] | None = None,
    coords=None,
    periods=None,
    name: str = "graph",
    inner_block=None,
) -> Graph:
    """Build a :class:`Graph` from an undirected edge list.

    Boundary vertices (keys of ``clamps``) must be numbered after the sites.
    Self-loops are rejected; duplicate edges are merged.
    """
    clamps = dict(clamps or {})
    n = n_sites + len(clamps)
    if sorted(clamps) != list(range(n_sites, n)):
        raise GraphError("clamped vertices must be numbered n_sites..n-1")
    nbrs: list[set] = [set() for _ in range(n)]
    for u, v in edges:
        u, v = int(u), int(v)
        if u == v:
            raise GraphError(f"self-loop at {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge ({u},{v}) out of range")
        if u >= n_sites and v >= n_sites:
            raise GraphError("edge between two boundary vertices")
        nbrs[u].add(v)
        nbrs[v].add(u)
    indptr = np.zeros(n + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(s) for s in nbrs])
    indices = np.fromiter((w for s in nbrs for w in sorted(s)), dtype=np.int64, count=int(indptr[-1]))
    if coords is not None:
        coords = np.asarray(coords, dtype=np.int64)
    return Graph(
        n_sites=n_sites,
        indptr=indptr,
        indices=indices,
        clamps=clamps,
        coords=coords,
        periods=None if periods is None else tuple(periods),
        name=name,
        inner_block=None if inner_block is None else tuple(int(x) for x in inner_block),
    )


# ---------------------------------------------------------------------------
# Lattices
# ---------------------------------------------------------------------------

def _grid(shape, periodic, faces, name, offsets=None, inner_block=None) -> Graph:
    """Hypercubic grid with per-axis wrap and per-face clamp layers.

    ``faces`` maps ``(axis, side)`` with side 0 (low) / 1 (high) to a clamp
    value; a missing face is free.  ``offsets`` adds extra neighbour vectors
    (used by the triangular and long-range variants).
    """
    shape = tuple(int(s) for s in shape)
    d = len(shape)
    n_sites = int(np.prod(shape))
    coords = np.array(list(product(*[range(s) for s in shape])), dtype=np.int64).reshape(n_sites, d)
    steps = [tuple(int(a == k) for a in range(d)) for k in range(d)]
    if offsets is not None:
        steps = list(offsets)
    edges = set()
    for i, c in enumerate(coords):
        for st in steps:
            nc = c + np.asarray(st)
            ok = True
            for a in range(d):
                if periodic[a]:
                    nc[a] %= shape[a]
                elif not 0 <= nc[a] < shape[a]:
                    ok = False
                    break
            if ok:
                j = int(np.ravel_multi_index(tuple(nc), shape))
                if j != i:
                    edges.add((min(i, j), max(i, j)))
    clamps = {}
    ghost_coords = []
    nxt = n_sites
    for (axis, side), value in sorted(faces.items()):
        if periodic[axis]:
            raise GraphError(f"axis {axis} is periodic and cannot be clamped")
        edge_val = 0 if side == 0 else shape[axis] - 1
        outside = -1 if side == 0 else shape[axis]
        for i in np.flatnonzero(coords[:, axis] == edge_val):
            gc = coords[i].copy()
            gc[axis] = outside
            clamps[nxt] = value
            ghost_coords.append(gc)
            edges.add((int(i), nxt))
            nxt += 1
    all_coords = np.vstack([coords] + ([np.array(ghost_coords)] if ghost_coords else []))
    periods = tuple(shape[a] if periodic[a] else None for a in range(d))
    return from_edges(n_sites, sorted(edges), clamps, all_coords, periods, name, inner_block)


def _faces_from_boundary(d: int, boundary) -> dict:
    """Normalise a box boundary argument to ``{(axis, side): value}``.

    Accepts ``"free"``/``None``, a single clamp value for every face, or a
    sequence of ``2*d`` entries ordered (axis0 low, axis0 high, axis1 low, ...)
    where ``None``/``"free"`` leaves that face free.
    """
    if boundary is None or (isinstance(boundary, str) and boundary == "free"):
        return {}
    if isinstance(boundary, (list, tuple)):
        if len(boundary) != 2 * d:
            raise GraphError(f"need {2 * d} face entries, got {len(boundary)}")
        return {
            (k // 2, k % 2): v for k, v in enumerate(boundary) if v is not None and v != "free"
        }
    return {(a, s): boundary for a in range(d) for s in (0, 1)}


def build_box(d: int, n: int, boundary="free") -> Graph:
    """The ``n**d`` box; clamped faces get one layer of fixed-spin vertices."""
    if d < 1 or n < 1:
        raise GraphError("box needs d >= 1 and n >= 1")
    faces = _faces_from_boundary(d, boundary)
    return _grid((n,) * d, (False,) * d, faces, f"box(d={d},n={n})")


def build_torus(d: int, n) -> Graph:
    """Periodic ``n**d`` lattice, or a rectangular one when ``n`` lists the
    ``d`` side lengths.  With side 2 both wrap directions reach the same
    neighbour and the doubled bond is kept once, so the graph stays simple
    (the 2x2 torus is a 4-cycle)."""
    if d < 1:
        raise GraphError("torus needs d >= 1")
    sides = tuple(int(k) for k in n) if np.ndim(n) else (int(n),) * d
    if len(sides) != d:
        raise GraphError(f"torus needs {d} side lengths, got {len(sides)}")
    if min(sides) < 2:
        raise GraphError("torus side must be >= 2")
    label = sides[0] if len(set(sides)) == 1 else "x".join(map(str, sides))
    return _grid(sides, (True,) * d, {}, f"torus(d={d},n={label})")


@dataclass(frozen=True)
class BlockSpec:
    """Side-``m`` block in ``d`` dimensions, plus-clamped on the first ``j``
    axes (both faces) and periodic on the remaining ``d - j``."""

    d: int
    m: int
    j: int
    plus: object = 1

    def __post_init__(self):
        if self.d < 1 or not 0 <= self.j <= self.d:
            raise GraphError(f"invalid block spec d={self.d}, j={self.j}")

    @property
    def axis_kinds(self) -> tuple:
        return tuple("plus" if a < self.j else "periodic" for a in range(self.d))


def inner_window(m: int, clamped: bool) -> range:
    """1-based coordinate window of the inner block along one axis.

    Clamped axes use ``1 .. floor(2m/3)``; periodic axes use
    ``floor(m/6) .. floor(5m/6)``.  Windows are clipped into ``1..m`` so that
    small desk-scale blocks (``m < 6``) remain usable.
    """
    if clamped:
        lo, hi = 1, (2 * m) // 3
    else:
        lo, hi = m // 6, (5 * m) // 6
    lo = max(lo, 1)
    hi = min(max(hi, lo), m)
    return range(lo, hi + 1)


def build_block(spec: BlockSpec, allow_small: bool = False) -> Graph:
    """Mixed-boundary block with its inner block attached as ``inner_block``.

    ``m < 6`` is rejected unless ``allow_small`` is set, in which case the
    inner-block windows are clipped (see :func:`inner_window`).
    """
    d, m, j = spec.d, spec.m, spec.j
    if m < 6 and not allow_small:
        raise GraphError(f"block side m={m} too small for inner-block windows (need m >= 6)")
    if j < d and m < 3:
        raise GraphError("periodic axes need m >= 3")
    periodic = tuple(a >= j for a in range(d))
    faces = {(a, s): spec.plus for a in range(j) for s in (0, 1)}
    windows = [inner_window(m, a < j) for a in range(d)]
    inner = sorted(
        int(np.ravel_multi_index(tuple(c - 1 for c in pt), (m,) * d)) for pt in product(*windows)
    )
    return _grid((m,) * d, periodic, faces, f"block(d={d},m={m},j={j})", inner_block=inner)


def build_variant(kind: str, **params) -> Graph:
    """Lattice variants with finite periodicity.

    ``triangular(n1, n2)``, ``hexagonal(n1, n2)`` (brick-wall honeycomb, both
    sides even), ``ladder(n)`` (cycle times an edge), ``long_range(d, n, l)``
    (torus with edges between sites at lattice distance <= l) and
    ``product_with(h, d, n)`` (torus times a fixed graph ``h`` given as a
    :class:`Graph` or an edge list with ``h_n`` vertices).
    """
    if kind == "triangular":
        n1, n2 = int(params["n1"]), int(params.get("n2", params["n1"]))
        if min(n1, n2) < 3:
            raise GraphError("triangular torus needs sides >= 3")
        return _grid((n1, n2), (True, True), {}, f"triangular({n1}x{n2})",
                     offsets=[(1, 0), (0, 1), (1, -1)])
    if kind == "hexagonal":
        n1, n2 = int(params["n1"]), int(params.get("n2", params["n1"]))
        if n1 % 2 or n2 % 2 or min(n1, n2) < 4:
            raise GraphError("hexagonal torus needs even sides >= 4")
        coords = np.array(list(product(range(n1), range(n2))), dtype=np.int64)
        edges = set()
        for i, (a, b) in enumerate(coords):
            j = a * n2 + (b + 1) % n2
            edges.add((min(i, j), max(i, j)))
            if (a + b) % 2 == 0:
                j = ((a + 1) % n1) * n2 + b
                edges.add((min(i, j), max(i, j)))
        return from_edges(n1 * n2, sorted(edges), coords=coords, periods=(n1, n2),
                          name=f"hexagonal({n1}x{n2})")
    if kind == "ladder":
        n = int(params["n"])
        if n < 3:
            raise GraphError("ladder needs n >= 3")
        return _grid((n, 2), (True, False), {}, f"ladder({n})")
    if kind == "long_range":
        d, n, l = int(params["d"]), int(params["n"]), int(params["l"])
        if l < 1 or n <= 2 * l:
            raise GraphError("long_range needs 1 <= l and n > 2l")
        offsets = [
            off for off in product(range(-l, l + 1), repeat=d)
            if 0 < sum(abs(x) for x in off) <= l and off > (0,) * d
        ]
        return _grid((n,) * d, (True,) * d, {}, f"long_range(d={d},n={n},l={l})", offsets=offsets)
    if kind == "product_with":
        d, n = int(params["d"]), int(params["n"])
        h = params["h"]
        if isinstance(h, Graph):
            h_n, h_edges = h.n_sites, [(u, v) for u, v in h.edges() if v < h.n_sites]
        else:
            h_n, h_edges = int(params["h_n"]), list(h)
        base = build_torus(d, n)
        edges = []
        for layer in range(h_n):
            off = layer * base.n_sites
            edges.extend((u + off, v + off) for u, v in base.edges())
        for u, v in h_edges:
            edges.extend((x + u * base.n_sites, x + v * base.n_sites) for x in range(base.n_sites))
        # lattice coordinates plus the H-vertex as an extra open axis; reorder
        # so numbering is row-major in (lattice coords, h vertex)
        coords = np.array(
            [tuple(base.coords[x]) + (layer,) for layer in range(h_n) for x in range(base.n_sites)],
            dtype=np.int64,
        )
        order = np.lexsort(coords.T[::-1])
        relabel = np.empty_like(order)
        relabel[order] = np.arange(len(order))
        edges = [(int(relabel[u]), int(relabel[v])) for u, v in edges]
        return from_edges(len(coords), edges, coords=coords[order],
                          periods=base.periods + (None,), name=f"torus(d={d},n={n})xH")
    raise GraphError(f"unsupported graph variant {kind!r}")


# ---------------------------------------------------------------------------
# Metric queries
# ---------------------------------------------------------------------------

def default_metric(g: Graph) -> str:
    return "l_infinity" if g.coords is not None else "graph"


def _linf(g: Graph, v: int) -> np.ndarray:
    c = g.coords[: g.n_sites]
    diff = np.abs(c - c[v])
    for a, p in enumerate(g.periods or ()):
        if p is not None:
            diff[:, a] = np.minimum(diff[:, a], p - diff[:, a])
    return diff.max(axis=1)


def ball(g: Graph, v: int, r: int, metric: str = "graph") -> np.ndarray:
    """Sorted array of sites within distance ``r`` of site ``v``."""
    if not g.is_site(v):
        raise GraphError(f"ball centre {v} is not a site")
    if metric == "graph":
        d = g.distances_from(v)
    elif metric in ("l_infinity", "linf"):
        if g.coords is None:
            raise GraphError("l_infinity metric needs lattice coordinates")
        d = _linf(g, v)
    else:
        raise GraphError(f"unknown metric {metric!r}")
    return np.flatnonzero(d <= r)


def distance(g: Graph, u: int, v: int):
    """Hop count between sites; ``INF`` when disconnected."""
    d = g.distances_from(u)[v]
    return INF if np.isinf(d) else int(d)


def diameter(g: Graph, subset: Sequence[int]):
    subset = np.asarray(sorted(set(int(x) for x in subset)))
    if len(subset) == 0:
        raise GraphError("diameter of an empty set")
    best = 0
    for u in subset:
        m = g.distances_from(int(u))[subset].max()
        if np.isinf(m):
            return INF
        best = max(best, int(m))
    return best


def _within(g: Graph, v: int, t: int) -> Iterable[int]:
    """Sites within hop distance t of v (depth-limited BFS)."""
    seen = {v: 0}
    q = deque([v])
    ns = g.n_sites
    while q:
        u = q.popleft()
        du = seen[u]
        if du == t:
            continue
        for w in g.neighbors(u):
            w = int(w)
            if w < ns and w not in seen:
                seen[w] = du + 1
                q.append(w)
    return seen.keys()


def components(g: Graph, subset: Iterable[int], t: int) -> list[list[int]]:
    """Partition ``subset`` by the transitive closure of ``dist <= t``.

    Components are sorted internally and listed by smallest member.
    """
    members = sorted(set(int(x) for x in subset))
    index = {v: i for i, v in enumerate(members)}
    parent = list(range(len(members)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for v in members:
        for w in _within(g, v, t):
            j = index.get(w)
            if j is not None:
                a, b = find(index[v]), find(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups: dict[int, list[int]] = {}
    for v in members:
        groups.setdefault(find(index[v]), []).append(v)
    return sorted(groups.values(), key=lambda c: c[0])


# ---------------------------------------------------------------------------
# Text serialisation
# ---------------------------------------------------------------------------

def to_text(g: Graph) -> str:
    lines = [f"n={g.n} delta={g.delta}"]
    for v in range(g.n):
        lines.append(f"{v}: " + ",".join(str(int(w)) for w in g.neighbors(v)))
    for v, val in sorted(g.clamps.items()):
        lines.append(f"clamp {v}={val}")
    return "\n".join(lines) + "\n"


def _parse_spin(tok: str):
    try:
        return int(tok)
    except ValueError:
        try:
            return float(tok)
        except ValueError:
            return tok


def from_text(text: str) -> Graph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = dict(kv.split("=") for kv in lines[0].split())
    n = int(header["n"])
    adj: dict[int, list[int]] = {}
    clamps = {}
    for ln in lines[1:]:
        if ln.startswith("clamp"):
            v, val = ln.split(None, 1)[1].split("=")
            clamps[int(v)] = _parse_spin(val.strip())
        else:
            v, rest = ln.split(":", 1)
            adj[int(v)] = [int(x) for x in rest.split(",") if x.strip()]
    if sorted(adj) != list(range(n)):
        raise GraphError("adjacency section must list every vertex")
    for u, nb in adj.items():
        for w in nb:
            if u not in adj.get(w, ()):
                raise GraphError(f"asymmetric adjacency between {u} and {w}")
    edges = [(u, w) for u, nb in adj.items() for w in nb if u < w]
    g = from_edges(n - len(clamps), edges, clamps)
    if "delta" in header and int(header["delta"]) != g.delta:
        raise GraphError(f"header delta={header['delta']} disagrees with adjacency ({g.delta})")
    return g
