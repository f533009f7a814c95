"""Nearest-neighbour spin systems.

A :class:`SpinModel` binds a :class:`~glaubercut.graph.Graph` to a finite
spin alphabet, per-bond interaction tables ``g[u, v](x, y)`` (``-inf`` marks a
hard constraint) and per-site field tables ``h[u](x)``.  Configurations are
integer arrays of spin *indices* over the sites; the alphabet order is the
canonical order used by every inverse-CDF update in the package.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .graph import Graph

__all__ = [
    "SpinModel",
    "ModelError",
    "InfeasibleError",
    "make_ising",
    "make_potts",
    "make_antipotts",
    "make_coloring",
    "make_hardcore",
    "from_tables",
    "conditional_distribution",
    "log_weight",
    "is_feasible",
    "canonical_start",
    "zeta",
    "zeta_floor",
    "zeta_metropolis",
    "gibbs_enumerate",
    "clamps_to_fields",
    "induced",
    "perturbed_conditionals",
]

NEG_INF = -np.inf
GIBBS_STATE_BUDGET = 2 ** 20
ZETA_EVAL_BUDGET = 10 ** 6


class ModelError(ValueError):
    pass


class InfeasibleError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class SpinModel:
    """Immutable spin system on a graph.

    ``edge_table[k]`` is the index into ``tables`` for CSR entry ``k`` of the
    graph adjacency (over all vertices), oriented so that the row vertex's
    spin is the first table argument.
    """

    graph: Graph
    spins: tuple
    tables: np.ndarray
    edge_table: np.ndarray
    fields: np.ndarray
    kind: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.tables, self.edge_table, self.fields):
            arr.setflags(write=False)

    @property
    def q(self) -> int:
        return len(self.spins)

    @property
    def n_sites(self) -> int:
        return self.graph.n_sites

    @cached_property
    def clamp_index(self) -> np.ndarray:
        """Spin index of every boundary vertex, aligned with ``graph.boundary``."""
        out = np.empty(len(self.graph.clamps), dtype=np.int64)
        for k, b in enumerate(self.graph.boundary):
            val = self.graph.clamps[b]
            try:
                out[k] = self.spins.index(val)
            except ValueError:
                raise ModelError(
                    f"clamp value {val!r} at boundary vertex {b} is not in the alphabet {self.spins}"
                ) from None
        return out

    def spin_index(self, value) -> int:
        return self.spins.index(value)

    def table(self, u: int, k: int) -> np.ndarray:
        """Interaction table for the ``k``-th neighbour of ``u``."""
        return self.tables[self.edge_table[self.graph.indptr[u] + k]]

    @cached_property
    def h_eff(self) -> np.ndarray:
        """Site fields with every clamped neighbour folded in."""
        g = self.graph
        h = np.array(self.fields, dtype=float)
        ns = g.n_sites
        clamp = self.clamp_index
        for u in range(ns):
            for k, w in enumerate(g.neighbors(u)):
                if w >= ns:
                    h[u] += self.table(u, k)[:, clamp[w - ns]]
        h.setflags(write=False)
        return h

    @cached_property
    def kernel_arrays(self):
        """Flat arrays ``(ptr, nbr, nbr_table, tables, h_eff)`` over site-site
        bonds, the layout consumed by the compiled update kernels."""
        g = self.graph
        ns = g.n_sites
        ptr = [0]
        nbr: list[int] = []
        tid: list[int] = []
        for u in range(ns):
            base = g.indptr[u]
            for k, w in enumerate(g.neighbors(u)):
                if w < ns:
                    nbr.append(int(w))
                    tid.append(int(self.edge_table[base + k]))
            ptr.append(len(nbr))
        arrs = (
            np.asarray(ptr, dtype=np.int64),
            np.asarray(nbr, dtype=np.int64),
            np.asarray(tid, dtype=np.int64),
            np.ascontiguousarray(self.tables, dtype=np.float64),
            np.ascontiguousarray(self.h_eff, dtype=np.float64),
        )
        for a in arrs:
            a.setflags(write=False)
        return arrs

    @cached_property
    def is_monotone(self) -> bool:
        """Two-spin model whose every bond is attractive (supermodular)."""
        if self.q != 2 or not np.all(np.isfinite(self.tables)):
            return False
        t = self.tables
        return bool(np.all(t[:, 0, 0] + t[:, 1, 1] >= t[:, 0, 1] + t[:, 1, 0] - 1e-15))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def from_tables(
    graph: Graph,
    spins: Sequence,
    interaction: Callable[[int, int], np.ndarray],
    fields=None,
    kind: str = "custom",
    params: Mapping | None = None,
) -> SpinModel:
    """Assemble a model from a per-bond table function.

    ``interaction(u, v)`` returns the ``(q, q)`` table ``g[u, v](x, y)`` for
    ``u < v``; the reverse orientation is its transpose.  ``fields`` is a
    ``(n_sites, q)`` array or ``None``.
    """
    spins = tuple(spins)
    q = len(spins)
    if q < 2:
        raise ModelError("spin alphabet needs at least two values")
    ids: dict[bytes, int] = {}
    tables: list[np.ndarray] = []

    def intern(t: np.ndarray) -> int:
        t = np.asarray(t, dtype=float)
        if t.shape != (q, q):
            raise ModelError(f"interaction table has shape {t.shape}, expected {(q, q)}")
        if np.any(np.isnan(t)) or np.any(t == np.inf):
            raise ModelError("interaction tables must take values in R or -inf")
        key = t.tobytes()
        if key not in ids:
            ids[key] = len(tables)
            tables.append(t)
        return ids[key]

    edge_table = np.empty(len(graph.indices), dtype=np.int64)
    for u in range(graph.n):
        for k, w in enumerate(graph.neighbors(u)):
            w = int(w)
            t = interaction(u, w) if u < w else np.asarray(interaction(w, u), dtype=float).T
            edge_table[graph.indptr[u] + k] = intern(t)
    if fields is None:
        fields = np.zeros((graph.n_sites, q))
    fields = np.array(fields, dtype=float)
    if fields.shape != (graph.n_sites, q):
        raise ModelError(f"fields must have shape {(graph.n_sites, q)}")
    if np.any(np.isnan(fields)) or np.any(fields == np.inf):
        raise ModelError("fields must take values in R or -inf")
    table_arr = np.array(tables).reshape(len(tables), q, q)
    m = SpinModel(graph, spins, table_arr, edge_table, fields, kind, dict(params or {}))
    m.clamp_index  # validate clamps at binding time
    return m


def _per_edge(graph: Graph, value) -> Callable[[int, int], float]:
    if isinstance(value, Mapping):
        return lambda u, v: float(value[(u, v)] if (u, v) in value else value[(v, u)])
    if np.ndim(value) == 0:
        return lambda u, v: float(value)
    arr = np.asarray(value, dtype=float)
    index = {e: k for k, e in enumerate(graph.edges())}
    if len(arr) != len(index):
        raise ModelError(f"per-edge array has {len(arr)} entries for {len(index)} edges")
    return lambda u, v: float(arr[index[(u, v)]])


def _per_site(graph: Graph, value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (graph.n_sites,))
    return np.array(arr)


def make_ising(graph: Graph, beta=0.0, h=0.0) -> SpinModel:
    """Ising model, alphabet ``(-1, +1)``; ``beta`` scalar, per-edge array
    (in ``graph.edges()`` order) or ``{(u, v): beta}`` mapping; ``h`` scalar or
    per-site array."""
    b = _per_edge(graph, beta)
    hs = _per_site(graph, h)
    sv = np.array([-1.0, 1.0])
    fields = np.outer(hs, sv)
    return from_tables(
        graph, (-1, 1), lambda u, v: b(u, v) * np.outer(sv, sv), fields,
        kind="ising", params={"beta": beta, "h": h},
    )


def make_potts(graph: Graph, q: int, beta: float) -> SpinModel:
    """q-state Potts model on alphabet ``1..q``; equal neighbours gain ``2*beta``."""
    if q < 2:
        raise ModelError("Potts model needs q >= 2")
    t = 2.0 * beta * np.eye(q)
    return from_tables(graph, tuple(range(1, q + 1)), lambda u, v: t,
                       kind="potts", params={"q": q, "beta": beta})


def make_antipotts(graph: Graph, q: int, beta: float) -> SpinModel:
    if beta > 0:
        raise ModelError("anti-ferromagnetic Potts needs beta <= 0")
    m = make_potts(graph, q, beta)
    return SpinModel(m.graph, m.spins, m.tables, m.edge_table, m.fields, "antipotts", m.params)


def make_coloring(graph: Graph, q: int) -> SpinModel:
    """Uniform proper q-colourings (alphabet ``1..q``)."""
    if q <= graph.delta:
        raise ModelError(
            f"coloring needs q >= Delta+1 for single-site feasibility (q={q}, Delta={graph.delta})"
        )
    t = np.where(np.eye(q, dtype=bool), NEG_INF, 0.0)
    return from_tables(graph, tuple(range(1, q + 1)), lambda u, v: t,
                       kind="coloring", params={"q": q})


def make_hardcore(graph: Graph, lam: float) -> SpinModel:
    """Hard-core gas with fugacity ``lam`` on alphabet ``(0, 1)``."""
    if not lam > 0:
        raise ModelError("hard-core fugacity must be positive")
    t = np.array([[0.0, 0.0], [0.0, NEG_INF]])
    fields = np.tile([0.0, math.log(lam)], (graph.n_sites, 1))
    return from_tables(graph, (0, 1), lambda u, v: t, fields,
                       kind="hardcore", params={"lambda": lam})


# ---------------------------------------------------------------------------
# Single-site conditionals and weights
# ---------------------------------------------------------------------------

_PERTURB: list = [None]


@contextlib.contextmanager
def perturbed_conditionals(eps: float = 0.05):
    """Test hook: shift mass ``eps`` onto the first spin of every conditional.

    Only :func:`conditional_distribution` is affected, not the compiled
    update kernels, so marginal-correctness checks must fail under it.
    """
    _PERTURB[0] = eps
    try:
        yield
    finally:
        _PERTURB[0] = None


def _site_logits(m: SpinModel, sigma: np.ndarray, x: int) -> np.ndarray:
    g = m.graph
    ns = g.n_sites
    if not 0 <= x < ns:
        raise ModelError(f"vertex {x} is not a site")
    out = np.array(m.fields[x], dtype=float)
    for k, w in enumerate(g.neighbors(x)):
        s_w = sigma[w] if w < ns else m.clamp_index[w - ns]
        out += m.table(x, k)[:, s_w]
    return out


def _normalise(logits: np.ndarray) -> np.ndarray:
    top = logits.max()
    if not np.isfinite(top):
        raise InfeasibleError("every spin has zero conditional weight")
    p = np.exp(logits - top)
    return p / p.sum()


def conditional_distribution(m: SpinModel, sigma, x: int) -> np.ndarray:
    """Law of the spin at site ``x`` given the rest of ``sigma``."""
    p = _normalise(_site_logits(m, np.asarray(sigma), x))
    eps = _PERTURB[0]
    if eps is not None:
        p = (1 - eps) * p
        p[0] += eps
    return p


def log_weight(m: SpinModel, sigma) -> float:
    """Unnormalised log Gibbs weight (``-inf`` for infeasible configurations)."""
    sigma = np.asarray(sigma)
    g = m.graph
    ns = g.n_sites
    total = float(m.fields[np.arange(ns), sigma].sum())
    for u in range(ns):
        for k, w in enumerate(g.neighbors(u)):
            if w >= ns:
                total += m.table(u, k)[sigma[u], m.clamp_index[w - ns]]
            elif u < w:
                total += m.table(u, k)[sigma[u], sigma[w]]
    return total


def is_feasible(m: SpinModel, sigma) -> bool:
    return bool(np.isfinite(log_weight(m, sigma)))


def canonical_start(m: SpinModel) -> np.ndarray:
    """Greedy feasible start: each site in order takes the first spin that is
    compatible with its field, its clamps and the already-assigned sites.

    For the hard-core model this is the empty configuration; for colourings
    with ``q > Delta`` it is a greedy proper colouring.
    """
    g = m.graph
    ns = g.n_sites
    sigma = np.full(ns, -1, dtype=np.int64)
    for u in range(ns):
        logits = np.array(m.h_eff[u], dtype=float)
        for k, w in enumerate(g.neighbors(u)):
            if w < ns and sigma[w] >= 0:
                logits += m.table(u, k)[:, sigma[w]]
        ok = np.flatnonzero(np.isfinite(logits))
        if len(ok) == 0:
            raise InfeasibleError(f"greedy start failed at site {u}")
        sigma[u] = ok[0]
    if not is_feasible(m, sigma):
        raise InfeasibleError("greedy start is infeasible")
    return sigma


# ---------------------------------------------------------------------------
# Temperature measures
# ---------------------------------------------------------------------------

def _site_classes(m: SpinModel):
    """Group sites whose conditional law depends identically on their site
    neighbours: same effective field and same multiset of bond tables."""
    ptr, nbr, tid, tables, h_eff = m.kernel_arrays
    classes: dict = {}
    for x in range(m.n_sites):
        ts = tuple(sorted(int(t) for t in tid[ptr[x]:ptr[x + 1]]))
        key = (h_eff[x].tobytes(), ts)
        classes.setdefault(key, x)
    return list(classes.values())


def _neighbourhood_logits(m: SpinModel, x: int, budget: int) -> np.ndarray:
    """Logits of the conditional at ``x`` for every site-neighbourhood.

    Rows enumerate neighbour spin assignments: multisets when all bond tables
    at ``x`` coincide, full tuples otherwise.
    """
    ptr, nbr, tid, tables, h_eff = m.kernel_arrays
    ids = tid[ptr[x]:ptr[x + 1]]
    k = len(ids)
    q = m.q
    if k == 0:
        return h_eff[x][None, :]
    uniform = len(set(int(i) for i in ids)) == 1
    count = math.comb(q + k - 1, k) if uniform else q ** k
    if count > budget:
        raise ModelError(
            f"exhaustive neighbourhood scan at site {x} needs {count} evaluations (budget {budget})"
        )
    it = combinations_with_replacement(range(q), k) if uniform else product(range(q), repeat=k)
    eta = np.array(list(it), dtype=np.int64).reshape(-1, k)
    logits = np.tile(h_eff[x], (len(eta), 1))
    for i, t in enumerate(ids):
        logits += tables[t][:, eta[:, i]].T
    return logits


def _rows_to_probs(logits: np.ndarray) -> np.ndarray:
    top = logits.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise InfeasibleError("a neighbourhood leaves no feasible spin")
    p = np.exp(logits - top)
    return p / p.sum(axis=1, keepdims=True)


def zeta_floor(m: SpinModel, budget: int = ZETA_EVAL_BUDGET) -> np.ndarray:
    """Per-spin minimum of the single-site conditionals over all sites and
    all neighbour configurations; its total mass is :func:`zeta`."""
    floor = np.ones(m.q)
    for x in _site_classes(m):
        p = _rows_to_probs(_neighbourhood_logits(m, x, budget))
        floor = np.minimum(floor, p.min(axis=0))
    return floor


def zeta(m: SpinModel, budget: int = ZETA_EVAL_BUDGET) -> float:
    return float(zeta_floor(m, budget).sum())


def zeta_metropolis(m: SpinModel, budget: int = ZETA_EVAL_BUDGET) -> float:
    """Metropolis analogue: ``q**-1 * sum_s min_{x, s', eta} p(s|eta)/p(s'|eta)``."""
    q = m.q
    best = np.full(q, np.inf)
    for x in _site_classes(m):
        lg = _neighbourhood_logits(m, x, budget)
        with np.errstate(invalid="ignore"):
            diff = lg[:, :, None] - lg[:, None, :]  # [row, s, s']
            ratio = np.exp(diff)
        ratio = np.where(np.isnan(ratio), np.inf, ratio)
        best = np.minimum(best, ratio.min(axis=(0, 2)))
    best = np.minimum(best, 1.0)
    return float(best.sum() / q)


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------

def all_states(n_sites: int, q: int) -> np.ndarray:
    """Every configuration, row-major (site 0 slowest)."""
    if n_sites == 0:
        return np.zeros((1, 0), dtype=np.int8)
    grids = np.indices((q,) * n_sites, dtype=np.int8)
    return grids.reshape(n_sites, -1).T.copy()


def state_log_weights(m: SpinModel, states: np.ndarray) -> np.ndarray:
    ptr, nbr, tid, tables, h_eff = m.kernel_arrays
    lw = np.zeros(len(states))
    for u in range(m.n_sites):
        lw += h_eff[u][states[:, u]]
        for k in range(ptr[u], ptr[u + 1]):
            w = nbr[k]
            if u < w:
                lw += tables[tid[k]][states[:, u], states[:, w]]
    return lw


def gibbs_enumerate(m: SpinModel, budget: int = GIBBS_STATE_BUDGET):
    """Exact Gibbs distribution over all configurations.

    Returns ``(states, probs)`` with ``states`` of shape ``(q**n, n_sites)``
    (spin indices, row-major) and infeasible states at probability zero.
    """
    total = m.q ** m.n_sites
    if total > budget:
        raise ModelError(f"{total} states exceed the enumeration budget {budget}")
    states = all_states(m.n_sites, m.q)
    lw = state_log_weights(m, states)
    if not np.any(np.isfinite(lw)):
        raise InfeasibleError("model has no feasible configuration")
    probs = np.exp(lw - logsumexp(lw))
    return states, probs


# ---------------------------------------------------------------------------
# Derived models
# ---------------------------------------------------------------------------

def _site_subgraph_model(m: SpinModel, sites: np.ndarray, name: str) -> SpinModel:
    from .graph import from_edges

    sites = np.asarray(sites, dtype=np.int64)
    local = {int(v): i for i, v in enumerate(sites)}
    g = m.graph
    ns = g.n_sites
    edges = []
    tables_by_edge = {}
    for v in sites:
        v = int(v)
        for k, w in enumerate(g.neighbors(v)):
            w = int(w)
            if w < ns and w in local and v < w:
                edges.append((local[v], local[w]))
                tables_by_edge[(local[v], local[w])] = m.table(v, k)
    coords = None if g.coords is None else g.coords[sites]
    sub = from_edges(len(sites), edges, coords=coords, periods=g.periods, name=name)
    return from_tables(
        sub, m.spins, lambda a, b: tables_by_edge[(a, b)], m.h_eff[sites],
        kind=m.kind, params=m.params,
    )


def clamps_to_fields(m: SpinModel) -> SpinModel:
    """Equivalent model with every boundary vertex folded into site fields."""
    return _site_subgraph_model(m, np.arange(m.n_sites), m.graph.name + "/fields")


def induced(m: SpinModel, sites) -> SpinModel:
    """Model on the induced subgraph of ``sites`` with free boundary towards
    the remaining sites; clamped boundary vertices stay in effect as fields."""
    return _site_subgraph_model(m, np.asarray(sorted(int(s) for s in sites)), m.graph.name + "/induced")
