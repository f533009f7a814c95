"""Barrier dynamics, update supports and sparse-set checks.

The barrier system runs, for every site ``u``, a copy of the dynamics on the
ball ``B_u(r)`` with the bonds leaving the ball severed.  All copies consume
the base chain's update events.  The barrier map sends a start configuration
to the configuration that reads off each centre from its own ball.

The *support* of an update map is the set of input sites whose value can
change the output.  It is computed exactly by enumeration on tiny systems,
and bounded at scale by the union of the balls whose centre is not yet
determined by the ball's grand coupling.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels as K
from .dynamics import (
    PolicyError,
    UpdateSequence,
    _as_config,
    _check_sequence,
    _floor_args,
    _grand_policy,
    _policy_code,
)
from .graph import Graph, GraphError, _within, components, default_metric, diameter
from .model import InfeasibleError, ModelError, SpinModel, all_states, is_feasible

__all__ = [
    "BarrierSystem",
    "SupportReport",
    "SparseParams",
    "SparseVerdict",
    "compute_r",
    "compute_rho",
    "suggest_s",
    "all_balls",
    "barrier_evolve",
    "support_superset",
    "support_exact",
    "check_sparse",
    "projection_inequality",
    "write_pgm",
    "write_frames",
]

EXACT_BUDGET = 2 ** 16


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def compute_r(delta: int, alpha: float, n: float) -> int:
    """Barrier radius ``floor(10 * delta / alpha * log n)``."""
    if not alpha > 0:
        raise ValueError("log-Sobolev estimate alpha must be positive")
    return int(math.floor(10.0 * delta / alpha * math.log(n)))


def all_balls(g: Graph, r: int, metric: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Balls of radius ``r`` around every site as CSR ``(ptr, members)``.

    ``metric`` is ``'graph'`` (hop distance over sites) or ``'l_infinity'``
    (coordinate sup-distance, periodic axes wrapped); default per
    :func:`~glaubercut.graph.default_metric`.
    """
    metric = metric or default_metric(g)
    if r < 0:
        raise ValueError("radius must be nonnegative")
    ns = g.n_sites
    if metric == "graph":
        ptr, idx = g.site_csr()
        return K.balls_graph(np.asarray(ptr, np.int64), np.asarray(idx, np.int64), ns, int(r))
    if metric not in ("l_infinity", "linf"):
        raise GraphError(f"unknown metric {metric!r}")
    if g.coords is None:
        raise GraphError("l_infinity metric needs lattice coordinates")
    c = np.asarray(g.coords[:ns], dtype=np.int64)
    lo = c.min(axis=0)
    ext = c.max(axis=0) - lo + 1
    lookup = np.full(tuple(ext), -1, dtype=np.int64)
    lookup[tuple((c - lo).T)] = np.arange(ns)
    periods = list(g.periods or [None] * c.shape[1])
    dim = c.shape[1]
    span = []
    for a in range(dim):
        p = periods[a]
        # offsets beyond half a period only repeat sites
        rr = min(r, p // 2) if p else min(r, int(ext[a]) - 1)
        span.append(np.arange(-rr, rr + 1))
    offsets = np.array(np.meshgrid(*span, indexing="ij")).reshape(dim, -1).T
    cols = np.empty((ns, len(offsets)), dtype=np.int64)
    for k, off in enumerate(offsets):
        tgt = c + off
        ok = np.ones(ns, dtype=bool)
        for a in range(dim):
            p = periods[a]
            if p:
                tgt[:, a] = lo[a] + (tgt[:, a] - lo[a]) % p
            ok &= (tgt[:, a] >= lo[a]) & (tgt[:, a] < lo[a] + ext[a])
        ids = np.full(ns, -1, dtype=np.int64)
        t = tgt[ok] - lo
        ids[ok] = lookup[tuple(t.T)]
        cols[:, k] = ids
    cols.sort(axis=1)
    ptr = np.zeros(ns + 1, dtype=np.int64)
    rows = []
    for v in range(ns):
        row = cols[v]
        row = row[row >= 0]
        row = row[np.concatenate([[True], row[1:] != row[:-1]])] if len(row) else row
        rows.append(row)
        ptr[v + 1] = ptr[v] + len(row)
    return ptr, (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64))


def compute_rho(g: Graph, r: int, metric: str | None = None) -> int:
    """Largest ball size ``max_v |B_v(r)|`` by exhaustive scan."""
    ptr, _ = all_balls(g, r, metric)
    return int(np.diff(ptr).max()) if g.n_sites else 0


def suggest_s(delta: int, alpha: float, rho: int) -> float:
    """Suggested support horizon ``7 * delta / alpha**2 * log rho``; a
    heuristic starting point only."""
    if not alpha > 0:
        raise ValueError("log-Sobolev estimate alpha must be positive")
    return 7.0 * delta / alpha ** 2 * math.log(rho)


@dataclass(frozen=True)
class SparseParams:
    """Thresholds of the sparse-set test and the inputs they came from."""

    max_size: float
    max_diam: float
    min_sep: float
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.max_size > 0 and self.max_diam > 0 and self.min_sep > 0):
            raise ValueError("sparse-set thresholds must be positive")

    @classmethod
    def from_inputs(cls, delta: int, alpha: float, n: int, rho: int | None = None,
                    g: Graph | None = None, metric: str | None = None) -> "SparseParams":
        """Thresholds ``rho**3 log n``, ``log(n)**2 / 2`` and
        ``25 * delta / alpha * log n``, with ``r`` and ``rho`` derived from
        the inputs when not given."""
        r = compute_r(delta, alpha, n)
        if rho is None:
            if g is None:
                raise ValueError("need rho or a graph to compute it")
            rho = compute_rho(g, r, metric)
        ln = math.log(n)
        return cls(
            max_size=rho ** 3 * ln,
            max_diam=0.5 * ln ** 2,
            min_sep=25.0 * delta / alpha * ln,
            inputs={"delta": delta, "alpha": alpha, "n": n, "rho": rho, "r": r},
        )


# ---------------------------------------------------------------------------
# Barrier system
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BarrierSystem:
    """Ball-restricted copies of ``model`` around every site."""

    model: SpinModel
    r: int
    metric: str | None = None

    @cached_property
    def balls(self) -> tuple[np.ndarray, np.ndarray]:
        return all_balls(self.model.graph, self.r, self.metric)

    def ball(self, u: int) -> np.ndarray:
        ptr, sites = self.balls
        return sites[ptr[u]:ptr[u + 1]]

    @cached_property
    def fanout(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR of the centres whose ball contains each site."""
        ptr, sites = self.balls
        n = self.model.n_sites
        centres = np.repeat(np.arange(n), np.diff(ptr))
        order = np.lexsort((centres, sites))
        counts = np.bincount(sites, minlength=n)
        fptr = np.concatenate([[0], np.cumsum(counts)])
        return fptr, centres[order]

    def ball_model(self, u: int) -> SpinModel:
        from .model import induced

        return induced(self.model, self.ball(u))


def _event_index(W: UpdateSequence) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(W.sites, kind="stable")
    counts = np.bincount(W.sites, minlength=W.n_sites)
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64), order.astype(np.int64)


def barrier_evolve(b: BarrierSystem, sigma0, W: UpdateSequence,
                   allow_infeasible: bool = False) -> np.ndarray:
    """Barrier map: each site takes the value of the centre of its own ball
    chain after all updates of ``W``."""
    m = b.model
    _check_sequence(m, W)
    conf = _as_config(m, sigma0)
    if not allow_infeasible and not is_feasible(m, conf):
        raise InfeasibleError("start configuration is infeasible")
    code = _policy_code(m, W)
    floor, z = _floor_args(m, code)
    ev_ptr, ev_idx = _event_index(W)
    bptr, bsites = b.balls
    ptr, nbr, tid, tables, h = m.kernel_arrays
    return K.barrier_apply(code, conf, bptr, bsites, m.n_sites, ev_ptr, ev_idx,
                           W.sites, W.u, W.aux, ptr, nbr, tid, tables, h, floor, z)


# ---------------------------------------------------------------------------
# Supports
# ---------------------------------------------------------------------------

@dataclass
class SparseVerdict:
    sparse: bool
    components: list
    sizes: list
    diameters: list
    min_separation: float
    violation: str | None = None

    def as_dict(self) -> dict:
        return {
            "sparse": self.sparse,
            "violation": self.violation,
            "n_components": len(self.components),
            "sizes": self.sizes,
            "diameters": [None if d == math.inf else d for d in self.diameters],
            "min_separation": None if self.min_separation == math.inf else self.min_separation,
        }


@dataclass
class SupportReport:
    """Support (or superset) of an update map.

    For superset reports built over several frames, ``frame_times`` lists the
    window lengths, ``fractions`` the superset fraction per frame and
    ``determined_at[v]`` the first frame at which centre ``v`` was determined
    (``-1`` if never).
    """

    sites: np.ndarray
    exact: bool
    n_sites: int
    components: list = field(default_factory=list)
    verdict: SparseVerdict | None = None
    frame_times: np.ndarray | None = None
    fractions: np.ndarray | None = None
    frame_masks: list | None = None
    undetermined: list | None = None
    determined_at: np.ndarray | None = None

    @property
    def fraction(self) -> float:
        return len(self.sites) / self.n_sites if self.n_sites else 0.0

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_sites, dtype=bool)
        m[self.sites] = True
        return m


def support_superset(b: BarrierSystem, W: UpdateSequence, policy: str | None = None,
                     frames=None, keep_masks: bool = False) -> SupportReport:
    """Union of the balls whose centre the ball's grand coupling leaves
    undetermined.

    With ``frames`` (increasing window lengths ``s <= W.horizon``) frame
    ``s`` uses the last ``s`` time units of ``W``; longer windows extend into
    the past, so the undetermined centres shrink from frame to frame and a
    determined ball is never revisited.  The last frame equal to the horizon
    is the superset for the whole of ``W``.
    """
    m = b.model
    _check_sequence(m, W)
    if W.kind != "hb":
        raise PolicyError("support supersets use heat-bath grand couplings")
    mode = _grand_policy(m, policy or W.policy)
    if mode == "perm" and W.policy != "perm":
        raise PolicyError("permutation coupling needs a sequence carrying permutations")
    code = {"mono": K.HB, "thresh": K.THRESH, "perm": K.PERM}[mode]
    floor, z = _floor_args(m, code)
    S = W.horizon
    frames = np.asarray([S] if frames is None else frames, dtype=float)
    if np.any(np.diff(frames) < 0) or (len(frames) and (frames[0] < 0 or frames[-1] > S + 1e-12)):
        raise ValueError("frame windows must be increasing within [0, horizon]")
    n = m.n_sites
    ev_ptr, ev_idx = _event_index(W)
    bptr, bsites = b.balls
    ptr, nbr, tid, tables, h = m.kernel_arrays
    active = np.arange(n, dtype=np.int64)
    determined_at = np.full(n, -1, dtype=np.int64)
    fractions, masks, undet = [], [], []
    mask = np.ones(n, dtype=bool)
    for f, s in enumerate(frames):
        if s <= 0:
            still = active
        else:
            first = int(np.searchsorted(W.times, S - s, side="right"))
            flags = K.barrier_frames(code, active, bptr, bsites, first, n, ev_ptr, ev_idx,
                                     W.sites, W.u, W.aux, ptr, nbr, tid, tables, h, floor, z)
            determined_at[active[~flags]] = f
            still = active[flags]
        active = still
        mask = K.ball_union_mask(active, bptr, bsites, n)
        fractions.append(mask.mean() if n else 0.0)
        undet.append(active.copy())
        if keep_masks:
            masks.append(mask.copy())
    return SupportReport(
        sites=np.flatnonzero(mask), exact=False, n_sites=n,
        frame_times=frames, fractions=np.array(fractions),
        frame_masks=masks if keep_masks else None, undetermined=undet,
        determined_at=determined_at,
    )


def _map_outputs(target, W: UpdateSequence, budget: int) -> tuple[np.ndarray, int]:
    """Images of every configuration under the update map of ``W``."""
    if isinstance(target, BarrierSystem):
        m = target.model
    else:
        m = target
    _check_sequence(m, W)
    n, q = m.n_sites, m.q
    if q ** n > budget:
        raise ModelError(f"{q ** n} configurations exceed the brute-force budget {budget}")
    code = _policy_code(m, W)
    floor, z = _floor_args(m, code)
    states = all_states(n, q).astype(np.int64)
    ptr, nbr, tid, tables, h = m.kernel_arrays
    if isinstance(target, BarrierSystem):
        ev_ptr, ev_idx = _event_index(W)
        bptr, bsites = target.balls
        out = K.barrier_apply_batch(code, states, bptr, bsites, n, ev_ptr, ev_idx,
                                    W.sites, W.u, W.aux, ptr, nbr, tid, tables, h, floor, z)
        if np.any(out < 0):
            raise InfeasibleError("an update had no feasible spin")
        return out, q
    bad = K.apply_map_batch(states, W.sites, W.u, W.aux, code, ptr, nbr, tid, tables, h, floor, z)
    if bad:
        raise InfeasibleError("an update had no feasible spin")
    return states, q


def support_exact(target, W: UpdateSequence, budget: int = EXACT_BUDGET) -> SupportReport:
    """Exact support by enumeration: ``v`` belongs to it iff two inputs that
    differ only at ``v`` have different images.

    ``target`` is a model (support of the plain update map) or a
    :class:`BarrierSystem` (support of the barrier map).
    """
    out, q = _map_outputs(target, W, budget)
    n = out.shape[1]
    weights = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keys = out @ weights
    sites = []
    for v in range(n):
        k = keys.reshape(q ** v, q, q ** (n - v - 1))
        if np.any(k != k[:, :1, :]):
            sites.append(v)
    return SupportReport(sites=np.array(sites, dtype=np.int64), exact=True, n_sites=n)


# ---------------------------------------------------------------------------
# Sparse sets
# ---------------------------------------------------------------------------

def _diameter_capped(g: Graph, comp: list, cap: float):
    """Diameter of ``comp``, or the first pairwise distance found above
    ``cap`` (enough to report a violation without finishing the scan)."""
    if len(comp) <= 1:
        return diameter(g, comp)
    idx = np.asarray(comp)
    best = 0
    for v in comp:
        d = g.distances_from(int(v))[idx].max()
        if d == math.inf:
            return math.inf
        best = max(best, int(d))
        if best > cap:
            break
    return best


def _hop(g: Graph, u: int, v: int) -> float:
    return float(g.distances_from(u)[v])


def check_sparse(g: Graph, support, p: SparseParams, merge: str = "separation",
                 r: int | None = None, centres=None) -> SparseVerdict:
    """Decompose a site set into components and test the sparse-set
    thresholds (size, diameter, pairwise separation) on them.

    ``merge='separation'`` joins sites closer than ``p.min_sep``.
    ``merge='5r'`` joins the balls ``B_u(r)`` of undetermined ``centres``
    whenever the centres are within ``5r``; separation is then checked
    separately.
    """
    if isinstance(support, SupportReport):
        sites = [int(v) for v in support.sites]
        if centres is None and support.undetermined:
            centres = support.undetermined[-1]
    else:
        sites = sorted(set(int(v) for v in support))
    if not sites:
        return SparseVerdict(True, [], [], [], math.inf)
    sep_t = max(int(math.ceil(p.min_sep)) - 1, 0)
    if merge == "separation":
        comps = components(g, sites, sep_t)
    elif merge == "5r":
        if r is None or centres is None:
            raise ValueError("the 5r rule needs the radius and the undetermined centres")
        centres = [int(c) for c in centres]
        groups = components(g, centres, 5 * r)
        site_set = set(sites)
        comps = []
        for grp in groups:
            members = set()
            for c in grp:
                members.update(int(w) for w in _within(g, c, r) if int(w) in site_set)
            comps.append(sorted(members))
        covered = set().union(*map(set, comps)) if comps else set()
        rest = sorted(site_set - covered)
        comps.extend([v] for v in rest)
        comps.sort(key=lambda c: c[0])
    else:
        raise ValueError(f"unknown merge rule {merge!r}")
    sizes = [len(c) for c in comps]
    diams = [_diameter_capped(g, c, p.max_diam) for c in comps]
    sep = math.inf
    if merge != "separation" and len(comps) > 1:
        owner = {v: i for i, c in enumerate(comps) for v in c}
        for i, c in enumerate(comps):
            for v in c:
                for w in _within(g, v, sep_t):
                    j = owner.get(int(w))
                    if j is not None and j != i:
                        sep = min(sep, _hop(g, v, int(w)))
    elif len(comps) > 1:
        sep = float(sep_t + 1)  # merging guarantees at least this separation
    violation = None
    for i, (sz, dm) in enumerate(zip(sizes, diams)):
        if sz > p.max_size:
            violation = f"size: component {i} has {sz} sites > {p.max_size:.6g}"
            break
        if dm > p.max_diam:
            violation = f"diameter: component {i} has diameter {dm} > {p.max_diam:.6g}"
            break
    if violation is None and sep < p.min_sep:
        violation = f"separation: components at distance {sep:g} < {p.min_sep:.6g}"
    return SparseVerdict(violation is None, comps, sizes, diams, sep, violation)


# ---------------------------------------------------------------------------
# Random-mapping projection inequality
# ---------------------------------------------------------------------------

def _single_event_ensemble(m: SpinModel):
    """All single heat-bath events ``(x, u)`` up to the intervals of ``u`` on
    which the update map is constant, with their probabilities."""
    n, q = m.n_sites, m.q
    states = all_states(n, q).astype(np.int64)
    ptr, nbr, tid, tables, h = m.kernel_arrays
    out = []
    for x in range(n):
        lg = np.tile(h[x], (len(states), 1))
        for k in range(ptr[x], ptr[x + 1]):
            lg += tables[tid[k]][:, states[:, nbr[k]]].T
        top = lg.max(axis=1, keepdims=True)
        ok = np.isfinite(top[:, 0])
        p = np.exp(lg[ok] - top[ok])
        cdf = np.cumsum(p, axis=1) / p.sum(axis=1, keepdims=True)
        cuts = np.unique(np.concatenate([[0.0, 1.0], np.clip(cdf.ravel(), 0, 1)]))
        for a, bnd in zip(cuts[:-1], cuts[1:]):
            if bnd > a:
                out.append((x, 0.5 * (a + bnd), (bnd - a) / n))
    return out


def _projected_tv(states: np.ndarray, phi: np.ndarray, psi: np.ndarray, sites, q: int) -> float:
    if len(sites) == 0:
        return 0.0
    w = q ** np.arange(len(sites) - 1, -1, -1, dtype=np.int64)
    keys = states[:, sites] @ w
    diff = np.bincount(keys, weights=phi - psi, minlength=q ** len(sites))
    return 0.5 * float(np.abs(diff).sum())


def projection_inequality(m: SpinModel, phi, psi) -> tuple[float, float]:
    """Both sides of ``TV(phi K, psi K) <= E_W TV(phi|Lambda_W, psi|Lambda_W)``
    for the one-event heat-bath kernel ``K`` (uniform site, uniform ``u``),
    computed exactly.  Returns ``(lhs, rhs)``."""
    n, q = m.n_sites, m.q
    states = all_states(n, q).astype(np.int64)
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    weights = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    push_phi = np.zeros(q ** n)
    push_psi = np.zeros(q ** n)
    rhs = 0.0
    for x, u, prob in _single_event_ensemble(m):
        W = UpdateSequence.from_events([(0.5, x, u)], n, q, horizon=1.0)
        out, _ = _map_outputs(m, W, max(EXACT_BUDGET, q ** n))
        img = out @ weights
        push_phi += prob * np.bincount(img, weights=phi, minlength=q ** n)
        push_psi += prob * np.bincount(img, weights=psi, minlength=q ** n)
        lam = support_exact(m, W, max(EXACT_BUDGET, q ** n)).sites
        rhs += prob * _projected_tv(states, phi, psi, lam, q)
    lhs = 0.5 * float(np.abs(push_phi - push_psi).sum())
    return lhs, rhs


# ---------------------------------------------------------------------------
# Graymap frames
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray, binary: bool = True) -> None:
    """Write an 8-bit graymap (P5 binary or P2 plain)."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    else:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(f"P2\n{w} {h}\n255\n")
            for row in img:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")


UNDETERMINED_LEVEL = 0
SUPPORT_LEVEL = 72
AGE_LEVELS = (150, 180, 205, 230, 255)


def frame_image(g: Graph, report: SupportReport, f: int) -> np.ndarray:
    """Gray levels for frame ``f``: undetermined centres black, the rest of
    the superset dark gray, other sites lighter with the number of frames
    since their centre was determined."""
    if g.coords is None or g.coords.shape[1] > 2:
        raise GraphError("frames need a one- or two-dimensional lattice embedding")
    c = np.asarray(g.coords[: g.n_sites], dtype=np.int64)
    if c.shape[1] == 1:
        c = np.column_stack([np.zeros(len(c), np.int64), c[:, 0]])
    c = c - c.min(axis=0)
    shape = tuple(c.max(axis=0) + 1)
    img = np.full(shape, 255, dtype=np.uint8)
    age = np.where(report.determined_at >= 0, f - report.determined_at, -1)
    bucket = np.clip(age, 0, len(AGE_LEVELS) - 1)
    levels = np.array(AGE_LEVELS, dtype=np.uint8)[bucket]
    mask = report.frame_masks[f]
    levels = np.where(mask, SUPPORT_LEVEL, levels)
    und = np.zeros(g.n_sites, dtype=bool)
    und[report.undetermined[f]] = True
    levels = np.where(und, UNDETERMINED_LEVEL, levels)
    img[c[:, 0], c[:, 1]] = levels
    return img


def write_frames(g: Graph, report: SupportReport, directory, binary: bool = True) -> list[str]:
    """One graymap per frame plus ``index.txt`` (name, window, superset size,
    fraction)."""
    if report.frame_masks is None:
        raise ValueError("report was built without per-frame masks")
    os.makedirs(directory, exist_ok=True)
    names = []
    lines = []
    for f, s in enumerate(report.frame_times):
        name = f"{f:04d}.pgm"
        write_pgm(os.path.join(directory, name), frame_image(g, report, f), binary)
        names.append(name)
        size = int(report.frame_masks[f].sum())
        lines.append(f"{name} s={float(s)!r} support={size} fraction={float(report.fractions[f])!r}")
    with open(os.path.join(directory, "index.txt"), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return names
