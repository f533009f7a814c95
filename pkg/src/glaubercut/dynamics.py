"""Continuous-time Glauber dynamics driven by explicit randomness.

An :class:`UpdateSequence` holds every random quantity of a trajectory: the
Poisson clock rings per site, a uniform per ring and, depending on the
coupling policy, a proposal offset (Metropolis) or a permutation of the
alphabet (colouring coupling).  All evolution maps are deterministic
functions of a start configuration and such a sequence.

Policies
--------
``mono``
    heat-bath with plain inverse-CDF in alphabet order.  For attractive
    two-spin systems this is the monotone grand coupling.
``thresh``
    heat-bath whose uniform is split at ``zeta``: below it the spin comes from
    the neighbour-independent floor, above it from the residual law.
``perm``
    colourings only: the new colour is the first feasible colour of the
    event's permutation.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement, permutations, product
from typing import Callable, Sequence

import numpy as np
from scipy.stats import beta as beta_dist

from . import _kernels as K
from .graph import Graph
from .model import (
    ZETA_EVAL_BUDGET,
    InfeasibleError,
    ModelError,
    SpinModel,
    is_feasible,
)

__all__ = [
    "UpdateSequence",
    "EnvelopeState",
    "GrandResult",
    "PolicyError",
    "sample_updates",
    "evolve",
    "trajectory",
    "grand_evolve",
    "disagreement_curve",
    "simulate_contact",
    "contact_bound",
    "coupling_tv_upper",
    "coupling_floor",
    "geometric_grid",
    "replica_seed",
    "run_replicas",
    "update_law",
    "clopper_pearson",
]

KINDS = ("hb", "mh")
POLICIES = ("mono", "thresh", "perm")
EVENT_TAG = 0x57A7
REPLICA_TAG = 0x5EB1
CONTACT_TAG = 0xC0A7
CHUNK = 32
MAGIC = b"CUTW"
FORMAT_VERSION = 1


class PolicyError(ValueError):
    """Coupling policy does not apply to the model."""


# ---------------------------------------------------------------------------
# Update sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class UpdateSequence:
    """Time-ordered site updates on ``[0, horizon]``.

    ``aux`` has one row per event: the alphabet permutation (``perm``), the
    Metropolis proposal offset in column 0 (``kind='mh'``) or a dummy column.
    """

    times: np.ndarray
    sites: np.ndarray
    u: np.ndarray
    aux: np.ndarray
    seed: int
    kind: str
    policy: str
    horizon: float
    n_sites: int
    q: int

    def __post_init__(self):
        for a in (self.times, self.sites, self.u, self.aux):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UpdateSequence):
            return NotImplemented
        return (
            (self.seed, self.kind, self.policy, self.horizon, self.n_sites, self.q)
            == (other.seed, other.kind, other.policy, other.horizon, other.n_sites, other.q)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.sites, other.sites)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.aux, other.aux)
        )

    __hash__ = object.__hash__

    def truncate(self, s: float) -> "UpdateSequence":
        """Events with time ``<= s``, as a sequence of horizon ``s``."""
        k = int(np.searchsorted(self.times, s, side="right"))
        return self._slice(slice(0, k), horizon=float(s))

    def window(self, t0: float, t1: float) -> "UpdateSequence":
        """Events in ``(t0, t1]`` shifted to start at time 0."""
        a = int(np.searchsorted(self.times, t0, side="right"))
        b = int(np.searchsorted(self.times, t1, side="right"))
        sub = self._slice(slice(a, b), horizon=float(t1 - t0))
        object.__setattr__(sub, "times", sub.times - t0)
        sub.times.setflags(write=False)
        return sub

    def _slice(self, sl, horizon) -> "UpdateSequence":
        return UpdateSequence(
            self.times[sl].copy(), self.sites[sl].copy(), self.u[sl].copy(),
            self.aux[sl].copy(), self.seed, self.kind, self.policy, horizon,
            self.n_sites, self.q,
        )

    @classmethod
    def from_events(cls, events, n_sites: int, q: int = 2, kind: str = "hb",
                    policy: str = "mono", horizon: float | None = None, seed: int = 0):
        """Hand-built sequence from ``(t, x, u[, aux])`` tuples."""
        events = sorted(events, key=lambda e: (e[0], e[1]))
        width = _aux_width(kind, policy, q)
        times = np.array([e[0] for e in events], dtype=float)
        sites = np.array([e[1] for e in events], dtype=np.int64)
        us = np.array([e[2] for e in events], dtype=float)
        aux = np.zeros((len(events), width), dtype=np.int64)
        for i, e in enumerate(events):
            if len(e) > 3:
                aux[i] = np.atleast_1d(e[3])
        if horizon is None:
            horizon = float(times[-1]) if len(times) else 0.0
        seq = cls(times, sites, us, aux, seed, kind, policy, float(horizon), n_sites, q)
        _validate(seq)
        return seq

    # -- serialisation -----------------------------------------------------

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(
            f"seed={self.seed} kind={self.kind} policy={self.policy} "
            f"horizon={self.horizon!r} sites={self.n_sites} q={self.q}\n"
        )
        show_aux = _carries_aux(self.kind, self.policy)
        for i in range(len(self)):
            line = f"{float(self.times[i])!r} {int(self.sites[i])} {float(self.u[i])!r}"
            if show_aux:
                line += " " + ",".join(str(int(a)) for a in self.aux[i])
            out.write(line + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "UpdateSequence":
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty update-sequence file")
        head = dict(tok.split("=", 1) for tok in lines[0].split())
        try:
            seed = int(head["seed"])
            kind, policy = head["kind"], head["policy"]
            horizon = float(head["horizon"])
        except KeyError as exc:
            raise ValueError(f"update-sequence header lacks {exc.args[0]!r}") from None
        n_sites = int(head.get("sites", 0))
        q = int(head.get("q", 2))
        width = _aux_width(kind, policy, q)
        body = [ln.split() for ln in lines[1:] if ln.strip()]
        times = np.array([float(b[0]) for b in body], dtype=float)
        sites = np.array([int(b[1]) for b in body], dtype=np.int64)
        us = np.array([float(b[2]) for b in body], dtype=float)
        aux = np.zeros((len(body), width), dtype=np.int64)
        for i, b in enumerate(body):
            if len(b) > 3:
                aux[i] = [int(a) for a in b[3].split(",")]
        if not n_sites and len(sites):
            n_sites = int(sites.max()) + 1
        seq = cls(times, sites, us, aux, seed, kind, policy, horizon, n_sites, q)
        _validate(seq)
        return seq

    def to_bytes(self) -> bytes:
        n = len(self)
        head = struct.pack(
            "<4sIQBBdQIQI", MAGIC, FORMAT_VERSION, self.seed,
            KINDS.index(self.kind), POLICIES.index(self.policy),
            self.horizon, self.n_sites, self.q, n, self.aux.shape[1],
        )
        return b"".join([
            head,
            self.times.astype("<f8").tobytes(),
            self.sites.astype("<i8").tobytes(),
            self.u.astype("<f8").tobytes(),
            self.aux.astype("<i8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes) -> "UpdateSequence":
        fmt = "<4sIQBBdQIQI"
        size = struct.calcsize(fmt)
        magic, ver, seed, kind, policy, horizon, n_sites, q, n, width = struct.unpack(
            fmt, data[:size])
        if magic != MAGIC:
            raise ValueError("not a binary update-sequence file")
        if ver != FORMAT_VERSION:
            raise ValueError(f"unsupported update-sequence format version {ver}")
        off = size

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr.astype(dtype[1:]).copy()

        times = take("<f8", n)
        sites = take("<i8", n)
        us = take("<f8", n)
        aux = take("<i8", n * width).reshape(n, width)
        return cls(times, sites, us, aux, seed, KINDS[kind], POLICIES[policy],
                   horizon, n_sites, q)

    def save(self, path, binary: bool = False) -> None:
        if binary:
            with open(path, "wb") as fh:
                fh.write(self.to_bytes())
        else:
            with open(path, "w", encoding="ascii", newline="\n") as fh:
                fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "UpdateSequence":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] == MAGIC:
            return cls.from_bytes(data)
        return cls.from_text(data.decode("ascii"))


def _carries_aux(kind: str, policy: str) -> bool:
    return kind == "mh" or policy == "perm"


def _aux_width(kind: str, policy: str, q: int) -> int:
    if kind not in KINDS:
        raise ValueError(f"unknown dynamics kind {kind!r}; expected one of {KINDS}")
    if policy not in POLICIES:
        raise ValueError(f"unknown coupling policy {policy!r}; expected one of {POLICIES}")
    if kind == "mh" and policy != "mono":
        raise PolicyError("Metropolis sequences only support the plain policy 'mono'")
    if policy == "perm":
        return q
    return 1


def _validate(seq: UpdateSequence) -> None:
    t = seq.times
    if len(t) and (np.any(t < 0) or np.any(np.diff(t) < 0)):
        raise ValueError("event times must be nonnegative and sorted")
    if len(t) and np.any(t > seq.horizon):
        raise ValueError("event after the horizon")
    if np.any((seq.u < 0) | (seq.u >= 1)):
        raise ValueError("uniforms must lie in [0, 1)")
    if len(t) and (seq.sites.min() < 0 or seq.sites.max() >= seq.n_sites):
        raise ValueError("event site out of range")


def _site_events(seed: int, x: int, horizon: float, q: int, kind: str, policy: str):
    """Ring times, uniforms and auxiliary draws of one site's clock.

    Draws come in fixed chunks from a stream keyed by (seed, site), so the
    events before any time are the same for every horizon beyond it.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, EVENT_TAG, x])))
    times, us, auxs = [], [], []
    t = 0.0
    while True:
        gaps = rng.standard_exponential(CHUNK)
        u = rng.random(CHUNK)
        if policy == "perm":
            a = rng.permuted(np.tile(np.arange(q, dtype=np.int64), (CHUNK, 1)), axis=1)
        elif kind == "mh":
            a = rng.integers(1, q, size=(CHUNK, 1)) if q > 1 else np.ones((CHUNK, 1), np.int64)
        else:
            a = None
        tt = t + np.cumsum(gaps)
        keep = int(np.searchsorted(tt, horizon, side="right"))
        times.append(tt[:keep])
        us.append(u[:keep])
        if a is not None:
            auxs.append(a[:keep])
        if keep < CHUNK:
            break
        t = float(tt[-1])
    times = np.concatenate(times)
    us = np.concatenate(us)
    aux = np.concatenate(auxs) if auxs else np.zeros((len(times), 1), dtype=np.int64)
    return times, us, aux


def sample_updates(g: Graph | int, horizon: float, seed: int, kind: str = "hb",
                   policy: str = "mono", q: int = 2) -> UpdateSequence:
    """Merge the rate-one Poisson clocks of every site up to ``horizon``.

    ``g`` may be a graph or a site count.  ``q`` sizes the auxiliary
    randomness (permutations, Metropolis offsets).
    """
    n = g if isinstance(g, (int, np.integer)) else g.n_sites
    width = _aux_width(kind, policy, q)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    parts_t, parts_x, parts_u, parts_a = [], [], [], []
    if horizon > 0:
        for x in range(n):
            t, u, a = _site_events(seed, x, horizon, q, kind, policy)
            parts_t.append(t)
            parts_x.append(np.full(len(t), x, dtype=np.int64))
            parts_u.append(u)
            parts_a.append(a)
    if parts_t:
        times = np.concatenate(parts_t)
        sites = np.concatenate(parts_x)
        us = np.concatenate(parts_u)
        aux = np.concatenate(parts_a).astype(np.int64).reshape(len(times), width)
        order = np.lexsort((sites, times))
        times, sites, us, aux = times[order], sites[order], us[order], aux[order]
    else:
        times = np.zeros(0)
        sites = np.zeros(0, dtype=np.int64)
        us = np.zeros(0)
        aux = np.zeros((0, width), dtype=np.int64)
    return UpdateSequence(times, sites, us, np.ascontiguousarray(aux), seed, kind,
                          policy, float(horizon), int(n), int(q))


def replica_seed(seed: int, k: int) -> int:
    """Seed of replica ``k`` derived from a top-level seed."""
    return int(np.random.SeedSequence([int(seed), REPLICA_TAG, int(k)]).generate_state(
        1, dtype=np.uint64)[0])


def geometric_grid(t_max: float, points: int = 64, t_min: float | None = None) -> np.ndarray:
    """``points`` geometric times from ``t_min`` (default ``t_max/1000``) to
    ``t_max``, preceded by 0."""
    if t_min is None:
        t_min = t_max / 1000.0
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, points - 1)])


# ---------------------------------------------------------------------------
# Coupling floors
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def coupling_floor(m: SpinModel, budget: int = ZETA_EVAL_BUDGET) -> np.ndarray:
    """Per-spin floor used by the threshold policy.

    The minimum runs over every site and every assignment of any *subset* of
    its site neighbours, so the same floor is valid for ball-restricted chains
    whose outside bonds are severed.  For the usual models (ferromagnetic or
    antiferromagnetic pair potentials) it equals the floor over full
    neighbourhoods.
    """
    ptr, nbr, tid, tables, h_eff = m.kernel_arrays
    q = m.q
    floor = np.ones(q)
    seen = set()
    for x in range(m.n_sites):
        ids = tuple(sorted(int(t) for t in tid[ptr[x]:ptr[x + 1]]))
        key = (h_eff[x].tobytes(), ids)
        if key in seen:
            continue
        seen.add(key)
        rows = []
        count = 0
        uniform = len(set(ids)) <= 1
        if uniform:
            for j in range(len(ids) + 1):
                count += math.comb(q + j - 1, j)
        else:
            count = (q + 1) ** len(ids)
        if count > budget:
            raise ModelError(f"coupling floor at site {x} needs {count} evaluations (budget {budget})")
        if uniform:
            t = ids[0] if ids else None
            for j in range(len(ids) + 1):
                for eta in combinations_with_replacement(range(q), j):
                    lg = np.array(h_eff[x], dtype=float)
                    for s in eta:
                        lg += tables[t][:, s]
                    rows.append(lg)
        else:
            # q + 1 choices per bond: severed or one of the q spins
            for eta in product(range(q + 1), repeat=len(ids)):
                lg = np.array(h_eff[x], dtype=float)
                for t, s in zip(ids, eta):
                    if s < q:
                        lg += tables[t][:, s]
                rows.append(lg)
        lg = np.array(rows)
        top = lg.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            raise InfeasibleError("a neighbourhood leaves no feasible spin")
        p = np.exp(lg - top)
        p /= p.sum(axis=1, keepdims=True)
        floor = np.minimum(floor, p.min(axis=0))
    floor.setflags(write=False)
    return floor


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

def _policy_code(m: SpinModel, W: UpdateSequence) -> int:
    if W.kind == "mh":
        return K.MH
    if W.policy == "mono":
        return K.HB
    if W.policy == "thresh":
        return K.THRESH
    if m.kind != "coloring":
        raise PolicyError("the permutation policy applies to colourings only")
    return K.PERM


def _check_sequence(m: SpinModel, W: UpdateSequence) -> None:
    if W.n_sites != m.n_sites:
        raise ValueError(f"update sequence is for {W.n_sites} sites, model has {m.n_sites}")
    if W.q != m.q and (W.policy == "perm" or W.kind == "mh"):
        raise ValueError(f"update sequence alphabet size {W.q} != model alphabet size {m.q}")


def _floor_args(m: SpinModel, code: int):
    if code == K.THRESH:
        f = np.array(coupling_floor(m))
        z = float(f.sum())
        if z <= 0:
            raise PolicyError("threshold policy needs a positive floor mass")
        return f, min(z, 1.0)
    return np.zeros(m.q), 0.0


def _as_config(m: SpinModel, sigma) -> np.ndarray:
    sigma = np.array(sigma, dtype=np.int64).reshape(-1)
    if sigma.shape[0] != m.n_sites:
        raise ValueError(f"configuration has {sigma.shape[0]} entries, model has {m.n_sites} sites")
    if np.any((sigma < 0) | (sigma >= m.q)):
        raise ValueError("configuration entries must be spin indices")
    return sigma


def trajectory(m: SpinModel, sigma0, W: UpdateSequence, grid, allow_infeasible: bool = False):
    """Configurations at each time of ``grid`` (shape ``(len(grid), n_sites)``)."""
    _check_sequence(m, W)
    conf = _as_config(m, sigma0)
    if not allow_infeasible and not is_feasible(m, conf):
        raise InfeasibleError("start configuration is infeasible")
    code = _policy_code(m, W)
    floor, z = _floor_args(m, code)
    grid = np.asarray(grid, dtype=float)
    snaps = np.empty((len(grid), m.n_sites), dtype=np.int64)
    ptr, nbr, tid, tables, h = m.kernel_arrays
    bad = K.run_chain(conf, W.sites, W.u, W.aux, W.times, grid, snaps, code,
                      ptr, nbr, tid, tables, h, floor, z)
    if bad >= 0:
        raise InfeasibleError(f"update {bad} at site {int(W.sites[bad])} has no feasible spin")
    return snaps


def evolve(m: SpinModel, sigma0, W: UpdateSequence, allow_infeasible: bool = False) -> np.ndarray:
    """Configuration after applying every update of ``W`` to ``sigma0``.

    ``allow_infeasible`` lets exhaustive oracles push infeasible starts
    through the same map (a site with no feasible spin is then an error).
    """
    return trajectory(m, sigma0, W, [W.horizon], allow_infeasible)[0]


def update_law(m: SpinModel, sigma, x: int, kind: str = "hb", policy: str = "mono",
               resolution: int = 2 ** 14) -> np.ndarray:
    """Law of the new spin at ``x`` after one update event of the compiled
    kernel, from configuration ``sigma``.

    The uniform is integrated on a midpoint grid of ``resolution`` cells, so
    each breakpoint of the inverse CDF costs at most ``1/resolution`` of
    mass; auxiliary draws (permutations, Metropolis offsets) are summed
    exactly.
    """
    conf = _as_config(m, sigma)
    q = m.q
    width = _aux_width(kind, policy, q)
    W = UpdateSequence.from_events([], m.n_sites, q, kind, policy, 0.0)
    code = _policy_code(m, W)
    floor, z = _floor_args(m, code)
    if code == K.PERM:
        auxes = np.array(list(permutations(range(q))), dtype=np.int64)
        resolution = 1
    elif code == K.MH:
        auxes = np.arange(1, q, dtype=np.int64).reshape(-1, 1) if q > 1 else np.ones((1, 1), np.int64)
    else:
        auxes = np.zeros((1, width), dtype=np.int64)
    grid = (np.arange(resolution) + 0.5) / resolution
    us = np.tile(grid, len(auxes))
    aux = np.ascontiguousarray(np.repeat(auxes, resolution, axis=0))
    ptr, nbr, tid, tables, h = m.kernel_arrays
    counts = K.single_update_counts(int(x), conf, us, aux, code, ptr, nbr, tid, tables, h, floor, z)
    if counts[q]:
        raise InfeasibleError(f"site {x} has no feasible spin")
    return counts[:q] / counts.sum()


# ---------------------------------------------------------------------------
# Grand couplings
# ---------------------------------------------------------------------------

@dataclass
class EnvelopeState:
    """Bounding state of a grand coupling.

    ``value[v]`` is the common spin index at ``v`` or ``-1`` (unknown).  In
    monotone mode ``lower``/``upper`` hold the extreme chains; in
    permutation mode ``sets`` holds the possible colours as bitmasks.
    """

    mode: str
    value: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sets: np.ndarray | None = None

    @property
    def unknown(self) -> np.ndarray:
        return self.value < 0

    @property
    def unknown_fraction(self) -> float:
        return float(self.unknown.mean()) if len(self.value) else 0.0


@dataclass
class GrandResult:
    envelope: EnvelopeState
    grid: np.ndarray
    unknown: np.ndarray                # (len(grid), n_sites) bool
    configs: np.ndarray                # explicit chains, final state
    violations: int                    # sandwich breaks / false-determined sites
    coalescence_time: float

    @property
    def unknown_fraction(self) -> np.ndarray:
        return self.unknown.mean(axis=1)


def _grand_policy(m: SpinModel, policy: str) -> str:
    if policy in ("monotone", "mono"):
        if not m.is_monotone:
            raise PolicyError("monotone coupling needs an attractive two-spin model")
        return "mono"
    if policy in ("threshold", "thresh"):
        return "thresh"
    if policy in ("permutation", "perm"):
        if m.kind != "coloring":
            raise PolicyError("the permutation policy applies to colourings only")
        return "perm"
    raise PolicyError(f"unknown grand-coupling policy {policy!r}")


def grand_evolve(m: SpinModel, W: UpdateSequence, policy: str | None = None,
                 configs=None, grid=None, allow_infeasible: bool = False) -> GrandResult:
    """Run the grand coupling of ``policy`` (default: the sequence's policy)
    from all initial conditions, alongside explicit chains ``configs``.

    Explicit chains follow the same update rule as :func:`evolve` under that
    policy; ``violations`` counts sandwich breaks (monotone) or sites marked
    determined whose explicit value disagrees (bounding policies).
    """
    if W.kind != "hb":
        raise PolicyError("grand couplings are defined for heat-bath sequences")
    _check_sequence(m, W)
    mode = _grand_policy(m, policy or W.policy)
    if mode == "perm" and W.policy != "perm":
        raise PolicyError("permutation coupling needs a sequence carrying permutations")
    n, q = m.n_sites, m.q
    if configs is None:
        X = np.zeros((0, n), dtype=np.int64)
    else:
        X = np.array([_as_config(m, c) for c in configs], dtype=np.int64).reshape(-1, n)
        if not allow_infeasible:
            for c in X:
                if not is_feasible(m, c):
                    raise InfeasibleError("explicit start configuration is infeasible")
    grid = np.asarray([W.horizon] if grid is None else grid, dtype=float)
    snaps = np.zeros((len(grid), n), dtype=np.bool_)
    ptr, nbr, tid, tables, h = m.kernel_arrays
    if mode == "mono":
        lo = np.zeros(n, dtype=np.int64)
        up = np.full(n, q - 1, dtype=np.int64)
        viol, coal = K.grand_monotone(lo, up, X, W.sites, W.u, W.aux, W.times, grid, snaps,
                                      ptr, nbr, tid, tables, h)
        val = np.where(lo == up, lo, -1)
        env = EnvelopeState("mono", val, lower=lo, upper=up)
    elif mode == "thresh":
        floor, z = _floor_args(m, K.THRESH)
        val = np.full(n, -1, dtype=np.int64)
        viol, coal = K.grand_threshold(val, X, W.sites, W.u, W.aux, W.times, grid, snaps,
                                       ptr, nbr, tid, tables, h, floor, z)
        env = EnvelopeState("thresh", val)
    else:
        if q > 62:
            raise PolicyError("permutation coupling supports at most 62 colours")
        sets = np.full(n, (1 << q) - 1, dtype=np.int64)
        viol, coal = K.grand_permutation(sets, X, W.sites, W.u, W.aux, W.times, grid, snaps,
                                         ptr, nbr, tid, tables, h)
        val = np.array([_single(s) for s in sets], dtype=np.int64)
        env = EnvelopeState("perm", val, sets=sets)
    return GrandResult(env, grid, snaps, X, int(viol), float(coal))


def _single(mask: int) -> int:
    mask = int(mask)
    if mask and mask & (mask - 1) == 0:
        return mask.bit_length() - 1
    return -1


def disagreement_curve(m: SpinModel, W: UpdateSequence, policy: str | None = None, grid=None):
    """Unknown fraction and per-site unknown indicator at each grid time.

    Exact disagreement process for the monotone policy, a pointwise superset
    of it for the bounding policies.
    """
    if grid is None:
        grid = geometric_grid(W.horizon) if W.horizon > 0 else np.zeros(1)
    res = grand_evolve(m, W, policy, grid=grid)
    return res.unknown_fraction, res.unknown


# ---------------------------------------------------------------------------
# Contact process
# ---------------------------------------------------------------------------

def simulate_contact(g: Graph, zeta: float, horizon: float, seed: int, grid=None,
                     infect: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Contact process from all-infected: heal clocks of rate ``zeta`` per
    site, infection clocks of rate ``infect`` (default ``1 - zeta``) per edge.

    Returns ``(grid, infected counts)``.
    """
    if not 0 < zeta <= 1:
        raise ValueError("heal rate zeta must lie in (0, 1]")
    infect = 1.0 - zeta if infect is None else float(infect)
    if grid is None:
        grid = np.linspace(0.0, horizon, 65)
    grid = np.asarray(grid, dtype=float)
    ptr, idx = g.site_csr()
    src = np.repeat(np.arange(g.n_sites), np.diff(ptr))
    keep = src < idx
    eu = src[keep].astype(np.int64)
    ev = idx[keep].astype(np.int64)
    counts = np.zeros(len(grid), dtype=np.int64)
    inner = int(np.random.SeedSequence([int(seed), CONTACT_TAG]).generate_state(1)[0])
    K.contact_run(inner, g.n_sites, eu, ev, float(zeta), infect, grid, counts)
    return grid, counts


def contact_bound(n: int, d_or_delta: int, zeta: float, t, lattice_dim: bool = True):
    """Mean-infected bound ``n exp(-(2d+1)(zeta - 2d/(2d+1)) t)``.

    With ``lattice_dim=False`` the second argument is the degree ``Delta``
    and the exponent is ``(Delta+1)(zeta - Delta/(Delta+1))``.
    """
    deg = 2 * d_or_delta if lattice_dim else d_or_delta
    rate = (deg + 1) * (zeta - deg / (deg + 1))
    return n * np.exp(-rate * np.asarray(t, dtype=float))


# ---------------------------------------------------------------------------
# Replicas and coupling bounds
# ---------------------------------------------------------------------------

def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def run_replicas(fn: Callable, seed: int, replicas: int, workers: int = 1) -> list:
    """``[fn(replica_seed(seed, k)) for k in range(replicas)]``, in replica
    order, optionally on a process pool (``fn`` must be picklable)."""
    seeds = [replica_seed(seed, k) for k in range(replicas)]
    return _pool_map(fn, seeds, workers)


@dataclass
class _CoalescenceJob:
    model: SpinModel
    horizon: float
    policy: str

    def __call__(self, seed: int) -> float:
        pol = _grand_policy(self.model, self.policy)
        W = sample_updates(self.model.graph, self.horizon, seed, "hb", pol, self.model.q)
        return grand_evolve(self.model, W, pol).coalescence_time


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def coupling_tv_upper(m: SpinModel, grid, replicas: int, seed: int, policy: str = "mono",
                      workers: int = 1, level: float = 0.95) -> dict:
    """Coupling-inequality upper bound on the worst-start TV distance.

    Estimates ``P(grand coupling not coalesced by t)`` from ``replicas``
    independent update sequences.  Returns ``{'grid', 'estimate', 'lower',
    'upper', 'times'}`` with Clopper-Pearson limits at ``level``.
    """
    grid = np.asarray(grid, dtype=float)
    _grand_policy(m, policy)
    horizon = float(grid.max()) if len(grid) else 0.0
    times = np.array(run_replicas(_CoalescenceJob(m, horizon, policy), seed, replicas, workers))
    not_coal = (times[None, :] > grid[:, None]).sum(axis=1)
    est = not_coal / replicas
    ci = [clopper_pearson(int(k), replicas, level) for k in not_coal]
    return {
        "grid": grid,
        "estimate": est,
        "lower": np.array([c[0] for c in ci]),
        "upper": np.array([c[1] for c in ci]),
        "times": times,
    }
