"""Exact and estimated mixing quantities.

Small systems are handled exactly: the generator over all feasible
configurations, heat kernels by uniformisation, TV/L2/L-infinity distances,
the spectral gap and an optimisation-based log-Sobolev estimate.  Product
chains and the hypercube have closed forms.  Larger systems get Monte Carlo
brackets on the mixing time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import eigsh
from scipy.stats import binom, poisson

from .dynamics import (
    PolicyError,
    _grand_policy,
    clopper_pearson,
    coupling_tv_upper,
    replica_seed,
    sample_updates,
    trajectory,
)
from .graph import BlockSpec, build_block
from .model import (
    GIBBS_STATE_BUDGET,
    ModelError,
    SpinModel,
    all_states,
    canonical_start,
    gibbs_enumerate,
    make_ising,
)

__all__ = [
    "GeneratorMatrix",
    "MixingCurve",
    "CutoffReport",
    "LogSobolevEstimate",
    "TmixBracket",
    "BlockProfile",
    "build_generator",
    "stationary_from_generator",
    "heat_kernel",
    "heat_kernel_curve",
    "distances",
    "spectral_gap",
    "log_sobolev_estimate",
    "two_point_log_sobolev",
    "check_ls_bound",
    "exact_curve",
    "product_M",
    "product_tv_bound",
    "product_tv_asymptotic",
    "product_tv_exact",
    "normal_cdf",
    "hypercube_tv_exact",
    "hypercube_profile",
    "iid_two_state_tv",
    "product_cutoff_predict",
    "plus_cutoff_predict",
    "plus_cutoff_forms",
    "block_profile",
    "tmix_bracket",
    "tmix_from_curve",
    "cutoff_report",
]

GENERATOR_BUDGET = 2 ** 16
DENSE_EIG_LIMIT = 4096
UNIFORMIZATION_TOL = 1e-12
REVERSIBILITY_TOL = 1e-10


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Rate matrix over the feasible configurations of a model.

    ``states[i]`` is the configuration of row ``i`` (spin indices); rows are
    ordered by their base-``q`` key with site 0 most significant.
    """

    states: np.ndarray
    Q: sp.csr_matrix
    pi: np.ndarray
    q: int
    kind: str = "hb"

    @property
    def N(self) -> int:
        return len(self.pi)

    @cached_property
    def keys(self) -> np.ndarray:
        n = self.states.shape[1]
        w = self.q ** np.arange(n - 1, -1, -1, dtype=np.int64)
        return self.states.astype(np.int64) @ w

    def index(self, sigma) -> int:
        n = self.states.shape[1]
        w = self.q ** np.arange(n - 1, -1, -1, dtype=np.int64)
        key = int(np.asarray(sigma, dtype=np.int64) @ w)
        i = int(np.searchsorted(self.keys, key))
        if i >= self.N or self.keys[i] != key:
            raise ModelError("configuration is not a feasible state")
        return i

    def point_mass(self, i: int) -> np.ndarray:
        v = np.zeros(self.N)
        v[i] = 1.0
        return v

    @cached_property
    def max_rate(self) -> float:
        return float(-self.Q.diagonal().min()) if self.N else 0.0


def build_generator(m: SpinModel, kind: str = "hb", budget: int = GENERATOR_BUDGET) -> GeneratorMatrix:
    """Glauber generator with rate-one clocks.

    Heat-bath: the rate from ``sigma`` to ``sigma^{x,s}`` is the conditional
    probability of ``s`` at ``x``.  Metropolis: a uniformly chosen other spin
    is proposed and accepted with probability ``min(1, pi ratio)``.
    """
    if kind not in ("hb", "mh"):
        raise ValueError(f"unknown dynamics kind {kind!r}")
    n, q = m.n_sites, m.q
    if q ** n > budget:
        raise ModelError(f"{q ** n} configurations exceed the generator budget {budget}")
    states, probs = gibbs_enumerate(m, budget=max(budget, GIBBS_STATE_BUDGET))
    feas = probs > 0
    states = states[feas].astype(np.int64)
    pi = probs[feas]
    pi = pi / pi.sum()
    N = len(pi)
    w = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keys = states @ w
    ptr, nbr, tid, tables, h = m.kernel_arrays
    rows, cols, vals = [], [], []
    for x in range(n):
        lg = np.tile(h[x], (N, 1))
        for k in range(ptr[x], ptr[x + 1]):
            lg += tables[tid[k]][:, states[:, nbr[k]]].T
        cur = states[:, x]
        if kind == "hb":
            top = lg.max(axis=1, keepdims=True)
            p = np.exp(lg - top)
            p /= p.sum(axis=1, keepdims=True)
        for s in range(q):
            move = cur != s
            if kind == "hb":
                rate = p[:, s]
            else:
                with np.errstate(invalid="ignore", over="ignore"):
                    ratio = np.exp(lg[:, s] - lg[np.arange(N), cur])
                rate = np.minimum(1.0, np.nan_to_num(ratio, nan=0.0)) / (q - 1)
            ok = move & (rate > 0)
            if not np.any(ok):
                continue
            src = np.flatnonzero(ok)
            tgt_keys = keys[src] + (s - cur[src]) * w[x]
            tgt = np.searchsorted(keys, tgt_keys)
            rows.append(src)
            cols.append(tgt)
            vals.append(rate[src])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    off = sp.csr_matrix((v, (r, c)), shape=(N, N))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    Q = (off + sp.diags(diag)).tocsr()
    Q.sort_indices()
    return GeneratorMatrix(states, Q, pi, q, kind)


def stationary_from_generator(Q) -> np.ndarray:
    """Normalised left null vector of ``Q``."""
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    N = Qd.shape[0]
    A = np.vstack([Qd.T, np.ones(N)])
    b = np.zeros(N + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def _check_reversible(G: GeneratorMatrix) -> None:
    F = sp.diags(G.pi) @ G.Q
    asym = abs(F - F.T).max() if F.nnz else 0.0
    if asym > REVERSIBILITY_TOL:
        raise ValueError(f"generator is not reversible (detailed-balance defect {asym:.3g})")


# ---------------------------------------------------------------------------
# Heat kernels and distances
# ---------------------------------------------------------------------------

def _as_generator(G) -> tuple[sp.csr_matrix, float]:
    Q = G.Q if isinstance(G, GeneratorMatrix) else sp.csr_matrix(G)
    lam = float(-Q.diagonal().min()) if Q.shape[0] else 0.0
    return Q, lam


def heat_kernel(G, init, t: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """``init @ expm(t Q)`` by uniformisation.

    ``init`` is a distribution (or a stack of them, one per row).  The
    Poisson series is cut once the neglected mass is below ``tol``.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    Q, lam = _as_generator(G)
    v = np.array(init, dtype=float)
    if t == 0 or lam == 0:
        return v
    P = (sp.identity(Q.shape[0], format="csr") + Q / lam).tocsr()
    PT = P.T.tocsr()
    mu = lam * t
    kmax = int(poisson.isf(tol, mu)) + 1
    weights = poisson.pmf(np.arange(kmax + 1), mu)
    out = weights[0] * v
    cur = v
    for k in range(1, kmax + 1):
        cur = (PT @ cur.T).T
        if weights[k] > 0:
            out = out + weights[k] * cur
    return out


def heat_kernel_curve(G, init, grid, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """Distributions at every time of an increasing ``grid``; output has the
    grid as leading axis."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be nondecreasing")
    out = []
    v = np.array(init, dtype=float)
    t_prev = 0.0
    for t in grid:
        v = heat_kernel(G, v, t - t_prev, tol)
        t_prev = t
        out.append(v)
    return np.array(out)


def distances(nu, pi) -> tuple[float, float, float]:
    """``(TV, L2(pi), Linf(pi))`` between ``nu`` and ``pi``.

    Works on the last axis, so stacks of distributions give stacks of
    distances.
    """
    nu = np.asarray(nu, dtype=float)
    pi = np.asarray(pi, dtype=float)
    supp = pi > 0
    if np.any(np.abs(nu[..., ~supp]) > 1e-15):
        raise ValueError("nu puts mass outside the support of pi")
    tv = 0.5 * np.abs(nu - pi).sum(axis=-1)
    ratio = nu[..., supp] / pi[supp] - 1.0
    l2 = np.sqrt((ratio ** 2 * pi[supp]).sum(axis=-1))
    linf = np.abs(ratio).max(axis=-1)
    if np.ndim(tv) == 0:
        return float(tv), float(l2), float(linf)
    return tv, l2, linf


@dataclass
class MixingCurve:
    """Distance-versus-time samples.

    Exact curves fill ``tv``, ``l2`` and ``linf`` (worst over ``starts``);
    empirical ones fill ``lower``/``upper`` at ``level``.
    """

    grid: np.ndarray
    tv: np.ndarray | None = None
    l2: np.ndarray | None = None
    linf: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    level: float | None = None
    starts: str = ""

    def rows(self) -> list[dict]:
        out = []
        for i, t in enumerate(self.grid):
            row = {"t": float(t)}
            for name in ("tv", "l2", "linf", "lower", "upper"):
                arr = getattr(self, name)
                if arr is not None:
                    row[name] = float(arr[i])
            out.append(row)
        return out


def _start_set(G: GeneratorMatrix, m: SpinModel | None, starts) -> tuple[np.ndarray, str]:
    if starts is not None and not isinstance(starts, str):
        return np.asarray(starts, dtype=np.int64), "given"
    n_sites = G.states.shape[1]
    if starts == "extreme" or (starts is None and m is not None and m.is_monotone):
        lo = G.index(np.zeros(n_sites, dtype=np.int64))
        hi = G.index(np.full(n_sites, G.q - 1, dtype=np.int64))
        return np.array(sorted({lo, hi})), "extreme"
    if starts == "all" or (starts is None and n_sites <= 12):
        return np.arange(G.N), "all"
    # fall back to a documented deterministic subset
    pick = np.unique(np.linspace(0, G.N - 1, 64).astype(np.int64))
    return pick, "tested"


def exact_curve(G: GeneratorMatrix, grid, starts=None, model: SpinModel | None = None) -> MixingCurve:
    """Worst-start TV, L2 and L-infinity distances on ``grid``.

    ``starts`` is an index array, ``'all'``, ``'extreme'`` (all-lowest and
    all-highest spins; exact worst case for monotone systems) or ``None`` to
    choose: extremes for monotone models, every start up to 12 sites,
    otherwise a fixed spread of 64 starts labelled ``'tested'``.
    """
    idx, label = _start_set(G, model, starts)
    init = np.zeros((len(idx), G.N))
    init[np.arange(len(idx)), idx] = 1.0
    dists = heat_kernel_curve(G, init, grid)
    tv, l2, linf = distances(dists, G.pi)
    return MixingCurve(np.asarray(grid, float), tv.max(axis=1), l2.max(axis=1),
                       linf.max(axis=1), starts=label)


# ---------------------------------------------------------------------------
# Spectral gap and log-Sobolev
# ---------------------------------------------------------------------------

def _symmetrised(G: GeneratorMatrix) -> sp.csr_matrix:
    d = np.sqrt(G.pi)
    S = sp.diags(d) @ G.Q @ sp.diags(1.0 / d)
    return ((S + S.T) * 0.5).tocsr()


def spectral_gap(G: GeneratorMatrix, return_vector: bool = False):
    """Second-smallest eigenvalue of ``-Q`` (under pi-symmetrisation)."""
    _check_reversible(G)
    if G.N < 2:
        raise ValueError("spectral gap needs at least two states")
    S = _symmetrised(G)
    if G.N <= DENSE_EIG_LIMIT:
        vals, vecs = np.linalg.eigh(-S.toarray())
        gap, vec = float(vals[1]), vecs[:, 1]
    else:
        # largest eigenvalues of c I + S are the smallest of -S
        c = G.max_rate
        shifted = (sp.identity(G.N, format="csr") * c + S).tocsr()
        vals, vecs = eigsh(shifted, k=2, which="LA", tol=1e-13)
        order = np.argsort(vals)[::-1]
        gap, vec = float(c - vals[order[1]]), vecs[:, order[1]]
    if return_vector:
        # eigenfunction of Q in L2(pi)
        return gap, vec / np.sqrt(G.pi)
    return gap


@dataclass
class LogSobolevEstimate:
    """Upper estimate of the log-Sobolev constant with sanity checks."""

    alpha: float
    gap: float
    best_ratio: float
    certificate: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.certificate.values())


def _dirichlet_matrix(G: GeneratorMatrix) -> sp.csr_matrix:
    A = sp.diags(G.pi) @ (-G.Q)
    return ((A + A.T) * 0.5).tocsr()


def _entropy_terms(g: np.ndarray) -> np.ndarray:
    """``g log g - g + 1`` without cancellation near ``g = 1``."""
    d = g - 1.0
    small = np.abs(d) < 1e-2
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.where(g > 0, g * np.log(np.where(g > 0, g, 1.0)), 0.0) - d
    series = d * d * (0.5 - d * (1.0 / 6 - d * (1.0 / 12 - d / 20)))
    return np.where(small, series, big)


# functions this close to a constant are covered by the gap / 2 limit
NEAR_CONSTANT = 1e-3


def _ratio_and_grad(f, A, pi):
    f2 = f * f
    mass = float(pi @ f2)
    if not mass > 0:
        return math.inf, np.zeros_like(f)
    g = f2 / mass
    if np.max(np.abs(g - 1.0)) < NEAR_CONSTANT:
        return math.inf, np.zeros_like(f)
    Af = A @ f
    E = float(f @ Af)
    ent = mass * float(pi @ _entropy_terms(g))
    if ent <= 0:
        return math.inf, np.zeros_like(f)
    R = E / ent
    with np.errstate(divide="ignore"):
        logg = np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), 0.0)
    gE = 2.0 * Af
    gEnt = 2.0 * pi * f * logg
    return R, (gE - R * gEnt) / ent


def two_point_log_sobolev(a: float, b: float) -> float:
    """Log-Sobolev constant of the two-state chain with rates ``a`` (0 to 1)
    and ``b`` (1 to 0)."""
    theta = min(a, b) / (a + b)
    if abs(theta - 0.5) < 1e-12:
        return 0.5 * (a + b)
    return (a + b) * (1 - 2 * theta) / math.log((1 - theta) / theta)


def log_sobolev_estimate(G: GeneratorMatrix, restarts: int = 32, seed: int = 0) -> LogSobolevEstimate:
    """Minimise ``E(f, f) / Ent(f^2)`` from ``restarts`` random starts.

    Perturbations of constants along the gap eigenfunction approach
    ``gap / 2``, which is therefore included as a candidate.  The result is
    an upper estimate of the true constant, never a certified value.
    """
    gap, vec = spectral_gap(G, return_vector=True)
    A = _dirichlet_matrix(G)
    pi = G.pi
    rng = np.random.default_rng(seed)
    best = math.inf
    starts = []
    vec = vec / np.sqrt(pi @ vec ** 2)
    for eps in (0.5, 1.0, 2.0, 4.0):
        starts.append(1.0 + eps * vec)
    while len(starts) < restarts:
        kind = len(starts) % 3
        if kind == 0:
            starts.append(rng.exponential(size=G.N))
        elif kind == 1:
            starts.append(np.exp(rng.normal(scale=2.0, size=G.N)))
        else:
            f = np.full(G.N, 1e-3)
            f[rng.integers(G.N)] = 1.0
            starts.append(f)
    for f0 in starts[:restarts]:
        res = minimize(_ratio_and_grad, f0, args=(A, pi), jac=True, method="L-BFGS-B",
                       options={"maxiter": 500, "gtol": 1e-12, "ftol": 1e-15})
        val = _ratio_and_grad(res.x, A, pi)[0]
        best = min(best, val)
    alpha = min(best, gap / 2.0)
    cert = {"positive": alpha > 0, "two_alpha_le_gap": 2 * alpha <= gap * (1 + 1e-9), "gap_le_one": gap <= 1 + 1e-9}
    if G.N == 2:
        a = float(G.Q[0, 1])
        b = float(G.Q[1, 0])
        closed = two_point_log_sobolev(a, b)
        cert["two_point_closed_form"] = abs(alpha - closed) <= 1e-6
    return LogSobolevEstimate(alpha, gap, best, cert)


def check_ls_bound(G: GeneratorMatrix, start: int, s: float, alpha: float | None = None,
                   gap: float | None = None) -> dict:
    """Check ``L2`` distance from ``start`` at
    ``t = |log log(1/pi(start))|^+ / (4 alpha) + s / gap`` against ``e^(1-s)``.

    Without an explicit ``alpha`` the optimisation estimate is used; being an
    upper estimate it shortens ``t`` and makes the check conservative.
    """
    if gap is None:
        gap = spectral_gap(G)
    if alpha is None:
        alpha = log_sobolev_estimate(G).alpha
    p0 = float(G.pi[start])
    ll = math.log(math.log(1.0 / p0)) if p0 < math.exp(-1) else 0.0
    t = max(ll, 0.0) / (4.0 * alpha) + s / gap
    nu = heat_kernel(G, G.point_mass(start), t)
    _, l2, _ = distances(nu, G.pi)
    bound = math.exp(1.0 - s)
    return {"holds": l2 <= bound, "margin": bound - l2, "t": t, "l2": l2, "bound": bound,
            "alpha": alpha, "gap": gap}


# ---------------------------------------------------------------------------
# Products and the hypercube
# ---------------------------------------------------------------------------

def normal_cdf(x):
    """Standard normal CDF."""
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x, dtype=float) / math.sqrt(2.0)))


def product_M(l2_distances: Sequence[float]) -> float:
    """Sum of squared component L2 distances."""
    d = np.asarray(l2_distances, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    return float((d ** 2).sum())


def product_tv_bound(M: float) -> float:
    return math.sqrt(M)


def product_tv_asymptotic(M: float) -> float:
    """``2 Phi(sqrt(M)/2) - 1``, evaluated as ``erf(sqrt(M/8))``."""
    return math.erf(math.sqrt(M / 8.0))


def product_tv_exact(components: Sequence[tuple]) -> float:
    """Exact TV between the products of ``(nu_i, pi_i)`` pairs."""
    nu = np.ones(1)
    pi = np.ones(1)
    for a, b in components:
        nu = np.multiply.outer(nu, np.asarray(a, float)).ravel()
        pi = np.multiply.outer(pi, np.asarray(b, float)).ravel()
    return 0.5 * float(np.abs(nu - pi).sum())


def iid_two_state_tv(n: int, p: float) -> float:
    """TV between ``n`` i.i.d. copies of ``(1-p, p)`` and the uniform
    product, by collapsing on the number of ones."""
    k = np.arange(n + 1)
    return 0.5 * float(np.abs(binom.pmf(k, n, p) - binom.pmf(k, n, 0.5)).sum())


def hypercube_tv_exact(n: int, t: float) -> float:
    """Exact TV of the continuous-time hypercube walk at time ``t``.

    Each coordinate differs from its start independently with probability
    ``(1 - exp(-2t/n)) / 2``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    p = 0.5 * (1.0 - math.exp(-2.0 * t / n))
    return iid_two_state_tv(n, p)


def hypercube_profile(n: int, cs) -> list[dict]:
    """Exact TV at ``t = n log(n)/4 + c n`` next to ``erf(exp(-2c)/sqrt(8))``."""
    rows = []
    for c in np.asarray(cs, dtype=float):
        t = float(0.25 * n * math.log(n) + c * n)
        rows.append({
            "c": float(c), "t": t, "tv": hypercube_tv_exact(n, t),
            "erf": math.erf(math.exp(-2.0 * c) / math.sqrt(8.0)),
        })
    return rows


def _loglog_plus(x: float) -> float:
    """``max(log log x, 0)``, which is zero for ``x <= e``."""
    if x <= math.e:
        return 0.0
    return max(math.log(math.log(x)), 0.0)


def product_cutoff_predict(gap: float, alpha: float, phi_min: float, n: float) -> tuple[float, float]:
    """Cutoff location ``log n / (2 gap)`` and window
    ``1/gap + |log log(1/phi_min)|^+ / alpha`` (unit constant)."""
    if not (gap > 0 and alpha > 0):
        raise ValueError("gap and alpha must be positive")
    loc = math.log(n) / (2.0 * gap)
    win = 1.0 / gap + _loglog_plus(1.0 / phi_min) / alpha
    return loc, win


def plus_cutoff_predict(d: int, n: float, lams: Sequence[float]) -> float:
    """Cutoff location ``max_j (d - j) / lambda_j * log(n) / 2`` over
    ``j = 0..d-1``."""
    lams = list(lams)
    if len(lams) < d:
        raise ValueError(f"need {d} block gaps, got {len(lams)}")
    if any(not lam > 0 for lam in lams[:d]):
        raise ValueError("block gaps must be positive")
    return 0.5 * max((d - j) / lams[j] for j in range(d)) * math.log(n)


def plus_cutoff_forms(d: int, n: float, lams: Sequence[float]) -> dict:
    """The three readings of the plus-boundary location, for comparison:
    ``half_max_ratio`` (the one :func:`plus_cutoff_predict` uses),
    ``half_max_product`` (``max_j (d-j) lambda_j log(n) / 2``) and
    ``min_ratio`` (``min_j (d-j) / lambda_j * log n``)."""
    ln = math.log(n)
    lams = list(lams)[:d]
    return {
        "half_max_ratio": plus_cutoff_predict(d, n, lams),
        "half_max_product": 0.5 * max((d - j) * lams[j] for j in range(d)) * ln,
        "min_ratio": min((d - j) / lams[j] for j in range(d)) * ln,
    }


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

@dataclass
class BlockProfile:
    spec: BlockSpec
    grid: np.ndarray
    m_t: np.ndarray
    lam: float
    starts: str
    inner_block: tuple


def _marginal(states: np.ndarray, dist: np.ndarray, sites: Sequence[int], q: int) -> np.ndarray:
    sites = list(sites)
    w = q ** np.arange(len(sites) - 1, -1, -1, dtype=np.int64)
    keys = states[:, sites].astype(np.int64) @ w
    if dist.ndim == 1:
        return np.bincount(keys, weights=dist, minlength=q ** len(sites))
    return np.stack([np.bincount(keys, weights=row, minlength=q ** len(sites)) for row in dist])


def block_profile(spec: BlockSpec, beta: float, grid, h: float = 0.0, kind: str = "hb",
                  starts=None, budget: int = GENERATOR_BUDGET) -> BlockProfile:
    """Squared L2 distance of the inner-block projection (worst start) and
    the block gap for the Ising model on the mixed-boundary block.

    Blocks smaller than the usual minimum side are accepted here, since only
    tiny blocks can be handled exactly.
    """
    g = build_block(spec, allow_small=True)
    m = make_ising(g, beta, h)
    if m.q ** m.n_sites > budget:
        raise ModelError(
            f"block with {m.n_sites} sites is too large for exact evaluation "
            "(sampling-based L2 estimates are not provided)")
    G = build_generator(m, kind, budget)
    idx, label = _start_set(G, m, starts)
    init = np.zeros((len(idx), G.N))
    init[np.arange(len(idx)), idx] = 1.0
    grid = np.asarray(grid, dtype=float)
    dists = heat_kernel_curve(G, init, grid)
    inner = g.inner_block
    pi_b = _marginal(G.states, G.pi, inner, G.q)
    m_t = np.empty(len(grid))
    for k in range(len(grid)):
        nu_b = _marginal(G.states, dists[k], inner, G.q)
        _, l2, _ = distances(nu_b, pi_b)
        m_t[k] = float(np.max(np.asarray(l2) ** 2))
    lam = spectral_gap(G)
    return BlockProfile(spec, grid, m_t, lam, label, inner)


# ---------------------------------------------------------------------------
# Mixing-time brackets
# ---------------------------------------------------------------------------

@dataclass
class TmixBracket:
    lower: float
    upper: float
    eps: float
    mode: str
    level: float | None = None
    starts: str = ""
    details: dict = field(default_factory=dict)


def _worst_tv(G: GeneratorMatrix, dists: np.ndarray) -> float:
    tv, _, _ = distances(dists, G.pi)
    return float(np.max(tv))


def _exact_tmix(G: GeneratorMatrix, idx: np.ndarray, eps: float, rtol: float = 1e-9) -> tuple[float, float]:
    init = np.zeros((len(idx), G.N))
    init[np.arange(len(idx)), idx] = 1.0
    if _worst_tv(G, init) <= eps:
        return 0.0, 0.0
    lo, v_lo = 0.0, init
    step = 1.0 / max(G.max_rate, 1e-12)
    hi = step
    v_hi = heat_kernel(G, v_lo, hi)
    while _worst_tv(G, v_hi) > eps:
        lo, v_lo = hi, v_hi
        hi *= 2.0
        v_hi = heat_kernel(G, v_lo, hi - lo)
        if hi > 1e9:
            raise RuntimeError("TV does not reach eps")
    while hi - lo > rtol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        v_mid = heat_kernel(G, v_lo, mid - lo)
        if _worst_tv(G, v_mid) > eps:
            lo, v_lo = mid, v_mid
        else:
            hi = mid
    return lo, hi


def tmix_from_curve(grid, tv, eps: float) -> float:
    """First grid time at which ``tv <= eps`` (``inf`` if never)."""
    grid = np.asarray(grid, float)
    ok = np.flatnonzero(np.asarray(tv) <= eps)
    return float(grid[ok[0]]) if len(ok) else math.inf


def _events(m: SpinModel):
    """Pre-registered projection events: magnetisation-type thresholds on
    the number of sites holding the top spin, and single-site spins."""
    n = m.n_sites
    ev = [("count_ge", k) for k in range(1, n + 1)]
    ev += [("site", (x, s)) for x in range(n) for s in range(m.q)]
    return ev


def _event_hits(kind, arg, confs: np.ndarray, q: int) -> np.ndarray:
    if kind == "count_ge":
        return (confs == q - 1).sum(axis=1) >= arg
    x, s = arg
    return confs[:, x] == s


def tmix_bracket(m: SpinModel, eps: float, mode: str = "exact", kind: str = "hb", *,
                 grid=None, replicas: int = 400, seed: int = 0, level: float = 0.95,
                 starts=None, workers: int = 1, reference_time: float | None = None,
                 budget: int = GENERATOR_BUDGET) -> TmixBracket:
    """Bracket ``[lower, upper]`` on ``t_mix(eps)``.

    ``exact``: bisection on the exact worst-start TV curve.  ``empirical``:
    the upper end is the first grid time at which the coupling bound's upper
    confidence limit drops to ``eps``; the lower end is the last grid time
    at which some pre-registered projection event separates the chain from
    stationarity by more than ``eps`` at the lower confidence limit
    (Bonferroni over events, starts and times).
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if mode == "exact":
        G = build_generator(m, kind, budget)
        idx, label = _start_set(G, m, starts)
        lo, hi = _exact_tmix(G, idx, eps)
        return TmixBracket(lo, hi, eps, "exact", None, label)
    if mode != "empirical":
        raise ValueError(f"unknown mode {mode!r}")
    if kind != "hb":
        raise PolicyError("empirical brackets use heat-bath grand couplings")
    if grid is None:
        raise ValueError("empirical mode needs a time grid")
    grid = np.asarray(grid, dtype=float)
    policy = "mono" if m.is_monotone else ("perm" if m.kind == "coloring" else "thresh")
    _grand_policy(m, policy)
    half = (1 - level) / 2
    cup = coupling_tv_upper(m, grid, replicas, seed, policy, workers, level=1 - half)
    ok = np.flatnonzero(cup["upper"] <= eps)
    upper = float(grid[ok[0]]) if len(ok) else math.inf

    n, q = m.n_sites, m.q
    if starts is None:
        start_confs = [np.zeros(n, np.int64), np.full(n, q - 1, np.int64)] if m.is_monotone \
            else [canonical_start(m)]
    else:
        start_confs = [np.asarray(s, np.int64) for s in starts]
    events = _events(m)
    n_tests = len(events) * len(start_confs) * len(grid)
    a_each = 2 * half / n_tests
    # stationary event probabilities: exact when enumerable, otherwise from
    # long runs whose distance to stationarity is bounded by the coupling
    delta = 0.0
    if q ** n <= GIBBS_STATE_BUDGET:
        states, probs = gibbs_enumerate(m)
        ref = [(float(probs[_event_hits(k, a, states, q)].sum()),) * 2 for k, a in events]
    else:
        T = reference_time or 4.0 * float(grid.max())
        dref = coupling_tv_upper(m, [T], replicas, replica_seed(seed, 2), policy, workers,
                                 level=1 - half)
        delta = float(dref["upper"][0])
        confs = np.array([_run_to(m, canonical_start(m), T, replica_seed(seed, 3 + k))
                          for k in range(replicas)])
        ref = []
        for k, a in events:
            hits = int(_event_hits(k, a, confs, q).sum())
            lo_p, hi_p = clopper_pearson(hits, replicas, 1 - a_each)
            ref.append((lo_p - delta, hi_p + delta))
    lower = 0.0
    for s_i, s0 in enumerate(start_confs):
        snaps = np.empty((replicas, len(grid), n), dtype=np.int64)
        for r in range(replicas):
            W = sample_updates(m.graph, float(grid.max()), replica_seed(seed, 1000 + 7919 * s_i + r),
                               "hb", policy, q)
            snaps[r] = trajectory(m, s0, W, grid)
        for ti, t in enumerate(grid):
            for (k, a), (p_lo, p_hi) in zip(events, ref):
                hits = int(_event_hits(k, a, snaps[:, ti, :], q).sum())
                lo_c, hi_c = clopper_pearson(hits, replicas, 1 - a_each)
                sep = max(lo_c - p_hi, p_lo - hi_c)
                if sep > eps:
                    lower = max(lower, float(t))
    return TmixBracket(lower, upper, eps, "empirical", level, "extreme" if m.is_monotone else "tested",
                       {"coupling": cup, "stationary_delta": delta})


def _run_to(m: SpinModel, s0, T: float, seed: int) -> np.ndarray:
    W = sample_updates(m.graph, T, seed, "hb", "mono" if m.is_monotone else "thresh", m.q)
    return trajectory(m, s0, W, [T])[0]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class CutoffReport:
    tmix: dict
    windows: dict
    prediction: dict
    inputs: dict

    def as_dict(self) -> dict:
        return {"tmix": self.tmix, "windows": self.windows,
                "prediction": self.prediction, "inputs": self.inputs}


def cutoff_report(curve: MixingCurve, eps_grid=(0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95),
                  prediction: dict | None = None, inputs: dict | None = None) -> CutoffReport:
    """``t_mix`` table and windows ``t_mix(eps) - t_mix(1 - eps)`` from a
    worst-start TV curve."""
    tv = curve.tv if curve.tv is not None else curve.upper
    tm = {float(e): tmix_from_curve(curve.grid, tv, e) for e in eps_grid}
    win = {}
    for e in eps_grid:
        if e < 0.5 and (1 - e) in tm:
            win[float(e)] = tm[e] - tm[1 - e]
        elif e < 0.5:
            win[float(e)] = tmix_from_curve(curve.grid, tv, e) - tmix_from_curve(curve.grid, tv, 1 - e)
    return CutoffReport(tm, win, prediction or {}, inputs or {})
