"""Command-line experiment runner.

Usage examples::

    glaubercut --task exact --seed 1 --config ising.ini --out run1
    glaubercut hypercube n=10000 c=-2..2 step 0.5 --out hc
    glaubercut support --seed 7 graph.type=torus d=2 n=64 beta=0.3 support.r=2
    glaubercut verify all --workers 8
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from ._io import dumps, write_csv, write_json, write_manifest
from .analytics import (
    block_profile,
    build_generator,
    check_ls_bound,
    cutoff_report,
    exact_curve,
    hypercube_profile,
    log_sobolev_estimate,
    plus_cutoff_forms,
    plus_cutoff_predict,
    product_cutoff_predict,
    spectral_gap,
    tmix_bracket,
    MixingCurve,
)
from .config import (
    ConfigError,
    ExperimentSpec,
    build_graph,
    build_model,
    expand_range,
    load_config,
    make_spec,
    merge,
    parse_overrides,
    spec_hash,
    TASKS,
)
from .dynamics import (
    coupling_floor,
    coupling_tv_upper,
    contact_bound,
    disagreement_curve,
    geometric_grid,
    replica_seed,
    run_replicas,
    sample_updates,
    simulate_contact,
    trajectory,
)
from .graph import BlockSpec, GraphError, default_metric
from .model import ModelError, SpinModel, canonical_start, zeta
from .support import (
    BarrierSystem,
    SparseParams,
    check_sparse,
    compute_rho,
    support_superset,
    write_frames,
)
from .verify import SUITES, VERIFY_SEED, run_suite

__all__ = ["main", "run", "build_parser"]

BINARY_EVENT_THRESHOLD = 100_000


class TaskError(ValueError):
    """Task-specific input is missing or inconsistent."""


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _default_policy(m: SpinModel) -> str:
    if m.is_monotone:
        return "mono"
    return "perm" if m.kind == "coloring" else "thresh"


def _time_grid(spec: ExperimentSpec, horizon: float) -> np.ndarray:
    dyn = spec.sections["dynamics"]
    if "grid" in dyn:
        grid = expand_range(dyn["grid"], dyn.get("step"))
    else:
        points = int(dyn.get("points", 33))
        if dyn.get("spacing", "linear") == "geometric":
            grid = geometric_grid(horizon, points, dyn.get("t_min"))
        else:
            grid = np.linspace(0.0, horizon, points)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0) or (len(grid) and grid[0] < 0):
        raise TaskError("time grid must be nonnegative and increasing")
    return grid


def _start(m: SpinModel, name) -> np.ndarray:
    if name in (None, "canonical"):
        return canonical_start(m)
    if name == "lowest":
        return np.zeros(m.n_sites, dtype=np.int64)
    if name == "highest":
        return np.full(m.n_sites, m.q - 1, dtype=np.int64)
    raise TaskError(f"unknown start {name!r}; expected canonical, lowest or highest")


def _spin_values(m: SpinModel, conf: np.ndarray) -> list:
    return [m.spins[int(s)] for s in conf]


def _save_updates(W, out: str) -> str:
    binary = len(W) > BINARY_EVENT_THRESHOLD
    W.save(os.path.join(out, "updates.w"), binary=binary)
    return "updates.w"


def _mean_se(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    mean = a.mean(axis=0)
    se = a.std(axis=0, ddof=1) / math.sqrt(len(a)) if len(a) > 1 else np.zeros_like(mean)
    return mean, se


# ---------------------------------------------------------------------------
# Replica jobs (picklable for the worker pool)
# ---------------------------------------------------------------------------

@dataclass
class _SampleJob:
    model: SpinModel
    horizon: float
    kind: str
    policy: str
    grid: np.ndarray
    start: np.ndarray

    def __call__(self, seed: int) -> np.ndarray:
        W = sample_updates(self.model.graph, self.horizon, seed, self.kind, self.policy, self.model.q)
        return trajectory(self.model, self.start, W, self.grid)


@dataclass
class _CoupleJob:
    model: SpinModel
    horizon: float
    policy: str
    grid: np.ndarray
    heal: float

    def __call__(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        W = sample_updates(self.model.graph, self.horizon, seed, "hb", self.policy, self.model.q)
        frac, _ = disagreement_curve(self.model, W, self.policy, self.grid)
        _, counts = simulate_contact(self.model.graph, self.heal, self.horizon, seed, self.grid)
        return frac, counts / self.model.n_sites


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

def task_sample(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    m = build_model(spec.sections)
    dyn = spec.sections["dynamics"]
    kind = dyn.get("kind", "hb")
    policy = dyn.get("policy", "mono" if kind == "mh" else _default_policy(m))
    horizon = float(dyn.get("horizon", 10.0))
    grid = _time_grid(spec, horizon)
    start = _start(m, dyn.get("start"))
    snaps = run_replicas(_SampleJob(m, horizon, kind, policy, grid, start), spec.seed, replicas, workers)
    values = np.asarray(m.spins, dtype=float) if all(
        isinstance(s, (int, float)) for s in m.spins) else np.arange(m.q, dtype=float)
    rows = []
    for k, traj in enumerate(snaps):
        for i, t in enumerate(grid):
            rows.append({"t": float(t), "replica": k,
                         "top_fraction": float(np.mean(traj[i] == m.q - 1)),
                         "mean_spin": float(values[traj[i]].mean())})
    W0 = sample_updates(m.graph, horizon, replica_seed(spec.seed, 0), kind, policy, m.q)
    files = [_save_updates(W0, out)]
    report = {
        "task": "sample", "kind": kind, "policy": policy, "horizon": horizon,
        "replicas": replicas, "n_sites": m.n_sites,
        "final_configs": [_spin_values(m, s[-1]) for s in snaps],
        "updates_replica": 0,
    }
    return {"rows": rows, "report": report, "files": files,
            "columns": ["t", "replica", "top_fraction", "mean_spin"]}


def task_couple(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    m = build_model(spec.sections)
    dyn = spec.sections["dynamics"]
    policy = dyn.get("policy", _default_policy(m))
    horizon = float(dyn.get("horizon", 10.0))
    grid = _time_grid(spec, horizon)
    if policy == "thresh":
        heal = float(np.sum(coupling_floor(m)))
    else:
        heal = float(zeta(m))
    heal = min(max(heal, 1e-12), 1.0)
    res = run_replicas(_CoupleJob(m, horizon, policy, grid, heal), spec.seed, replicas, workers)
    unk = np.array([r[0] for r in res])
    con = np.array([r[1] for r in res])
    u_mean, u_se = _mean_se(unk)
    c_mean, c_se = _mean_se(con)
    bound = contact_bound(1, m.graph.delta, heal, grid, lattice_dim=False)
    cup = coupling_tv_upper(m, grid, replicas, spec.seed, policy, workers)
    rows = []
    for i, t in enumerate(grid):
        rows.append({
            "t": float(t), "unknown_mean": u_mean[i], "unknown_se": u_se[i],
            "contact_mean": c_mean[i], "contact_se": c_se[i], "contact_bound": float(bound[i]),
            "tv_estimate": cup["estimate"][i], "tv_lower": cup["lower"][i], "tv_upper": cup["upper"][i],
        })
    report = {
        "task": "couple", "policy": policy, "horizon": horizon, "replicas": replicas,
        "heal_rate": heal, "n_sites": m.n_sites, "delta": m.graph.delta,
        "coalescence_times": cup["times"],
    }
    W0 = sample_updates(m.graph, horizon, replica_seed(spec.seed, 0), "hb", policy, m.q)
    return {"rows": rows, "report": report, "files": [_save_updates(W0, out)],
            "columns": list(rows[0]) if rows else []}


def _sparse_params(spec: ExperimentSpec, g, r: int, metric: str) -> SparseParams:
    sup = spec.sections["support"]
    n = g.n_sites
    if "alpha" in sup:
        return SparseParams.from_inputs(g.delta, float(sup["alpha"]), n,
                                        sup.get("rho"), g, metric)
    rho = int(sup["rho"]) if "rho" in sup else compute_rho(g, r, metric)
    ln = math.log(max(n, 2))
    # harness thresholds: theory sizes with the separation scaled to the ball radius
    return SparseParams(
        max_size=float(sup.get("max_size", rho ** 3 * ln)),
        max_diam=float(sup.get("max_diam", 0.5 * ln ** 2)),
        min_sep=float(sup.get("min_sep", max(r, 1))),
        inputs={"rho": rho, "r": r, "n": n, "harness": True},
    )


def task_support(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    m = build_model(spec.sections)
    g = m.graph
    sup = spec.sections["support"]
    dyn = spec.sections["dynamics"]
    if "r" not in sup:
        raise TaskError("support task needs support.r (ball radius)")
    r = int(sup["r"])
    metric = sup.get("metric", default_metric(g))
    policy = dyn.get("policy", _default_policy(m))
    if "frames" in sup:
        frames = [float(s) for s in np.atleast_1d(expand_range(sup["frames"], sup.get("step")))]
    else:
        horizon = float(dyn.get("horizon", 10.0))
        frames = [float(s) for s in np.linspace(0.0, horizon, 11)]
    horizon = max(frames)
    W = sample_updates(g, horizon, spec.seed, "hb", policy, m.q)
    b = BarrierSystem(m, r, metric)
    rep = support_superset(b, W, policy, frames=frames, keep_masks=True)
    params = _sparse_params(spec, g, r, metric)
    merge_rule = sup.get("merge", "separation")
    verdict = check_sparse(g, rep, params, merge_rule, r=r)
    files = [_save_updates(W, out)]
    if g.coords is not None and g.coords.shape[1] == 2:
        names = write_frames(g, rep, os.path.join(out, "frames"))
        files += [f"frames/{nm}" for nm in names] + ["frames/index.txt"]
    rows = [{"frame": f, "s": float(s), "fraction": float(rep.fractions[f]),
             "support_size": int(rep.frame_masks[f].sum()),
             "undetermined": len(rep.undetermined[f])}
            for f, s in enumerate(rep.frame_times)]
    fr = [float(x) for x in rep.fractions]
    report = {
        "task": "support", "r": r, "metric": metric, "policy": policy, "frames": frames,
        "fractions": fr, "nonincreasing": all(b2 <= a for a, b2 in zip(fr, fr[1:])),
        "final_fraction": fr[-1] if fr else None,
        "sparse_params": {"max_size": params.max_size, "max_diam": params.max_diam,
                          "min_sep": params.min_sep, "inputs": params.inputs},
        "merge": merge_rule, "verdict": verdict.as_dict(),
    }
    return {"rows": rows, "report": report, "files": files,
            "columns": ["frame", "s", "fraction", "support_size", "undetermined"]}


def _exact_bundle(spec: ExperimentSpec, m: SpinModel, kind: str):
    G = build_generator(m, kind)
    t_max = float(spec.sections["dynamics"].get("horizon", 10.0))
    grid = _time_grid(spec, t_max)
    starts = spec.sections["dynamics"].get("starts")
    curve = exact_curve(G, grid, starts, model=m)
    return G, curve


def task_exact(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    m = build_model(spec.sections)
    kind = spec.sections["dynamics"].get("kind", "hb")
    G, curve = _exact_bundle(spec, m, kind)
    gap = spectral_gap(G) if G.N > 1 else 1.0
    est = log_sobolev_estimate(G, seed=spec.seed or 0) if G.N > 1 else None
    checks = []
    if est is not None:
        start = int(np.argmin(G.pi))
        for s in (1.0, 2.0, 4.0):
            checks.append({"s": s, **check_ls_bound(G, start, s, est.alpha, gap)})
    report = {
        "task": "exact", "kind": kind, "states": G.N, "n_sites": m.n_sites,
        "gap": gap, "alpha": est.alpha if est else None,
        "alpha_certificate": est.certificate if est else None,
        "ls_checks": checks, "starts": curve.starts,
    }
    return {"rows": curve.rows(), "report": report, "files": [],
            "columns": ["t", "tv", "l2", "linf"]}


def task_cutoff(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    m = build_model(spec.sections)
    cut = spec.sections["cutoff"]
    eps_list = [float(e) for e in np.atleast_1d(cut.get("eps", [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]))]
    mode = cut.get("mode", "exact" if m.q ** m.n_sites <= 2 ** 16 else "empirical")
    horizon = float(spec.sections["dynamics"].get("horizon", 10.0))
    grid = _time_grid(spec, horizon)
    brackets = {}
    if mode == "exact":
        G, curve = _exact_bundle(spec, m, "hb")
        gap = spectral_gap(G)
        alpha = log_sobolev_estimate(G, seed=spec.seed or 0).alpha
        for e in eps_list:
            b = tmix_bracket(m, e)
            brackets[e] = {"lower": b.lower, "upper": b.upper}
        loc, win = product_cutoff_predict(gap, alpha, float(G.pi.min()), m.n_sites)
        prediction = {"location": loc, "window": win}
        inputs = {"gap": gap, "alpha": alpha, "phi_min": float(G.pi.min()), "n": m.n_sites}
        columns = ["t", "tv", "l2", "linf"]
    elif mode == "empirical":
        detail = None
        for e in eps_list:
            b = tmix_bracket(m, e, "empirical", grid=grid, replicas=replicas, seed=spec.seed,
                             workers=workers)
            brackets[e] = {"lower": b.lower, "upper": b.upper, "level": b.level}
            detail = b.details["coupling"]
        curve = MixingCurve(grid, lower=detail["lower"], upper=detail["upper"], level=0.975,
                            starts="coupling")
        prediction, inputs = {}, {"replicas": replicas}
        columns = ["t", "lower", "upper"]
    else:
        raise TaskError(f"unknown cutoff mode {mode!r}; expected exact or empirical")
    rep = cutoff_report(curve, eps_list, prediction, inputs)
    report = {"task": "cutoff", "mode": mode, "brackets": brackets, **rep.as_dict()}
    return {"rows": curve.rows(), "report": report, "files": [], "columns": columns}


def task_predict(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    p = spec.sections["predict"]
    ptype = p.get("type", "product")
    if ptype == "product":
        if "n" not in p:
            raise TaskError("product prediction needs predict.n (number of components)")
        if all(k in p for k in ("gap", "alpha", "phi_min")):
            gap, alpha, phi_min = float(p["gap"]), float(p["alpha"]), float(p["phi_min"])
            source = "given"
        else:
            # component chain from the model section
            m = build_model(spec.sections)
            G = build_generator(m, spec.sections["dynamics"].get("kind", "hb"))
            gap = spectral_gap(G)
            alpha = log_sobolev_estimate(G, seed=spec.seed or 0).alpha
            phi_min = float(G.pi.min())
            source = "computed"
        loc, win = product_cutoff_predict(gap, alpha, phi_min, float(p["n"]))
        rows = [{"location": loc, "window": win, "gap": gap, "alpha": alpha, "phi_min": phi_min}]
        report = {"task": "predict", "type": "product", "inputs_source": source,
                  "inputs": {"gap": gap, "alpha": alpha, "phi_min": phi_min, "n": p["n"]},
                  "location": loc, "window": win}
        return {"rows": rows, "report": report, "files": [], "columns": list(rows[0])}
    if ptype == "plus":
        d = int(p.get("d", spec.sections["graph"].get("d", 2)))
        if "n" not in p:
            raise TaskError("plus prediction needs predict.n (number of sites)")
        if "lambdas" in p:
            lams = [float(x) for x in np.atleast_1d(p["lambdas"])]
            source = "given"
        else:
            if "m" not in p:
                raise TaskError("plus prediction needs predict.lambdas or a block side predict.m")
            beta = float(spec.sections["model"].get("beta", 0.0))
            lams = [block_profile(BlockSpec(d, int(p["m"]), j), beta, [0.0]).lam for j in range(d)]
            source = f"blocks(m={int(p['m'])})"
        n = float(p["n"])
        loc = plus_cutoff_predict(d, n, lams)
        forms = plus_cutoff_forms(d, n, lams)
        rows = [{"location": loc, **forms}]
        report = {"task": "predict", "type": "plus", "inputs_source": source,
                  "inputs": {"d": d, "n": n, "lambdas": lams}, "location": loc, "forms": forms}
        return {"rows": rows, "report": report, "files": [], "columns": list(rows[0])}
    raise TaskError(f"unknown prediction type {ptype!r}; expected product or plus")


def task_hypercube(spec: ExperimentSpec, out: str, replicas: int, workers: int) -> dict:
    h = spec.sections["hypercube"]
    if "n" not in h:
        raise TaskError("hypercube task needs n")
    n = int(h["n"])
    if n < 1:
        raise TaskError("hypercube dimension must be positive")
    cs = expand_range(h.get("c", "-2..2"), h.get("step", 0.5))
    rows = hypercube_profile(n, cs)
    report = {"task": "hypercube", "n": n,
              "max_abs_difference": max(abs(r["tv"] - r["erf"]) for r in rows)}
    return {"rows": rows, "report": report, "files": [], "columns": ["c", "t", "tv", "erf"]}


TASK_FUNCS = {
    "sample": task_sample, "couple": task_couple, "support": task_support, "exact": task_exact,
    "cutoff": task_cutoff, "predict": task_predict, "hypercube": task_hypercube,
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run(spec: ExperimentSpec, out: str, fmt: str = "csv", replicas: int | None = None,
        workers: int = 1) -> dict:
    """Run one task and write its artifacts plus ``manifest.json`` to ``out``."""
    run_sec = spec.sections["run"]
    if replicas is None:
        replicas = int(run_sec.get("replicas", {"couple": 100}.get(spec.task, 1)))
    if replicas < 1:
        raise TaskError("replicas must be positive")
    if workers < 1:
        raise TaskError("workers must be positive")
    os.makedirs(out, exist_ok=True)
    result = TASK_FUNCS[spec.task](spec, out, replicas, workers)
    files = list(result["files"])
    report = dict(result["report"])
    report["seed"] = spec.seed
    report["spec"] = spec.as_dict()
    if fmt == "csv":
        write_csv(os.path.join(out, "curve.csv"), result["rows"], result["columns"])
        files.append("curve.csv")
    else:
        report["curve"] = result["rows"]
    write_json(os.path.join(out, "report.json"), report)
    files.append("report.json")
    write_manifest(out, spec_hash(spec), spec.seed, __version__, files)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="glaubercut",
        description="Glauber-dynamics mixing and cutoff experiments.",
        epilog="Positional arguments: an optional task name followed by key=value "
               "overrides (section.key=value or a bare key); 'verify SUITE' runs the self-checks.",
    )
    p.add_argument("--config", help="sectioned key=value or JSON experiment file")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--seed", type=int, help="unsigned 64-bit top-level seed")
    p.add_argument("--out", default=None, help="output directory (default: ./out-<task>)")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default=None,
                   help="csv writes curve.csv; json embeds the curve in report.json")
    p.add_argument("--mutate-conditionals", type=float, default=None,
                   help=argparse.SUPPRESS)
    p.add_argument("args", nargs="*", help="task and key=value overrides")
    return p


def _error(exc: Exception, out: str | None) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    text = dumps(payload)
    sys.stdout.write(text)
    if out and os.path.isdir(out):
        with open(os.path.join(out, "error.json"), "w", encoding="utf-8") as fh:
            fh.write(text)
    return 2


def _verify(ns, suite_args: list[str]) -> int:
    suite = suite_args[0] if suite_args else "all"
    if suite not in SUITES or len(suite_args) > 1:
        return _error(ConfigError(f"verify takes one suite: {', '.join(SUITES)}"), None)
    seed = VERIFY_SEED if ns.seed is None else ns.seed
    report = run_suite(suite, seed, ns.workers, ns.mutate_conditionals)
    text = dumps(report)
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        with open(os.path.join(ns.out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        write_manifest(ns.out, "verify:" + suite, seed, __version__, ["report.json"])
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['suite']}/{c['name']}", file=sys.stderr)
    sys.stdout.write(text)
    return 0 if report["ok"] else 1


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_intermixed_args(argv)
    if ns.args and ns.args[0] == "verify":
        return _verify(ns, ns.args[1:])
    try:
        sections = load_config(ns.config) if ns.config else merge({}, {})
        task, over = parse_overrides(ns.args, ns.task)
        sections = merge(sections, over)
        spec = make_spec(sections, task, ns.seed)
        out = ns.out or spec.sections["run"].get("out") or f"out-{spec.task}"
        fmt = ns.format if ns.format else spec.sections["run"].get("format", "csv")
        replicas = ns.replicas
        report = run(spec, out, fmt, replicas, ns.workers)
    except (ConfigError, TaskError, ModelError, GraphError, ValueError, OSError) as exc:
        return _error(exc, ns.out)
    summary = {k: report[k] for k in ("task", "seed") if k in report}
    summary["out"] = out
    sys.stdout.write(dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
