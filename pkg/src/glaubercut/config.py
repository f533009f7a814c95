"""Experiment configuration: sectioned key=value files, JSON, and
command-line shorthand, all normalised to one nested dictionary."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .graph import BlockSpec, Graph, build_block, build_box, build_torus, build_variant, from_text
from .model import (
    SpinModel,
    make_antipotts,
    make_coloring,
    make_hardcore,
    make_ising,
    make_potts,
)

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "TASKS",
    "load_config",
    "parse_overrides",
    "parse_value",
    "build_graph",
    "build_model",
    "spec_hash",
]

TASKS = ("sample", "couple", "support", "exact", "cutoff", "predict", "hypercube")
RANDOM_TASKS = ("sample", "couple", "support", "cutoff")

SECTIONS = ("run", "graph", "model", "dynamics", "support", "cutoff", "predict", "hypercube")

# where a bare key lands when the task has no section of its own for it
DEFAULT_SECTION = {
    "task": "run", "seed": "run", "replicas": "run", "workers": "run", "out": "run",
    "format": "run",
    "type": "graph", "d": "graph", "n": "graph", "m": "graph", "j": "graph",
    "variant": "graph", "metric": "graph", "n1": "graph", "n2": "graph", "l": "graph",
    "model": "model", "beta": "model", "h": "model", "field": "model", "q": "model",
    "lambda": "model", "boundary": "model",
    "kind": "dynamics", "policy": "dynamics", "horizon": "dynamics", "points": "dynamics",
    "t_min": "dynamics", "grid": "dynamics",
}

TASK_KEYS = {
    "hypercube": {"n", "c", "step"},
    "predict": {"type", "gap", "alpha", "phi_min", "n", "d", "lambdas", "m"},
    "support": {"r", "frames", "alpha", "rho", "metric", "max_size", "max_diam", "min_sep", "merge"},
    "cutoff": {"eps", "mode"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def parse_value(text: str) -> Any:
    """Scalars, comma lists, and ``a..b`` ranges (kept as strings for the
    consumer to expand with a step)."""
    if not isinstance(text, str):
        return text
    t = text.strip()
    if t.lower() in ("true", "yes", "on"):
        return True
    if t.lower() in ("false", "no", "off"):
        return False
    if "," in t:
        return [parse_value(p) for p in t.split(",") if p.strip()]
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


@dataclass
class ExperimentSpec:
    task: str
    seed: int | None
    sections: dict = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def section(self, name: str) -> dict:
        return self.sections.setdefault(name, {})

    def as_dict(self) -> dict:
        return {"task": self.task, "seed": self.seed, "sections": self.sections}


def _blank() -> dict:
    return {s: {} for s in SECTIONS}


def load_config(path: str) -> dict:
    """Read a sectioned key=value file or a JSON file of the same shape."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    out = _blank()
    if path.endswith(".json") or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of sections")
        for sec, body in data.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown config section {sec!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"section {sec!r} must be an object")
            out[sec].update(body)
        return out
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section {sec!r}")
        for k, v in cp.items(sec):
            out[sec][k] = parse_value(v)
    return out


def parse_overrides(tokens: list[str], task: str | None) -> tuple[str | None, dict]:
    """Shorthand ``[task] key=value ...``; ``section.key=value`` is explicit,
    a bare ``key value`` pair is accepted for the last key."""
    out = _blank()
    toks = list(tokens)
    if toks and "=" not in toks[0] and toks[0] in TASKS:
        task = task or toks.pop(0)
    i = 0
    while i < len(toks):
        tok = toks[i]
        if "=" in tok:
            key, val = tok.split("=", 1)
        elif i + 1 < len(toks) and "=" not in toks[i + 1]:
            key, val = tok, toks[i + 1]
            i += 1
        else:
            raise ConfigError(f"cannot parse argument {tok!r}; expected key=value")
        i += 1
        if "." in key:
            sec, key = key.split(".", 1)
            if sec not in SECTIONS:
                raise ConfigError(f"unknown config section {sec!r}")
        elif task in TASK_KEYS and key in TASK_KEYS[task]:
            sec = task
        elif key in DEFAULT_SECTION:
            sec = DEFAULT_SECTION[key]
        else:
            raise ConfigError(f"unknown key {key!r}; use section.key=value")
        out[sec][key] = parse_value(val)
    return task, out


def merge(base: dict, extra: dict) -> dict:
    out = {s: dict(base.get(s, {})) for s in SECTIONS}
    for s, body in extra.items():
        out.setdefault(s, {}).update(body)
    return out


def make_spec(sections: dict, task: str | None, seed: int | None) -> ExperimentSpec:
    task = task or sections["run"].get("task")
    if task is None:
        raise ConfigError("no task given (use --task or run.task)")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    if seed is None:
        seed = sections["run"].get("seed")
    if seed is not None:
        try:
            seed = int(seed)
        except (TypeError, ValueError):
            raise ConfigError("seed must be an unsigned 64-bit integer") from None
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
    elif task in RANDOM_TASKS:
        raise ConfigError(f"task {task!r} needs an explicit seed")
    sections["run"]["task"] = task
    if seed is not None:
        sections["run"]["seed"] = seed
    return ExperimentSpec(task, seed, sections)


def spec_hash(spec: ExperimentSpec) -> str:
    blob = json.dumps(spec.as_dict(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Graph and model construction
# ---------------------------------------------------------------------------

def _req(sec: dict, key: str, name: str):
    if key not in sec:
        raise ConfigError(f"{name} needs '{key}'")
    return sec[key]


def _boundary_spec(text) -> tuple[str, Any]:
    """Model boundary schema -> (graph kind, boundary argument)."""
    if text is None or text == "free":
        return "box", "free"
    if text == "periodic":
        return "torus", None
    if text in ("plus", "minus"):
        return "box", text
    if isinstance(text, str) and text.startswith("mixed:"):
        faces = []
        for tok in text[len("mixed:"):].split("/"):
            tok = tok.strip()
            faces.append(tok if tok in ("free", "plus", "minus") else parse_value(tok))
        return "box", faces
    if isinstance(text, list):
        return "box", text
    if isinstance(text, str) and text.startswith("file:"):
        return "file", text[len("file:"):]
    raise ConfigError(f"unknown boundary {text!r}")


def _face_value(v, spins):
    if v == "plus":
        return spins[-1]
    if v == "minus":
        return spins[0]
    return v


def build_graph(sections: dict) -> Graph:
    g = sections.get("graph", {})
    mdl = sections.get("model", {})
    gtype = g.get("type")
    boundary = mdl.get("boundary", g.get("boundary"))
    try:
        if gtype in (None, "box", "torus") and boundary is not None or gtype in ("box", "torus"):
            kind, barg = _boundary_spec(boundary) if boundary is not None else (gtype, "free")
            if gtype == "torus":
                kind = "torus"
            d = int(_req(g, "d", "graph"))
            n = int(_req(g, "n", "graph"))
            if kind == "torus":
                return build_torus(d, n)
            if kind == "file":
                with open(barg, encoding="utf-8") as fh:
                    return from_text(fh.read())
            spins = _alphabet(mdl)
            if isinstance(barg, list):
                barg = [_face_value(v, spins) for v in barg]
            else:
                barg = _face_value(barg, spins) if barg != "free" else "free"
            return build_box(d, n, barg)
        if gtype == "block":
            plus = _alphabet(mdl)[-1]
            spec = BlockSpec(int(_req(g, "d", "graph")), int(_req(g, "m", "graph")),
                             int(g.get("j", 0)), plus)
            return build_block(spec, allow_small=bool(g.get("allow_small", False)))
        if gtype == "variant":
            kind = _req(g, "variant", "graph")
            params = {k: int(v) for k, v in g.items()
                      if k in ("n", "n1", "n2", "d", "l")}
            return build_variant(kind, **params)
        if gtype == "file":
            with open(_req(g, "path", "graph"), encoding="utf-8") as fh:
                return from_text(fh.read())
        if gtype is None:
            raise ConfigError("graph needs 'type' (box|torus|block|variant|file) or a model boundary")
        raise ConfigError(f"unknown graph type {gtype!r}")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _model_name(mdl: dict) -> str:
    # "kind" is accepted inside the model section as an alias of "model"
    if "model" in mdl and "kind" in mdl and mdl["model"] != mdl["kind"]:
        raise ConfigError(f"model.model={mdl['model']!r} conflicts with model.kind={mdl['kind']!r}")
    return mdl.get("model", mdl.get("kind", "ising"))


def _alphabet(mdl: dict) -> tuple:
    name = _model_name(mdl)
    if name == "ising":
        return (-1, 1)
    if name == "hardcore":
        return (0, 1)
    return tuple(range(1, int(mdl.get("q", 2)) + 1))


def _field(mdl: dict, n_sites: int):
    f = mdl.get("field", mdl.get("h", 0.0))
    if isinstance(f, str):
        arr = np.loadtxt(f, dtype=float).reshape(-1)
        if len(arr) != n_sites:
            raise ConfigError(f"field file has {len(arr)} values, graph has {n_sites} sites")
        return arr
    if isinstance(f, list):
        return np.asarray(f, dtype=float)
    return float(f)


def build_model(sections: dict, g: Graph | None = None) -> SpinModel:
    mdl = sections.get("model", {})
    if g is None:
        g = build_graph(sections)
    name = _model_name(mdl)
    try:
        if name == "ising":
            return make_ising(g, mdl.get("beta", 0.0), _field(mdl, g.n_sites))
        if name == "potts":
            return make_potts(g, int(_req(mdl, "q", "potts model")), float(mdl.get("beta", 0.0)))
        if name == "antipotts":
            return make_antipotts(g, int(_req(mdl, "q", "antipotts model")), float(mdl.get("beta", 0.0)))
        if name == "coloring":
            return make_coloring(g, int(_req(mdl, "q", "coloring model")))
        if name == "hardcore":
            return make_hardcore(g, float(_req(mdl, "lambda", "hardcore model")))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown model {name!r}")


def expand_range(value, step=None) -> np.ndarray:
    """``'a..b'`` with ``step`` (default 1), a list, or a scalar."""
    if isinstance(value, str) and ".." in value:
        a, b = value.split("..")
        a, b = float(a), float(b)
        step = float(step if step is not None else 1.0)
        if step <= 0:
            raise ConfigError("range step must be positive")
        k = int(np.floor((b - a) / step + 1e-9))
        return a + step * np.arange(k + 1)
    if isinstance(value, list):
        return np.asarray(value, dtype=float)
    return np.asarray([float(value)])
