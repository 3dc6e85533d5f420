"""Run configuration: JSON parsing, validation and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("branch", "envelope", "transition", "classify", "high-energy", "oracle", "pde", "appendix-check")

# per-task parameter sections: key -> default (None marks a required key)
SECTIONS = {
    "branch": {
        "selector": "0",
        "mu": None,
    },
    "envelope": {
        "n": 400,
        "lo": 0.5,
        "hi": 20.0,
        "selectors": None,
    },
    "transition": {},
    "classify": {},
    "high-energy": {
        "N": 3,
        "eta": 1e-3,
        "window": [0.002, 0.02],
        "samples": 600,
    },
    "oracle": {
        "mode": "mvp",
        "energies": None,
        "n": 20,
        "lo": 0.6,
        "hi": 15.0,
        "mass_grid": 200,
        "refine_rounds": 3,
        "betas": None,
        "nodes": 20000,
    },
    "pde": {
        "mode": "solve",
        "h": 1.0 / 128,
        "lambda": None,
        "mu": None,
        "ds": 0.05,
        "steps": 40,
        "tol": 1e-10,
        "widths": [0.2, 0.1, 0.05],
        "gap": 0.25,
        "export_field": False,
        "mu_left": 0.497,
        "mu_right": 0.52,
    },
    "appendix-check": {
        "betas": None,
        "epsilons": [0.0, 0.02, 0.04],
        "h": 1.0 / 512,
    },
}

DEFAULT_BETAS = {
    "oracle": [-7 * math.pi, -4 * math.pi, 0.0, 8 * math.pi],
    "appendix-check": [-4 * math.pi, -math.pi],
}

TOP_LEVEL = ("task", "domain", "geometry", "out", "params")
DOMAIN_KEYS = ("areas", "etas", "normalize")
GEOMETRY_KEYS = ("kind", "areas", "width", "gap", "area", "epsilon")


class ConfigError(ValueError):
    """Malformed or semantically invalid configuration.

    ``field`` names the offending key (dotted path) when known.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def as_dict(self) -> dict:
        return {"error": "config", "message": str(self), "field": self.field, "line": self.line}


@dataclass
class RunConfig:
    task: str
    domain: dict | None = None
    geometry: dict | None = None
    params: dict = field(default_factory=dict)
    out: str | None = None
    config_hash: str = ""

    def domain_spec(self):
        from .branches import DomainSpec

        if self.domain is None:
            raise ConfigError(f"task '{self.task}' needs a domain", "domain")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return DomainSpec.from_areas(self.domain["areas"], self.domain.get("etas"),
                                         normalize=self.domain.get("normalize", True))

    def normalized(self) -> dict:
        return {"task": self.task, "domain": self.domain, "geometry": self.geometry, "params": self.params}


def _reject_unknown(d: dict, allowed, where: str):
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key '{k}' in {where}", f"{where}.{k}" if where != "config" else k)


def _positive(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{name} must be a positive number, got {value!r}", name)
    return value


def _number_list(value, name, allow_empty=False):
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"{name} must be a list of numbers", name)
    if not value and not allow_empty:
        raise ConfigError(f"{name} must not be empty", name)
    if not all(math.isfinite(v) for v in value):
        raise ConfigError(f"{name} must be finite", name)
    return [float(v) for v in value]


def _check_domain(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("domain must be an object", "domain")
    _reject_unknown(raw, DOMAIN_KEYS, "domain")
    if "areas" not in raw:
        raise ConfigError("domain.areas is required", "domain.areas")
    areas = _number_list(raw["areas"], "domain.areas")
    for a in areas:
        if not a > 0:
            raise ConfigError(f"areas must be positive, got {a}", "domain.areas")
    etas = raw.get("etas")
    if etas is not None:
        etas = _number_list(etas, "domain.etas")
        if len(etas) != len(areas):
            raise ConfigError("domain.etas needs one entry per area", "domain.etas")
        if any(e < 0 for e in etas):
            raise ConfigError("deformations must be non-negative", "domain.etas")
    pairs = list(zip(areas, etas if etas is not None else [0.0] * len(areas)))
    ordered = sorted(pairs, key=lambda p: -p[0])
    if ordered != pairs:
        warnings.warn("domain.areas not sorted; reordered non-increasing", stacklevel=3)
    out = {"areas": [p[0] for p in ordered]}
    if etas is not None:
        out["etas"] = [p[1] for p in ordered]
    if "normalize" in raw:
        if not isinstance(raw["normalize"], bool):
            raise ConfigError("domain.normalize must be true or false", "domain.normalize")
        out["normalize"] = raw["normalize"]
    return out


def _check_geometry(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("geometry must be an object", "geometry")
    _reject_unknown(raw, GEOMETRY_KEYS, "geometry")
    kind = raw.get("kind", "dumbbell")
    if kind not in ("dumbbell", "disk", "conformal"):
        raise ConfigError(f"geometry.kind must be dumbbell, disk or conformal, got {kind!r}", "geometry.kind")
    out = {"kind": kind}
    if kind == "dumbbell":
        if "areas" not in raw:
            raise ConfigError("geometry.areas is required for a dumbbell", "geometry.areas")
        areas = _number_list(raw["areas"], "geometry.areas")
        if any(not a > 0 for a in areas):
            raise ConfigError("geometry.areas must be positive", "geometry.areas")
        if sorted(areas, reverse=True) != areas:
            warnings.warn("geometry.areas not sorted; reordered non-increasing", stacklevel=3)
            areas = sorted(areas, reverse=True)
        out["areas"] = areas
        w = raw.get("width")
        out["width"] = None if w is None else _positive(w, "geometry.width")
        out["gap"] = _positive(raw.get("gap", 0.25), "geometry.gap")
    elif kind == "disk":
        out["area"] = _positive(raw.get("area", 1.0), "geometry.area")
    else:
        eps = raw.get("epsilon", 0.0)
        if isinstance(eps, bool) or not isinstance(eps, (int, float)) or not 0 <= eps <= 0.15:
            raise ConfigError("geometry.epsilon must lie in [0, 0.15]", "geometry.epsilon")
        out["epsilon"] = float(eps)
    return out


def _check_params(task: str, raw) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("params must be an object", "params")
    section = SECTIONS[task]
    _reject_unknown(raw, section, "params")
    p = copy.deepcopy(section)
    p.update(copy.deepcopy(raw))
    where = "params."
    if task == "branch":
        mu = p["mu"]
        if mu is None:
            p["mu"] = {"start": 1e-6, "stop": 1 - 1e-6, "n": 2000}
        elif isinstance(mu, dict):
            _reject_unknown(mu, ("start", "stop", "n"), "params.mu")
            n = mu.get("n", 2000)
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ConfigError("params.mu.n must be a positive integer (empty mu grid)", "params.mu.n")
        else:
            grid = _number_list(mu, "params.mu", allow_empty=True)
            if not grid:
                raise ConfigError("params.mu is an empty mu grid", "params.mu")
            p["mu"] = grid
        if not isinstance(p["selector"], str):
            raise ConfigError("params.selector must be a string such as '0', '2,3' or 'merged:1'", "params.selector")
    if task in ("envelope", "oracle"):
        n = p["n"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"{where}n must be a positive integer", where + "n")
        _positive(p["lo"], where + "lo")
        _positive(p["hi"], where + "hi")
        if not p["lo"] < p["hi"]:
            raise ConfigError("params.lo must be below params.hi", where + "lo")
    if task == "oracle":
        if p["mode"] not in ("mvp", "radial"):
            raise ConfigError("params.mode must be 'mvp' or 'radial'", where + "mode")
        if p["energies"] is not None:
            p["energies"] = _number_list(p["energies"], where + "energies")
            if any(not e > 0 for e in p["energies"]):
                raise ConfigError("energies must be positive", where + "energies")
        if p["betas"] is not None:
            p["betas"] = _number_list(p["betas"], where + "betas")
        else:
            p["betas"] = list(DEFAULT_BETAS["oracle"])
        _positive(p["nodes"], where + "nodes")
        _positive(p["mass_grid"], where + "mass_grid")
    if task == "high-energy":
        if isinstance(p["N"], bool) or not isinstance(p["N"], int) or p["N"] < 1:
            raise ConfigError("params.N must be a positive integer", where + "N")
        _positive(p["eta"], where + "eta")
        w = _number_list(p["window"], where + "window")
        if len(w) != 2 or not 0 < w[0] < w[1]:
            raise ConfigError("params.window must be [lo, hi] with 0 < lo < hi", where + "window")
        p["window"] = w
        _positive(p["samples"], where + "samples")
    if task == "pde":
        if p["mode"] not in ("solve", "continue", "dumbbell", "transition"):
            raise ConfigError("params.mode must be solve, continue, dumbbell or transition", where + "mode")
        for k in ("h", "ds", "tol", "steps"):
            _positive(p[k], where + k)
        if p["mode"] in ("solve", "continue") and p["lambda"] is None and p["mu"] is None:
            raise ConfigError("params.lambda or params.mu is required", where + "lambda")
        if p["lambda"] is not None:
            _positive(p["lambda"], where + "lambda")
        if p["mu"] is not None and not (isinstance(p["mu"], (int, float)) and 0 < p["mu"] < 1):
            raise ConfigError("params.mu must lie in (0, 1)", where + "mu")
        p["widths"] = _number_list(p["widths"], where + "widths")
        if any(not w > 0 for w in p["widths"]):
            raise ConfigError("widths must be positive", where + "widths")
        for k in ("mu_left", "mu_right"):
            v = p[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 < v < 1:
                raise ConfigError(f"params.{k} must lie in (0, 1)", where + k)
        if not isinstance(p["export_field"], bool):
            raise ConfigError("params.export_field must be true or false", where + "export_field")
    if task == "appendix-check":
        p["betas"] = list(DEFAULT_BETAS[task]) if p["betas"] is None else _number_list(p["betas"], where + "betas")
        p["epsilons"] = _number_list(p["epsilons"], where + "epsilons")
        _positive(p["h"], where + "h")
    return p


def build_config(raw: dict, task: str | None = None, out: str | None = None) -> RunConfig:
    """Validate a decoded JSON object; ``task`` (from the command line) must agree with the file."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _reject_unknown(raw, TOP_LEVEL, "config")
    file_task = raw.get("task")
    if task is None:
        task = file_task
    elif file_task is not None and file_task != task:
        raise ConfigError(f"config declares task '{file_task}' but '{task}' was requested", "task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}, got {task!r}", "task")
    domain = _check_domain(raw["domain"]) if raw.get("domain") is not None else None
    geometry = _check_geometry(raw["geometry"]) if raw.get("geometry") is not None else None
    needs_domain = task in ("branch", "envelope", "transition", "classify", "oracle")
    if needs_domain and domain is None and not (task == "oracle" and (raw.get("params") or {}).get("mode") == "radial"):
        raise ConfigError(f"task '{task}' needs a domain", "domain")
    if task == "pde" and geometry is None:
        raise ConfigError("task 'pde' needs a geometry", "geometry")
    params = _check_params(task, raw.get("params"))
    cfg = RunConfig(task, domain, geometry, params, out if out is not None else raw.get("out"))
    cfg.config_hash = config_hash(cfg.normalized())
    return cfg


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()


def parse_config(path, task: str | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    return build_config(raw, task, out)
