"""Experiment configuration: JSON loading, validation, overrides and object builders."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .bounds import BOUND_KINDS, LowerConstants, ProblemConstants
from .objectives import (Exact, Gaussian, HeterQuadratic, ProblemSpec, Quadratic, ZeroOut,
                         prog, scaled_worst_case)
from .optimizers import METHODS, REGIMES, AlgorithmDriver
from .power import (Constant, PeriodicOutage, PiecewiseConstant, PiecewiseTrend, PolyGrowth,
                    ScaledTrend, SineOffset, Trace, random_outage_trace)


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_numlist = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_TREND = _obj({
    "kind": {"enum": ["sine_offset", "poly_growth", "piecewise"]},
    "offset": _pos, "amplitude": _nonneg, "exponent": _num,
    "breakpoints": _numlist, "values": _numlist,
}, ["kind"])

_WORKER = _obj({
    "kind": {"enum": ["constant", "scaled_trend", "periodic_outage", "piecewise", "trace",
                      "random_outage"]},
    "v": _nonneg, "trend": _TREND, "period": _pos, "active_len": _nonneg,
    "breakpoints": _numlist, "values": _numlist,
    "sample_times": _numlist, "sample_powers": _numlist, "path": {"type": "string"},
    "mean_up": _pos, "mean_down": _pos, "horizon": _pos, "seed": {"type": "integer"},
}, ["kind"])

SCHEMA = _obj({
    "experiment": {"enum": ["bound", "simulate", "adversary", "verify"]},
    "workers": {"type": "array", "items": _WORKER, "minItems": 1},
    "constants": _obj({"L": _pos, "Delta": _pos, "sigma2": _nonneg, "eps": _pos,
                       "M": _pos, "R": _pos}),
    "lower_constants": _obj({"c1": _pos, "c2": _pos, "c3": _pos, "c_prime": _pos}),
    "bound": _obj({"kind": {"enum": list(BOUND_KINDS)}, "K": {"type": "integer", "minimum": 0}},
                  ["kind"]),
    "problem": _obj({
        "objective": {"enum": ["quadratic", "heter_quadratic", "worst_case"]},
        "dim": _int1, "centers": {"type": "array", "items": _numlist},
        "center_spread": _nonneg, "oracle": {"enum": ["exact", "gaussian", "zero_out"]},
        "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "x0": _numlist, "x0_norm": _nonneg,
    }, ["objective"]),
    "method": _obj({
        "name": {"enum": list(METHODS)}, "regime": {"enum": list(REGIMES)},
        "gamma": _pos, "S": _int1, "K": _int1, "mode": {"enum": ["event", "iteration"]},
        "horizon": _pos, "record_every": _int1, "stop_at_prog": {"type": "boolean"},
    }, ["name"]),
    "num_seeds": _int1,
    "jobs": _int1,
    "adversary": _obj({
        "kind": {"enum": ["homog", "markov"]}, "T": _int1,
        "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "trials": _int1, "K": _pos, "windows": _int1, "block": _int1,
    }, ["kind"]),
    "verify": _obj({"criteria": {"type": "array", "items": {"type": "integer", "minimum": 1,
                                                             "maximum": 14}}}),
}, ["experiment"])

_VALIDATOR = Draft202012Validator(SCHEMA)


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ConfigError([f"duplicate key {k!r}"])
        seen[k] = v
    return seen


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError([f"JSON parse error: {e}"]) from None


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        if isinstance(node, list):
            node[int(parts[-1])] = value
        else:
            node[parts[-1]] = value
    return cfg


def validate(cfg: dict) -> dict:
    """Schema plus semantic checks; raises ConfigError listing every problem."""
    problems = []
    for err in sorted(_VALIDATOR.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    if problems:
        raise ConfigError(problems)
    exp = cfg["experiment"]
    if exp in ("bound", "simulate", "adversary") and "workers" not in cfg:
        problems.append("workers: required for this experiment")
    if exp == "bound" and "bound" not in cfg:
        problems.append("bound: required for a bound experiment")
    if exp == "simulate":
        for key in ("problem", "method"):
            if key not in cfg:
                problems.append(f"{key}: required for a simulate experiment")
    if exp == "adversary" and "adversary" not in cfg:
        problems.append("adversary: required for an adversary experiment")
    for i, w in enumerate(cfg.get("workers", [])):
        try:
            build_profile(w, base=None)
        except (ValueError, KeyError, TypeError) as e:
            problems.append(f"workers.{i}: {e}")
    try:
        build_constants(cfg)
    except ValueError as e:
        problems.append(f"constants: {e}")
    if problems:
        raise ConfigError(problems)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- builders ----------------------------------------------------------------

_FIELDS = {
    "constant": {"v"},
    "scaled_trend": {"v", "trend"},
    "periodic_outage": {"v", "period", "active_len"},
    "piecewise": {"breakpoints", "values"},
    "trace": {"sample_times", "sample_powers", "path"},
    "random_outage": {"v", "mean_up", "mean_down", "horizon", "seed"},
}


def _require(d, keys, allowed, what):
    missing = [k for k in keys if k not in d]
    extra = sorted(set(d) - allowed - {"kind"})
    if missing:
        raise ValueError(f"{what} is missing {', '.join(missing)}")
    if extra:
        raise ValueError(f"{what} does not accept {', '.join(extra)}")


def build_trend(d):
    kind = d["kind"]
    if kind == "sine_offset":
        _require(d, [], {"offset", "amplitude"}, "sine_offset trend")
        return SineOffset(d.get("offset", 1.01), d.get("amplitude", 1.0))
    if kind == "poly_growth":
        _require(d, ["exponent"], {"exponent"}, "poly_growth trend")
        return PolyGrowth(d["exponent"])
    _require(d, ["breakpoints", "values"], {"breakpoints", "values"}, "piecewise trend")
    return PiecewiseTrend(tuple(d["breakpoints"]), tuple(d["values"]))


def _read_trace(path, base):
    p = Path(path)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    times, powers = [], []
    with open(p, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                times.append(float(row[0]))
                powers.append(float(row[1]))
            except ValueError:
                continue  # header line
    return times, powers


def build_profile(d: dict, base=None):
    kind = d["kind"]
    allowed = _FIELDS[kind]
    if kind == "constant":
        _require(d, ["v"], allowed, "constant worker")
        return Constant(d["v"])
    if kind == "scaled_trend":
        _require(d, ["v"], allowed, "scaled_trend worker")
        return ScaledTrend(d["v"], build_trend(d.get("trend", {"kind": "sine_offset"})))
    if kind == "periodic_outage":
        _require(d, ["v", "period"], allowed, "periodic_outage worker")
        return PeriodicOutage(d["v"], d["period"], d.get("active_len", 1.0))
    if kind == "piecewise":
        _require(d, ["breakpoints", "values"], allowed, "piecewise worker")
        return PiecewiseConstant(tuple(d["breakpoints"]), tuple(d["values"]))
    if kind == "trace":
        if "path" in d:
            _require(d, [], {"path"}, "trace worker given by path")
            if base is None:
                return None  # checked when the run starts
            return Trace(*_read_trace(d["path"], base))
        _require(d, ["sample_times", "sample_powers"], allowed - {"path"}, "trace worker")
        return Trace(d["sample_times"], d["sample_powers"])
    _require(d, ["v", "mean_up", "mean_down", "horizon"], allowed, "random_outage worker")
    rng = np.random.Generator(np.random.Philox(d.get("seed", 0)))
    return random_outage_trace(rng, d["v"], d["mean_up"], d["mean_down"], d["horizon"])


def build_profiles(cfg, base=None):
    return [build_profile(w, base if base is not None else ".") for w in cfg["workers"]]


def build_constants(cfg) -> ProblemConstants:
    return ProblemConstants(**cfg.get("constants", {}))


def build_lower(cfg) -> LowerConstants:
    return LowerConstants(**cfg.get("lower_constants", {}))


def build_problem(cfg, n: int) -> ProblemSpec:
    consts = build_constants(cfg)
    d = cfg["problem"]
    obj_kind = d["objective"]
    oracle_kind = d.get("oracle", "gaussian")
    if obj_kind == "worst_case":
        prob = scaled_worst_case(consts, "homog", build_lower(cfg))
        if oracle_kind == "zero_out" and "p" in d:
            prob = ProblemSpec(prob.objective, consts, ZeroOut(d["p"]), None, prob.meta)
        elif oracle_kind == "exact":
            prob = ProblemSpec(prob.objective, consts, Exact(), None, prob.meta)
        elif oracle_kind == "gaussian":
            prob = ProblemSpec(prob.objective, consts, Gaussian(consts.sigma2), None, prob.meta)
        return prob
    dim = d.get("dim", 10)
    if obj_kind == "quadratic":
        obj = Quadratic(consts.L, dim)
        center = np.zeros(dim)
    else:
        if "centers" in d:
            centers = np.asarray(d["centers"], dtype=float)
            if centers.shape != (n, dim):
                raise ConfigError([f"problem.centers: expected shape ({n}, {dim})"])
        else:
            # deterministic, distinct centers that average to zero
            spread = d.get("center_spread", 1.0)
            centers = np.zeros((n, dim))
            for i in range(n):
                centers[i, i % dim] = spread * (1 if (i // dim) % 2 == 0 else -1)
            centers -= centers.mean(axis=0)
        obj = HeterQuadratic(consts.L, centers)
        center = centers.mean(axis=0)
    if "x0" in d:
        x0 = np.asarray(d["x0"], dtype=float)
    else:
        # default start at gap exactly Delta: f(x0) - f* = L/2 ||x0 - x*||^2
        r = d.get("x0_norm", math.sqrt(2 * consts.Delta / consts.L))
        x0 = center.copy()
        x0[0] += r
    if oracle_kind == "exact":
        oracle = Exact()
    elif oracle_kind == "gaussian":
        oracle = Gaussian(consts.sigma2)
    else:
        oracle = ZeroOut(d.get("p", 1.0))
    return ProblemSpec(obj, consts, oracle, x0)


def build_driver(cfg, n: int, problem: ProblemSpec | None = None) -> AlgorithmDriver:
    m = cfg["method"]
    name = m["name"]
    regime = m.get("regime", "convex_smooth" if name.startswith("accel_") else "nonconvex")
    drv = AlgorithmDriver.from_params(name, regime, build_constants(cfg), n,
                                      gamma=m.get("gamma"), S=m.get("S"), K=m.get("K"))
    if m.get("stop_at_prog") and problem is not None:
        T = problem.dim
        drv.stop_when = lambda x: prog(x) >= T
    return drv
