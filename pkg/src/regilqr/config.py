"""Experiment configuration: schema validation and problem construction."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
from jsonschema import Draft202012Validator

from . import cost as cost_mod
from . import dyn as dyn_mod
from .analysis import TrajectoryConstants, trajectory_constants
from .errors import ConfigError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_vec_or_mat = {"anyOf": [_vec, _mat]}
_gains = {"anyOf": [_vec, {"const": "deadbeat"}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


def _named(name: str, params: dict) -> dict:
    return {"if": {"properties": {"name": {"const": name}}, "required": ["name"]},
            "then": {"properties": {"params": params}}}


_PSI_PARAMS = {
    "identity": _obj({}),
    "affine": _obj({"gain": _num, "k": _gains, "offset": _num}),
    "tanh_margin": _obj({"amp_y": _num, "amp_v": {"type": "number", "exclusiveMinimum": -1},
                         "k": _gains, "c": _vec}),
}

_CHAIN = {
    **_obj({"n_x": {"type": "integer", "minimum": 1}, "delta": _pos,
            "psi": {"enum": list(_PSI_PARAMS)}, "psi_params": {"type": "object"}},
           required=["n_x", "delta"]),
    "allOf": [
        {"if": {"properties": {"psi": {"const": k}}, "required": ["psi"]},
         "then": {"properties": {"psi_params": v}}}
        for k, v in _PSI_PARAMS.items()
    ],
}

DYNAMIC_NAMES = ("linear", "chain", "multirate", "brunovsky", "pendulum")
COST_NAMES = ("quadratic_tracking", "iso_quadratic", "smooth_perturbed")

SCHEMA: dict = {
    "$defs": {
        "dynamic": {
            **_obj({"name": {"enum": list(DYNAMIC_NAMES)}, "params": {"type": "object"}},
                   required=["name", "params"]),
            "allOf": [
                _named("linear", _obj({"A": _mat, "B": _mat}, required=["A", "B"])),
                _named("chain", _CHAIN),
                _named("multirate", _obj({"base": {"$ref": "#/$defs/dynamic"},
                                          "k": {"type": "integer", "minimum": 1}}, required=["base", "k"])),
                _named("brunovsky", _obj({"n_x": {"type": "integer", "minimum": 1}}, required=["n_x"])),
                _named("pendulum", _obj({"delta": _pos, "gravity": _num, "length": _pos,
                                         "mass": _pos, "damping": _nonneg})),
            ],
        },
        "cost": {
            **_obj({"name": {"enum": list(COST_NAMES)}, "params": {"type": "object"}},
                   required=["name", "params"]),
            "allOf": [
                _named("quadratic_tracking", _obj({"targets": _vec_or_mat,
                                                   "weights": {"anyOf": [_num, _vec, _mat]}},
                                                  required=["targets"])),
                _named("iso_quadratic", _obj({"mu": _pos, "targets": _vec_or_mat}, required=["mu"])),
                _named("smooth_perturbed", _obj({"mu": _pos, "L": _pos, "M": _nonneg,
                                                 "params": _obj({"targets": _vec_or_mat})},
                                                required=["mu", "L", "M"])),
            ],
        },
    },
    **_obj(
        {
            "problem": _obj({
                "dynamic": {"$ref": "#/$defs/dynamic"},
                "cost": {"$ref": "#/$defs/cost"},
                "x0": _vec,
                "horizon": {"type": "integer", "minimum": 1},
                "u0": {"anyOf": [_vec, _mat]},
            }, required=["dynamic", "cost", "x0", "horizon"]),
            "solver": _obj({
                "algorithm": {"enum": ["ilqr", "iddp", "gd"]},
                "schedule": {"enum": ["theorem3", "theorem5", "theorem6", "linesearch"]},
                "nu_bar0": _pos,
                "growth": {"type": "number", "exclusiveMinimum": 1},
                "halve_after_accept": {"type": "boolean"},
                "max_iters": {"type": "integer", "minimum": 0},
                "grad_tol": _nonneg,
                "gap_tol": _nonneg,
                "optimal_value": _num,
                "eta": {"anyOf": [_nonneg, {"const": "empirical"}]},
                "gd_step": {"anyOf": [_pos, {"const": "auto"}]},
            }),
            "constants_mode": _obj({
                "mode": {"enum": ["analytic", "sampled"]},
                "box": _obj({"x_radius": {"anyOf": [_pos, _vec]}, "u_radius": {"anyOf": [_pos, _vec]}},
                            required=["x_radius", "u_radius"]),
                "n_samples": {"type": "integer", "minimum": 1},
            }, required=["mode"]),
            "output": _obj({"trace_path": {"type": "string"}, "report_path": {"type": "string"},
                            "record_time": {"type": "boolean"}}),
            "seed": {"type": "integer", "minimum": 0},
        },
        required=["problem"],
    ),
}

_VALIDATOR = Draft202012Validator(SCHEMA)


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path) if path else "/"


def validate(doc: Any) -> None:
    """Raise ``ConfigError`` for the deepest schema violation."""
    errors = list(_VALIDATOR.iter_errors(doc))
    if not errors:
        return
    # prefer the most specific (deepest) error, ties broken by message
    err = max(errors, key=lambda e: (len(e.absolute_path), e.message))
    while err.context:
        err = max(err.context, key=lambda e: (len(e.absolute_path), e.message))
    raise ConfigError(err.message, _pointer(list(err.absolute_path)))


def load(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"cannot read {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    validate(doc)
    return doc


DEFAULT_SOLVER = {
    "algorithm": "ilqr", "schedule": "linesearch", "nu_bar0": 1e-3, "growth": 2.0,
    "halve_after_accept": True, "max_iters": 500, "grad_tol": 1e-9, "gap_tol": 0.0,
}


def _psi(n_x: int, delta: float, kind: str, params: dict, where: str):
    k = params.get("k")
    if isinstance(k, str):
        k = dyn_mod.deadbeat_gains(n_x, delta)
    elif k is not None and len(k) != n_x:
        raise ConfigError(f"expected {n_x} gains, got {len(k)}", where + "/psi_params/k")
    if kind == "identity":
        return dyn_mod.AffinePsi(n_x)
    if kind == "affine":
        return dyn_mod.AffinePsi(n_x, params.get("gain", 1.0), k, params.get("offset", 0.0))
    c = params.get("c")
    if c is not None and len(c) != n_x:
        raise ConfigError(f"expected {n_x} entries, got {len(c)}", where + "/psi_params/c")
    return dyn_mod.TanhMarginPsi(n_x, params.get("amp_y", 0.1), params.get("amp_v", 0.0), k, c)


def build_dynamic(entry: dict, where: str = "/problem/dynamic") -> dyn_mod.DynamicModel:
    name, p = entry["name"], entry["params"]
    wp = where + "/params"
    try:
        if name == "linear":
            return dyn_mod.LinearDynamics(np.array(p["A"], dtype=float), np.array(p["B"], dtype=float))
        if name == "chain":
            n_x, delta = p["n_x"], p["delta"]
            psi = _psi(n_x, delta, p.get("psi", "identity"), p.get("psi_params", {}), wp)
            return dyn_mod.ChainSystem(n_x, delta, psi)
        if name == "multirate":
            return dyn_mod.multirate(build_dynamic(p["base"], wp + "/base"), p["k"])
        if name == "brunovsky":
            return dyn_mod.brunovsky_model(p["n_x"])
        if name == "pendulum":
            return dyn_mod.Pendulum(**p)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), wp) from None
    raise ConfigError(f"unknown dynamic {name!r}", where + "/name")


def build_cost(entry: dict, horizon: int, n_x: int, where: str = "/problem/cost") -> cost_mod.CostModel:
    name, p = entry["name"], entry["params"]
    try:
        if name == "quadratic_tracking":
            return cost_mod.QuadraticTracking(p["targets"], p.get("weights", 1.0), horizon=horizon, n_x=n_x)
        if name == "iso_quadratic":
            return cost_mod.IsoQuadratic(p["mu"], horizon, n_x, p.get("targets"))
        if name == "smooth_perturbed":
            return cost_mod.SmoothPerturbed(p["mu"], p["L"], p["M"], horizon, n_x,
                                            p.get("params", {}).get("targets"))
    except ValueError as exc:
        raise ConfigError(str(exc), where + "/params") from None
    raise ConfigError(f"unknown cost {name!r}", where + "/name")


@dataclass
class Experiment:
    """A validated config turned into live objects."""

    doc: dict
    dyn: dyn_mod.DynamicModel
    cost: cost_mod.CostModel
    x0: np.ndarray
    horizon: int
    u0: Optional[np.ndarray]
    solver: dict
    seed: int
    dyn_constants: dyn_mod.DynamicConstants
    traj_constants: TrajectoryConstants
    box: Optional[dyn_mod.SamplingBox]

    @property
    def cost_constants(self) -> cost_mod.CostConstants:
        return self.cost.constants

    @property
    def surjective(self) -> bool:
        return self.dyn.n_u >= self.dyn.n_x and self.traj_constants.sigma_g > 0

    def optimal_value(self) -> Optional[float]:
        if "optimal_value" in self.solver:
            return float(self.solver["optimal_value"])
        # surjective dynamics reach every stage minimizer, so J* = sum of stage minima
        if self.surjective and self.cost.optimum is not None:
            return self.cost.optimum.total
        return None


def build(doc: dict, horizon: Optional[int] = None) -> Experiment:
    """Construct an experiment; ``horizon`` overrides the configured one."""
    validate(doc)
    doc = copy.deepcopy(doc)
    prob = doc["problem"]
    tau = int(horizon if horizon is not None else prob["horizon"])
    dyn = build_dynamic(prob["dynamic"])
    x0 = np.array(prob["x0"], dtype=float)
    if x0.shape != (dyn.n_x,):
        raise ConfigError(f"expected {dyn.n_x} entries, got {x0.size}", "/problem/x0")
    cost = build_cost(prob["cost"], tau, dyn.n_x)
    u0 = None
    if "u0" in prob:
        u0 = np.array(prob["u0"], dtype=float)
        if u0.ndim == 1:
            if u0.size != dyn.n_u:
                raise ConfigError(f"expected {dyn.n_u} entries, got {u0.size}", "/problem/u0")
            u0 = np.tile(u0, (tau, 1))
        if u0.shape != (tau, dyn.n_u):
            raise ConfigError(f"expected shape ({tau}, {dyn.n_u}), got {u0.shape}", "/problem/u0")
    solver = {**DEFAULT_SOLVER, **doc.get("solver", {})}
    seed = int(doc.get("seed", 0))
    cm = doc.get("constants_mode", {"mode": "analytic"})
    box = None
    if "box" in cm:
        b = cm["box"]
        try:
            box = dyn_mod.SamplingBox.symmetric(dyn.n_x, dyn.n_u, b["x_radius"], b["u_radius"])
        except ValueError as exc:
            raise ConfigError(str(exc), "/constants_mode/box") from None
    if cm["mode"] == "analytic":
        if dyn.analytic_constants is None:
            raise ConfigError("this dynamic has no analytic constants; use mode 'sampled'", "/constants_mode/mode")
        dc = dyn.analytic_constants
    else:
        if box is None:
            raise ConfigError("sampled constants need a box", "/constants_mode")
        dc = dyn_mod.estimate_constants(dyn, box, cm.get("n_samples", 200), seed, prefer_analytic=False)
    return Experiment(doc, dyn, cost, x0, tau, u0, solver, seed, dc, trajectory_constants(dc, tau), box)


def fixture_path(name: str) -> Path:
    """Path of a bundled example config."""
    p = Path(__file__).parent / "data" / name
    if not p.exists():
        raise FileNotFoundError(name)
    return p
