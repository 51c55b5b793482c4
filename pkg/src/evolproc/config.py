"""Experiment configuration: JSON schema, validation and the shipped examples.

A config is a JSON object with ``"schema": "evolproc.config/1"``.  Keys::

    problem          "reaction-diffusion" | "wave" | "scalar"
    name             free text
    coefficients     problem data; expressions may use t, x, s, eps
                       reaction-diffusion: n_cells, a, a_grad_x?, f, growth_rho, delta
                       wave:               n_modes, a, f?
                       scalar:             a, f
    eps_list         geometric parameter grid, at least 4 positive values
                     (wave: alpha_list instead; the parameter is 1 - alpha)
    theta            exponent in (0, 1) used for the rate envelopes
    grid             {tau, t_end, n_steps, rule, q}
    reference_time   t - tau at which errors are compared (a grid node)
    sample_window    [t0, t1] for the eta / xi / gamma samples; defaults to the grid
    samples          {t, tau, u, lambda_per_ray, initial_states}
    initial_state    {radius, seed}
    cutoff           {radius | null, factor}
    contour          {phi, reach, panel_nodes, panel_ratio, quadrature, nodes_per_ray}
    tolerances       {picard_tol, picard_max_iter, neumann_tol, neumann_max_iter, blowup}
    phi_method       "product-integration" | "neumann"
    absorbing        optional {eps_list, f, n_initial, radius, horizon, window, n_cells, n_steps}

Every key except ``problem``, ``coefficients`` and the parameter list has a
default.  Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .expr import parse

SCHEMA = "evolproc.config/1"
PROBLEMS = ("reaction-diffusion", "wave", "scalar")

DEFAULTS: dict = {
    "schema": SCHEMA,
    "name": "",
    "theta": 0.9,
    "grid": {"tau": 0.0, "t_end": 1.0, "n_steps": 64, "rule": "graded", "q": 2.0},
    "reference_time": 1.0,
    "sample_window": None,
    "samples": {"t": 9, "tau": 5, "u": 8, "lambda_per_ray": 20, "initial_states": 3},
    "initial_state": {"radius": 1.0, "seed": 0},
    "cutoff": {"radius": None, "factor": 2.0},
    "contour": {"phi": 3 * math.pi / 4, "reach": 40.0, "panel_nodes": 12, "panel_ratio": 2.0,
                "quadrature": "composite-gauss-legendre", "nodes_per_ray": None},
    "tolerances": {"picard_tol": 1e-8, "picard_max_iter": 100, "neumann_tol": 1e-10,
                   "neumann_max_iter": 200, "blowup": 1e8},
    "phi_method": "product-integration",
    "absorbing": None,
}

COEFFICIENT_KEYS = {
    "reaction-diffusion": {"n_cells": 32, "a": None, "a_grad_x": None, "f": "0", "growth_rho": 1.0, "delta": 1.0},
    "wave": {"n_modes": 16, "a": None, "f": None},
    "scalar": {"a": None, "f": "0"},
}

ABSORBING_DEFAULTS = {"eps_list": [0.0, 0.01, 0.1], "f": "tanh(s)", "n_initial": 10, "radius": 10.0,
                      "horizon": 20.0, "window": 1.0, "n_cells": 16, "n_steps": 16, "seed": 0}

EXPR_VARS = {"a": ("t", "x"), "a_grad_x": ("t", "x"), "f": ("t", "s")}


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    source: str = "<memory>"

    @property
    def problem(self) -> str:
        return self.data["problem"]

    @property
    def sha256(self) -> str:
        return config_hash(self.data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def param_list(self) -> list[float]:
        """The parameter grid ``eps``; for the wave problem ``1 - alpha``."""
        if self.problem == "wave":
            return [1.0 - a for a in self.data["alpha_list"]]
        return list(self.data["eps_list"])


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: dict) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {path + k!r}")
        if isinstance(defaults[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be an object")
            out[k] = _merge(defaults[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _number(data: dict, path: str, lo=None, hi=None, integer=False, lo_open=False):
    node = data
    keys = path.split(".")
    for k in keys:
        node = node[k]
    ok_type = isinstance(node, int) if integer else isinstance(node, (int, float))
    if isinstance(node, bool) or not ok_type:
        raise ConfigError(f"{path!r} must be {'an integer' if integer else 'a number'}, got {node!r}")
    if lo is not None and (node <= lo if lo_open else node < lo):
        raise ConfigError(f"{path!r} must be {'>' if lo_open else '>='} {lo}, got {node}")
    if hi is not None and node > hi:
        raise ConfigError(f"{path!r} must be <= {hi}, got {node}")
    return node


def _check_expr(src, path: str, variables, params=None) -> None:
    if src is None:
        return
    try:
        parse(src, {"eps": 0.0} if params is None else params, variables)
    except ConfigError as exc:
        raise ConfigError(f"in {path!r}: {exc}") from None


def validate(raw: dict, source: str = "<memory>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    schema = raw.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}; expected {SCHEMA!r}")
    problem = raw.pop("problem", None)
    if problem not in PROBLEMS:
        raise ConfigError(f"'problem' must be one of {PROBLEMS}, got {problem!r}")
    coefs = raw.pop("coefficients", None)
    if not isinstance(coefs, dict):
        raise ConfigError("'coefficients' must be an object")
    plist_key = "alpha_list" if problem == "wave" else "eps_list"
    other = "eps_list" if problem == "wave" else "alpha_list"
    if other in raw:
        raise ConfigError(f"unknown key {other!r} for problem {problem!r}")
    plist = raw.pop(plist_key, None)
    data = _merge(DEFAULTS, raw, "")
    data["problem"] = problem
    data["coefficients"] = _merge(COEFFICIENT_KEYS[problem], coefs, "coefficients.")
    if data["coefficients"]["a"] is None:
        raise ConfigError("'coefficients.a' is required")
    for k, vars_ in EXPR_VARS.items():
        if k == "a" and problem != "reaction-diffusion":
            vars_ = ("t",)
        params = {} if problem == "wave" else None
        if k in data["coefficients"]:
            _check_expr(data["coefficients"][k], f"coefficients.{k}", vars_, params)
    if problem == "reaction-diffusion":
        _number(data, "coefficients.n_cells", 2, 512, integer=True)
        _number(data, "coefficients.growth_rho", 1, 3)
        _number(data, "coefficients.delta", 0, 1, lo_open=True)
    if problem == "wave":
        _number(data, "coefficients.n_modes", 1, 256, integer=True)

    if not isinstance(plist, list) or len(plist) < 4:
        raise ConfigError(f"{plist_key!r} must be a list of at least 4 values")
    for v in plist:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{plist_key!r} entries must be numbers, got {v!r}")
    if problem == "wave":
        if any(not 0 < a < 1 for a in plist):
            raise ConfigError("'alpha_list' entries must lie in (0, 1)")
        params = [1 - a for a in plist]
    else:
        if any(v <= 0 for v in plist):
            raise ConfigError("'eps_list' entries must be positive")
        params = list(plist)
    if len(set(params)) != len(params):
        raise ConfigError(f"{plist_key!r} entries must be distinct")
    data[plist_key] = list(plist)

    _number(data, "theta", 0, 1, lo_open=True)
    if data["theta"] >= 1:
        raise ConfigError("'theta' must lie in (0, 1)")
    g = data["grid"]
    _number(data, "grid.n_steps", 8, 4096, integer=True)
    _number(data, "grid.q", 1)
    if g["rule"] not in ("uniform", "graded"):
        raise ConfigError(f"'grid.rule' must be 'uniform' or 'graded', got {g['rule']!r}")
    if not g["tau"] < g["t_end"]:
        raise ConfigError("'grid.tau' must be smaller than 'grid.t_end'")
    ref = _number(data, "reference_time", 0, lo_open=True)
    if ref > g["t_end"] - g["tau"] + 1e-12:
        raise ConfigError("'reference_time' lies beyond the grid")
    win = data["sample_window"]
    if win is not None:
        if (not isinstance(win, list) or len(win) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in win)
                or not win[0] < win[1]):
            raise ConfigError("'sample_window' must be [t0, t1] with t0 < t1")
    for k in ("t", "tau", "u", "lambda_per_ray", "initial_states"):
        _number(data, f"samples.{k}", 1, 10000, integer=True)
    if data["samples"]["t"] < 4:
        raise ConfigError("'samples.t' must be at least 4")
    _number(data, "initial_state.radius", 0, lo_open=True)
    _number(data, "initial_state.seed", 0, integer=True)
    if data["cutoff"]["radius"] is not None:
        _number(data, "cutoff.radius", 0, lo_open=True)
    _number(data, "cutoff.factor", 0, lo_open=True)
    if data["phi_method"] not in ("product-integration", "neumann"):
        raise ConfigError(f"unknown 'phi_method' {data['phi_method']!r}")
    if data["absorbing"] is not None:
        data["absorbing"] = _merge(ABSORBING_DEFAULTS, data["absorbing"], "absorbing.")
        _check_expr(data["absorbing"]["f"], "absorbing.f", ("t", "s"))
        if problem != "reaction-diffusion":
            raise ConfigError("'absorbing' is only supported for the reaction-diffusion problem")
    return ExperimentConfig(data, source)


def load_config(path) -> ExperimentConfig:
    """Read and validate; a missing file raises ``FileNotFoundError``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}", exc.pos) from None
    try:
        return validate(raw, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


EXAMPLES: dict[str, dict] = {
    "rd-paper": {
        "schema": SCHEMA,
        "problem": "reaction-diffusion",
        "name": "rd-paper",
        "coefficients": {"n_cells": 32, "a": "2 + sin(t)*cos(pi*x) + eps*x", "a_grad_x": "-pi*sin(t)*sin(pi*x) + eps",
                         "f": "tanh(s) + eps*sin(s)", "growth_rho": 1.0, "delta": 1.0},
        "eps_list": [0.1, 0.03, 0.01, 0.003],
        "theta": 0.9,
        "grid": {"tau": 0.0, "t_end": 1.0, "n_steps": 64, "rule": "graded", "q": 2.0},
        "reference_time": 1.0,
        "absorbing": dict(ABSORBING_DEFAULTS),
    },
    "wave-paper": {
        "schema": SCHEMA,
        "problem": "wave",
        "name": "wave-paper",
        "coefficients": {"n_modes": 16, "a": "1.5 + 0.4*sin(t)"},
        "alpha_list": [0.6, 0.8, 0.9, 0.95, 0.99],
        "theta": 0.9,
        "grid": {"tau": 0.0, "t_end": 1.0, "n_steps": 32, "rule": "graded", "q": 2.0},
        "reference_time": 1.0,
        "sample_window": [0.0, 2 * math.pi],
        "samples": {"t": 64, "tau": 5, "u": 8, "lambda_per_ray": 20, "initial_states": 3},
    },
    "scalar-sanity": {
        "schema": SCHEMA,
        "problem": "scalar",
        "name": "scalar-sanity",
        "coefficients": {"a": "1 + 0.5*t + eps", "f": "0.5*tanh(s) + eps*sin(s)"},
        "eps_list": [0.1, 0.03, 0.01, 0.003],
        "theta": 0.9,
        "grid": {"tau": 0.0, "t_end": 1.0, "n_steps": 32, "rule": "graded", "q": 2.0},
        "reference_time": 1.0,
    },
}


def example_config(name: str) -> dict:
    if name not in EXAMPLES:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}")
    return copy.deepcopy(EXAMPLES[name])
