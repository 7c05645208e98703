"""YAML configuration: strict schema validation, resolution, and hashing.

The file has five sections (problem, basis, design, delay, sim).  Unknown keys
anywhere are hard errors: a silently ignored typo in a coefficient name would
invalidate every downstream number.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
import yaml

from .delayfield import DelayField, load_delay_table
from .errors import ConfigError
from .spectral import (DEFAULT_NODES, DEFAULT_SCAN_STEP, DEFAULT_TOL,
                       Coefficient, Grid, SturmLiouvilleProblem,
                       solve_eigensystem)

_COEF_KEYS = {"kind", "value", "coeffs"}

_SCHEMA = {
    "problem": {
        "required": ("rho", "p", "q", "theta1", "theta2"),
        "optional": (),
    },
    "basis": {
        "required": (),
        "optional": ("n_modes", "n_nodes", "tol", "scan_step"),
    },
    "design": {
        "required": ("D0", "poles", "t0"),
        "optional": ("margin", "sigma_search"),
    },
    "delay": {
        "required": ("kind",),
        "optional": ("amplitude", "omega", "phase", "path", "delta_claimed"),
    },
    "sim": {
        "required": ("y0", "t_end", "dt"),
        "optional": ("n_sim_modes", "rule", "output_decimation"),
    },
}

_BASIS_DEFAULTS = {"n_modes": 20, "n_nodes": DEFAULT_NODES, "tol": DEFAULT_TOL,
                   "scan_step": DEFAULT_SCAN_STEP}
_DESIGN_DEFAULTS = {"margin": 0.0, "sigma_search": True}
_SIM_DEFAULTS = {"n_sim_modes": 20, "rule": "left_riemann", "output_decimation": 1}


def load_config(path, require=("problem", "basis")):
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    return resolve_config(raw, require=require)


def resolve_config(raw, require=("problem", "basis")):
    """Validate ``raw`` and fill defaults; returns a plain nested dict."""
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    for section in require:
        if section not in raw:
            raise ConfigError(f"missing required section: {section}")

    resolved = {}
    for section, content in raw.items():
        spec = _SCHEMA[section]
        if not isinstance(content, dict):
            raise ConfigError(f"section {section} must be a mapping")
        allowed = set(spec["required"]) | set(spec["optional"])
        for key in content:
            if key not in allowed:
                raise ConfigError(f"unknown key: {section}.{key}")
        for key in spec["required"]:
            if key not in content:
                raise ConfigError(f"missing key: {section}.{key}")
        resolved[section] = dict(content)

    if "basis" in resolved or "basis" in require:
        basis = dict(_BASIS_DEFAULTS)
        basis.update(resolved.get("basis", {}))
        resolved["basis"] = basis
    if "design" in resolved:
        d = dict(_DESIGN_DEFAULTS)
        d.update(resolved["design"])
        resolved["design"] = d
    if "delay" in resolved:
        resolved["delay"].setdefault("delta_claimed",
                                     0.0 if resolved["delay"]["kind"] == "constant"
                                     else resolved["delay"].get("amplitude", 0.0))
    if "sim" in resolved:
        s = dict(_SIM_DEFAULTS)
        s.update(resolved["sim"])
        resolved["sim"] = s

    _check_coefficients(resolved)
    return resolved


def _check_coefficients(resolved):
    prob = resolved.get("problem")
    if prob is None:
        return
    for name in ("rho", "p", "q"):
        spec = prob[name]
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ConfigError(f"problem.{name} must be a mapping with a 'kind'")
        extra = set(spec) - _COEF_KEYS
        if extra:
            raise ConfigError(f"unknown key: problem.{name}.{sorted(extra)[0]}")
        if spec["kind"] == "constant":
            if "value" not in spec:
                raise ConfigError(f"missing key: problem.{name}.value")
        elif spec["kind"] == "polynomial":
            if "coeffs" not in spec:
                raise ConfigError(f"missing key: problem.{name}.coeffs")
        else:
            raise ConfigError(
                f"problem.{name}.kind must be 'constant' or 'polynomial', "
                f"got {spec['kind']!r}")
    if "sim" in resolved:
        y0 = resolved["sim"]["y0"]
        if not isinstance(y0, dict) or "kind" not in y0:
            raise ConfigError("sim.y0 must be a mapping with a 'kind'")
        if y0["kind"] == "polynomial" and "coeffs" not in y0:
            raise ConfigError("missing key: sim.y0.coeffs")
        if y0["kind"] == "sampled" and "path" not in y0:
            raise ConfigError("missing key: sim.y0.path")
        if y0["kind"] not in ("polynomial", "sampled"):
            raise ConfigError(f"sim.y0.kind must be 'polynomial' or 'sampled', "
                              f"got {y0['kind']!r}")


def config_hash(resolved):
    """Digest of the canonical JSON form; identical configs hash identically."""
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _coefficient(spec):
    if spec["kind"] == "constant":
        return Coefficient.constant(spec["value"])
    return Coefficient.polynomial(spec["coeffs"])


def build_problem(resolved):
    prob = resolved["problem"]
    return SturmLiouvilleProblem(
        rho=_coefficient(prob["rho"]), p=_coefficient(prob["p"]),
        q=_coefficient(prob["q"]), theta1=float(prob["theta1"]),
        theta2=float(prob["theta2"]))


def build_grid(resolved):
    return Grid.simpson(int(resolved["basis"]["n_nodes"]))


def build_basis(resolved, n_modes=None):
    problem = build_problem(resolved)
    b = resolved["basis"]
    return solve_eigensystem(
        problem, int(n_modes or b["n_modes"]), grid=build_grid(resolved),
        tol=float(b["tol"]), scan_step=float(b["scan_step"]))


def build_delay(resolved, D0):
    d = resolved["delay"]
    kind = d["kind"]
    params = {}
    table = (None, None, None)
    if kind == "uniform_sinusoid":
        for key in ("amplitude", "omega"):
            if key not in d:
                raise ConfigError(f"missing key: delay.{key}")
        params = {"amplitude": float(d["amplitude"]), "omega": float(d["omega"]),
                  "phase": float(d.get("phase", 0.0))}
    elif kind == "paper_example":
        if "amplitude" not in d:
            raise ConfigError("missing key: delay.amplitude")
        params = {"amplitude": float(d["amplitude"])}
    elif kind == "custom_sampled":
        if "path" not in d:
            raise ConfigError("missing key: delay.path")
        table = load_delay_table(d["path"])
    return DelayField(kind=kind, D0=float(D0),
                      delta_claimed=float(d["delta_claimed"]), params=params,
                      table_t=table[0], table_xi=table[1], table_D=table[2])


def build_y0_samples(resolved, grid):
    y0 = resolved["sim"]["y0"]
    if y0["kind"] == "polynomial":
        return Coefficient.polynomial(y0["coeffs"])(grid.nodes)
    data = np.loadtxt(y0["path"], delimiter=",", skiprows=1)
    return np.interp(grid.nodes, data[:, 0], data[:, 1])
