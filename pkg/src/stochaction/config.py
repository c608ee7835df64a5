"""Experiment configuration: schema, validation, round-trip serialization.

Configs are JSON with one nested section per engine.  Validation reports
every violation with its path; cross-section invariants (packet separation,
time-scale hierarchy, grid headroom) are checked at load time so a bad run
fails before any work happens.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import GridSpec, InvalidSystemError, PhysicalConfig
from .spectral import AngularBasis
from .stochastic import StochasticParams
from .trajectories import EnsembleSpec

EXPERIMENT_KINDS = ("born", "trajectories", "prior-average", "repeatability",
                    "appendix", "lambda-sweep", "stochastic-check")


class ConfigError(ValueError):
    """Carries the list of violations, each with its config path."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in violations))


# schema: section -> key -> (type tuple, default)
_SCHEMA: dict[str, dict[str, tuple[tuple[type, ...], Any]]] = {
    "": {
        "experiment": ((str,), None),
        "seed": ((int,), 0),
        "out_dir": ((str,), "out"),
        "threads": ((int,), 1),
        "format": ((str,), "csv"),
        "velocity": ((str,), "effective"),
    },
    "grid": {
        "n_theta": ((int,), 128),
        "q2_min": ((float, int), -4.0),
        "q2_max": ((float, int), 4.0),
        "n_q2": ((int,), 1024),
    },
    "physical": {
        "lambda_mag": ((float, int), 1.0),
        "g": ((float, int), 1.0),
        "t_M": ((float, int), 1.0),
        "sigma": ((float, int), 0.05),
        "sep_factor": ((float, int), 8.0),
    },
    "stochastic": {
        "tau_lambda": ((float, int, type(None)), None),
        "tau_xi": ((float, int), 0.01),
        "dt": ((float, int), 0.001),
        "hierarchy_factor": ((float, int), 10.0),
        "sign_law": ((str,), "iid"),
        "flip_prob": ((float, int), 0.5),
        "xi_mag_law": ((str,), "constant"),
        "xi_mag_spread": ((float, int), 0.0),
    },
    "ensemble": {
        "n_trials": ((int,), 1000),
        "dt_traj": ((float, int), 0.001),
        "integrator": ((str,), "rk4"),
        "node_policy": ((str,), "reject-resample"),
        "fail_on_overflow": ((bool,), False),
        "n_store": ((int,), 20),
        "store_every": ((int,), 10),
    },
    "state": {
        "modes": ((list,), [-1, 0, 1]),
        "weights": ((list,), [0.5, 0.3, 0.2]),
        "phases": ((list, type(None)), None),
        "l_max": ((int,), 8),
        "packet_center": ((float, int), 0.0),
    },
    "prior": {
        "n_mc": ((int,), 100000),
        "z_max": ((float, int), 4.0),
    },
    "repeat": {
        "n_repeats": ((int,), 1000),
    },
    "appendix": {
        "dimension": ((int,), 1),
        "x_min": ((float, int), -8.0),
        "x_max": ((float, int), 8.0),
        "n_points": ((int,), 512),
        "periodic": ((bool,), False),
        "metric": ((str, dict, type(None)), None),
        "vector": ((list, type(None)), None),
        "scalar": ((str, type(None)), None),
        "initial_center": ((float, int), 0.0),
        "initial_width": ((float, int), 1.0),
        "initial_momentum": ((float, int), 0.0),
        "dt": ((float, int), 0.002),
        "n_steps": ((int,), 500),
        "record_every": ((int,), 50),
        "deltas": ((list,), [0.0]),
        "residual_check": ((bool,), False),
        "save_wavefunctions": ((bool,), False),
    },
    "checks": {
        "chi2_p_min": ((float, int), 0.01),
        "max_ambiguous_rate": ((float, int), 1e-3),
        "freq_within_3sigma": ((bool,), True),
        "mean_abs_dev_rtol": ((float, int), 0.01),
        "n_draws": ((int,), 1000000),
        "enabled": ((bool,), True),
    },
    "equivariance": {
        "enabled": ((bool,), False),
        "n_bins": ((int,), 50),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    def section(self, name: str) -> dict:
        return self.raw[name] if name else {k: v for k, v in self.raw.items()
                                            if not isinstance(v, dict)}

    def __getitem__(self, key: str):
        return self.raw[key]

    # typed views onto the engine parameter sections -----------------------

    def grid(self) -> GridSpec:
        g = self.raw["grid"]
        return GridSpec(g["n_theta"], float(g["q2_min"]), float(g["q2_max"]), g["n_q2"])

    def physical(self) -> PhysicalConfig:
        p = self.raw["physical"]
        return PhysicalConfig(lambda_mag=float(p["lambda_mag"]), g=float(p["g"]),
                              t_M=float(p["t_M"]), sigma=float(p["sigma"]),
                              sep_factor=float(p["sep_factor"]))

    def stochastic(self) -> StochasticParams:
        s = self.raw["stochastic"]
        tau_lambda = math.inf if s["tau_lambda"] is None else float(s["tau_lambda"])
        return StochasticParams(
            lambda_mag=float(self.raw["physical"]["lambda_mag"]),
            tau_lambda=tau_lambda, tau_xi=float(s["tau_xi"]), dt=float(s["dt"]),
            hierarchy_factor=float(s["hierarchy_factor"]), sign_law=s["sign_law"],
            flip_prob=float(s["flip_prob"]), xi_mag_law=s["xi_mag_law"],
            xi_mag_spread=float(s["xi_mag_spread"]), seed=self.raw["seed"])

    def ensemble(self) -> EnsembleSpec:
        e = self.raw["ensemble"]
        return EnsembleSpec(n_trials=e["n_trials"], dt_traj=float(e["dt_traj"]),
                            integrator=e["integrator"], node_policy=e["node_policy"])

    def basis(self) -> AngularBasis:
        return AngularBasis(self.raw["state"]["l_max"])

    def coefficients(self) -> dict[int, complex]:
        s = self.raw["state"]
        weights = np.asarray(s["weights"], dtype=float)
        weights = weights / weights.sum()
        phases = s["phases"] or [0.0] * len(weights)
        return {int(m): np.sqrt(w) * np.exp(1j * float(ph))
                for m, w, ph in zip(s["modes"], weights, phases)}


def _check_types(data: dict, violations: list[str]) -> dict:
    merged: dict[str, Any] = {}
    # top-level scalars
    for key, (types, default) in _SCHEMA[""].items():
        if key in data:
            value = data[key]
            if not isinstance(value, types) or (isinstance(value, bool) and bool not in types):
                violations.append(f"{key}: expected {'/'.join(t.__name__ for t in types)}, "
                                  f"got {type(value).__name__}")
            else:
                merged[key] = value
        elif default is not None or type(None) in types:
            merged[key] = default
        else:
            violations.append(f"{key}: required")
    # unknown keys and sections
    for key in data:
        if key in _SCHEMA[""]:
            continue
        if key not in _SCHEMA:
            violations.append(f"{key}: unknown key")
    # sections
    for section, fields in _SCHEMA.items():
        if not section:
            continue
        given = data.get(section, {})
        if not isinstance(given, dict):
            violations.append(f"{section}: expected an object")
            given = {}
        out = {}
        for key, (types, default) in fields.items():
            if key in given:
                value = given[key]
                ok = isinstance(value, types)
                if isinstance(value, bool) and bool not in types:
                    ok = False
                if not ok:
                    violations.append(
                        f"{section}.{key}: expected "
                        f"{'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")
                else:
                    out[key] = value
            else:
                out[key] = default
        for key in given:
            if key not in fields:
                violations.append(f"{section}.{key}: unknown key")
        merged[section] = out
    return merged


def _check_invariants(cfg: dict, violations: list[str]) -> None:
    if cfg.get("experiment") not in EXPERIMENT_KINDS:
        violations.append(f"experiment: must be one of {EXPERIMENT_KINDS}")
    if cfg.get("format") not in ("csv", "json"):
        violations.append("format: must be csv or json")
    if cfg.get("velocity") not in ("effective", "actual"):
        violations.append("velocity: must be effective or actual")
    if cfg.get("threads", 1) < 1:
        violations.append("threads: must be at least 1")
    if violations:
        return

    view = ExperimentConfig(cfg)
    try:
        grid = view.grid()
    except InvalidSystemError as exc:
        violations.append(f"grid: {exc}")
        grid = None
    try:
        physical = view.physical()
    except InvalidSystemError as exc:
        violations.append(f"physical: {exc}")
        physical = None
    try:
        stochastic = view.stochastic()
    except ValueError as exc:
        violations.append(f"stochastic: {exc}")
        stochastic = None
    try:
        ensemble = view.ensemble()
    except ValueError as exc:
        violations.append(f"ensemble: {exc}")
        ensemble = None

    state = cfg["state"]
    if len(state["modes"]) != len(state["weights"]):
        violations.append("state.weights: must match state.modes in length")
    elif state["phases"] is not None and len(state["phases"]) != len(state["modes"]):
        violations.append("state.phases: must match state.modes in length")
    elif physical and grid:
        weights = np.asarray(state["weights"], dtype=float)
        if np.any(weights < 0) or weights.sum() <= 0:
            violations.append("state.weights: must be non-negative with positive total")
        else:
            l_max = state["l_max"]
            if any(abs(int(m)) > l_max for m in state["modes"]):
                violations.append("state.modes: outside |l| <= l_max")
            else:
                occupied = [int(m) for m, w in zip(state["modes"], weights) if w > 0]
                try:
                    physical.check_separation(np.asarray(occupied, dtype=float))
                except InvalidSystemError as exc:
                    violations.append(f"physical.sep_factor: {exc}")
                drift = max((abs(physical.g) * abs(m) * physical.t_M for m in occupied),
                            default=0.0)
                center = float(state["packet_center"])
                margin = 5.0 * physical.sigma
                if (center + drift > grid.q2_max - margin
                        or center - drift < grid.q2_min + margin):
                    violations.append(
                        "grid.q2_max/q2_min: pointer drift leaves the grid "
                        f"(max drift {drift:.3g} plus 5 sigma margin)")
    if stochastic and ensemble:
        try:
            ensemble.validate_against(stochastic)
        except ValueError as exc:
            violations.append(f"ensemble.dt_traj: {exc}")
    if physical and ensemble:
        steps = physical.t_M / ensemble.dt_traj
        if abs(steps - round(steps)) > 1e-9:
            violations.append("ensemble.dt_traj: t_M must be an integral number of steps")
    app = cfg["appendix"]
    if app["dimension"] not in (1, 2):
        violations.append("appendix.dimension: must be 1 or 2")
    if 0.0 not in [float(d) for d in app["deltas"]]:
        violations.append("appendix.deltas: must include the 0 reference entry")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` listing all violations."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"json: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected an object"])
    violations: list[str] = []
    merged = _check_types(data, violations)
    if not violations:
        _check_invariants(merged, violations)
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(merged)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON with every default made explicit; parse round-trips."""
    return json.dumps(cfg.raw, sort_keys=True, indent=2, allow_nan=False) + "\n"
