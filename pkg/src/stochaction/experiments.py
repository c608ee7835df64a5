"""Batch experiment execution and artifact serialization.

Every run writes its result files plus ``manifest.json`` carrying the echoed
config, the package version, the seed, per-file content hashes and the wall
time.  Result files are byte-identical across repeat runs and across thread
counts for a fixed (config, seed); the manifest is excluded from that
contract because it records the wall time, but its file-hash map is itself
deterministic.
"""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .core import DomainOverflowError, field_to_binary, field_to_csv
from .gridop import (CartesianGrid, build_metric_hamiltonian, evolve_grid,
                     verify_hjm_residual)
from .measurement import (average_prior, prepare_initial_state, run_ensemble,
                          run_single_event)
from .potentials import LambdaSweep, run_lambda_sweep, system_from_expressions
from .rng import GENERIC, stream
from .spectral import GaussianPacket
from .stochastic import (ActionIncrement, check_separability, gaussian_log_weight,
                         sample_deviation, sample_sign_path)
from .trajectories import ModeFlow, equivariance_report, integrate_trajectory

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECKS = 3


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _float(x) -> float:
    return float(np.asarray(x).item())


class RunOutput:
    """Collects result files, then writes them with a hashed manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.files: dict[str, bytes] = {}

    def add_text(self, name: str, text: str) -> None:
        self.files[name] = text.encode()

    def add_json(self, name: str, obj) -> None:
        self.add_text(name, canonical_json(obj))

    def add_bytes(self, name: str, blob: bytes) -> None:
        self.files[name] = blob

    def write(self, cfg: ExperimentConfig, started: float) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, blob in sorted(self.files.items()):
            (self.out_dir / name).write_bytes(blob)
            hashes[name] = hashlib.sha256(blob).hexdigest()
        manifest = {
            "config": cfg.raw,
            "seed": cfg["seed"],
            "package_version": __version__,
            "files": hashes,
            "wall_time_s": time.monotonic() - started,
        }
        (self.out_dir / "manifest.json").write_bytes(canonical_json(manifest).encode())


def _check_block(checks: list[tuple[str, bool, str]]) -> dict:
    return {
        "passed": bool(all(ok for _, ok, _ in checks)),
        "items": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in checks],
    }


def _csv(rows: list[list], header: list[str]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for c in row:
            if isinstance(c, float):
                cells.append(repr(c))
            else:
                cells.append(str(c))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _prepared_state(cfg: ExperimentConfig):
    packet = GaussianPacket(float(cfg["state"]["packet_center"]),
                            cfg.physical().sigma)
    return prepare_initial_state(cfg.coefficients(), packet, cfg.physical(),
                                 cfg.grid(), cfg.basis())


def _run_born(cfg: ExperimentConfig, out: RunOutput) -> int:
    physical = cfg.physical()
    espec = cfg.ensemble()
    state0 = _prepared_state(cfg)
    stoch = cfg.stochastic() if cfg["velocity"] == "actual" else None
    n_steps = int(round(physical.t_M / espec.dt_traj))
    snapshot_steps = (n_steps,) if cfg["equivariance"]["enabled"] else ()
    records, stats, extras = run_ensemble(
        state0, physical, espec, cfg["ensemble"]["n_trials"], cfg["seed"],
        velocity=cfg["velocity"], stoch=stoch, threads=cfg["threads"],
        snapshot_steps=snapshot_steps)

    if cfg["ensemble"]["fail_on_overflow"]:
        for rec in records:
            if rec.overflow:
                raise DomainOverflowError(
                    f"trial {rec.trial_seed} left the pointer grid")

    out.add_text("records.jsonl",
                 "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records))
    rows = [[int(i), _float(w), int(c), _float(f), _float(p), _float(se)]
            for i, w, c, f, p, se in zip(stats.indices, stats.omegas, stats.counts,
                                         stats.frequencies, stats.reference,
                                         stats.standard_errors)]
    header = ["outcome_index", "omega", "count", "frequency", "reference", "se"]
    if cfg["format"] == "csv":
        out.add_text("frequencies.csv", _csv(rows, header))
    else:
        out.add_json("frequencies.json", [dict(zip(header, r)) for r in rows])

    summary = {"stats": stats.to_dict()}
    status = EXIT_OK
    if cfg["checks"]["enabled"]:
        ck = cfg["checks"]
        items = [
            ("ambiguous_rate", stats.ambiguous_rate < ck["max_ambiguous_rate"],
             f"rate {stats.ambiguous_rate:.2e} budget {ck['max_ambiguous_rate']:.2e}"),
            ("chi2_p", stats.chi2_p > ck["chi2_p_min"],
             f"p {stats.chi2_p:.4g} floor {ck['chi2_p_min']}"),
        ]
        if ck["freq_within_3sigma"]:
            dev = np.abs(stats.frequencies - stats.reference)
            ok = bool(np.all(dev <= 3.0 * stats.standard_errors + 1e-15))
            items.append(("freq_within_3sigma", ok,
                          f"max |f - p| = {float(dev.max()):.4g}"))
        summary["checks"] = _check_block(items)
        if not summary["checks"]["passed"]:
            status = EXIT_CHECKS
    if cfg["equivariance"]["enabled"]:
        snaps = extras["snapshots"]
        report = equivariance_report(snaps, state0, physical.g,
                                     n_bins=cfg["equivariance"]["n_bins"])
        summary["equivariance"] = {repr(t): r for t, r in report.items()}
    out.add_json("summary.json", summary)
    return status


def _run_trajectories(cfg: ExperimentConfig, out: RunOutput) -> int:
    physical = cfg.physical()
    espec = cfg.ensemble()
    state0 = _prepared_state(cfg)
    flow = ModeFlow(state0, physical.g)
    stoch = cfg.stochastic() if cfg["velocity"] == "actual" else None
    n_steps = int(round(physical.t_M / espec.dt_traj))
    n_store = min(cfg["ensemble"]["n_store"], cfg["ensemble"]["n_trials"])
    every = max(1, cfg["ensemble"]["store_every"])

    rows = []
    from .measurement import _initial_draws, _sign_paths  # shared trial streams
    q0 = _initial_draws(state0, cfg["seed"], np.arange(n_store))
    for trial in range(n_store):
        sign_path = None
        if cfg["velocity"] == "actual":
            sign_path = _sign_paths(cfg["seed"], np.array([trial]), n_steps, stoch)[0]
        traj = integrate_trajectory(
            q0[trial], flow, espec, physical.t_M, sign_path=sign_path,
            lambda_mag=physical.lambda_mag, t0=state0.t, seed=cfg["seed"],
            q2_bounds=(state0.grid.q2_min, state0.grid.q2_max))
        for k in range(0, len(traj.times), every):
            sign = int(traj.lambda_signs[min(k, len(traj.lambda_signs) - 1)])
            rows.append([trial, _float(traj.times[k]), _float(traj.configs[k, 0]),
                         _float(traj.configs[k, 1]), sign])
    out.add_text("trajectories.csv",
                 _csv(rows, ["trial", "t", "theta1", "q2", "lambda_sign"]))

    records, stats, extras = run_ensemble(
        state0, physical, espec, cfg["ensemble"]["n_trials"], cfg["seed"],
        velocity=cfg["velocity"], stoch=stoch, threads=cfg["threads"],
        snapshot_steps=(n_steps,))
    final = extras["final_configs"]
    hist_theta, edges_theta = np.histogram(np.mod(final[:, 0], 2 * np.pi), bins=36,
                                           range=(0.0, 2 * np.pi))
    hist_q2, edges_q2 = np.histogram(final[:, 1], bins=50,
                                     range=(state0.grid.q2_min, state0.grid.q2_max))
    summary = {
        "endpoint_histograms": {
            "theta": {"counts": hist_theta.tolist(), "edges": edges_theta.tolist()},
            "q2": {"counts": hist_q2.tolist(), "edges": edges_q2.tolist()},
        },
        "stats": stats.to_dict(),
    }
    if cfg["equivariance"]["enabled"]:
        report = equivariance_report(extras["snapshots"], state0, physical.g,
                                     n_bins=cfg["equivariance"]["n_bins"])
        summary["equivariance"] = {repr(t): r for t, r in report.items()}
    out.add_json("summary.json", summary)
    return EXIT_OK


def _run_prior_average(cfg: ExperimentConfig, out: RunOutput) -> int:
    basis = cfg.basis()
    coeffs = np.zeros(len(basis.modes), dtype=complex)
    for l, c in cfg.coefficients().items():
        coeffs[np.flatnonzero(basis.modes == l)[0]] = c
    result = average_prior(coeffs, basis, cfg["prior"]["n_mc"], cfg["seed"],
                           lambda_mag=cfg.physical().lambda_mag)
    z = abs(result["mean"] - result["analytic"]) / max(result["se"], 1e-300)
    summary = {"prior_average": result, "z_score": z}
    status = EXIT_OK
    if cfg["checks"]["enabled"]:
        summary["checks"] = _check_block(
            [("mc_matches_analytic", z <= cfg["prior"]["z_max"],
              f"z = {z:.3f} limit {cfg['prior']['z_max']}")])
        if not summary["checks"]["passed"]:
            status = EXIT_CHECKS
    out.add_json("summary.json", summary)
    return status


def _run_repeatability(cfg: ExperimentConfig, out: RunOutput) -> int:
    physical = cfg.physical()
    espec = cfg.ensemble()
    state0 = _prepared_state(cfg)
    first = run_single_event(state0, physical, espec, cfg["seed"], trial=0,
                             velocity=cfg["velocity"],
                             stoch=cfg.stochastic() if cfg["velocity"] == "actual" else None)
    if first.outcome_index is None:
        raise DomainOverflowError("first event was flagged; cannot test repetition")
    collapsed = prepare_initial_state(
        {first.outcome_index: 1.0},
        GaussianPacket(state0.packet.center, state0.packet.sigma), physical,
        state0.grid, state0.modes.basis)
    n_rep = cfg["repeat"]["n_repeats"]
    records, stats, _ = run_ensemble(collapsed, physical, espec, n_rep,
                                     cfg["seed"] + 1, threads=cfg["threads"])
    agree = sum(1 for r in records if r.outcome_index == first.outcome_index)
    summary = {
        "first_outcome": first.outcome_index,
        "n_repeats": n_rep,
        "n_agreeing": agree,
        "agreement": agree / n_rep,
    }
    status = EXIT_OK
    if cfg["checks"]["enabled"]:
        summary["checks"] = _check_block(
            [("always_same_outcome", agree == n_rep, f"{agree}/{n_rep}")])
        if not summary["checks"]["passed"]:
            status = EXIT_CHECKS
    out.add_json("summary.json", summary)
    return status


def _appendix_setup(cfg: ExperimentConfig):
    app = cfg["appendix"]
    grid = CartesianGrid((float(app["x_min"]),), (float(app["x_max"]),),
                         (app["n_points"],), (app["periodic"],))
    system = system_from_expressions(app["dimension"], metric=app["metric"],
                                     vector=app["vector"], scalar=app["scalar"])
    x = grid.axis(0)
    width = float(app["initial_width"])
    psi0 = np.exp(-((x - float(app["initial_center"])) ** 2) / (4.0 * width**2)
                  + 1j * float(app["initial_momentum"]) * x)
    psi0 = psi0 / np.sqrt(grid.norm2(psi0))
    return grid, system, psi0


def _run_appendix(cfg: ExperimentConfig, out: RunOutput) -> int:
    app = cfg["appendix"]
    grid, system, psi0 = _appendix_setup(cfg)
    lam = cfg.physical().lambda_mag
    op = build_metric_hamiltonian(system, lam, grid)
    final, history = evolve_grid(psi0, op, float(app["dt"]), app["n_steps"],
                                 record_every=app["record_every"])
    x = grid.axis(0)
    rows = []
    for t, snap in history:
        dens = np.abs(snap) ** 2
        total = dens.sum() * grid.cell_volume
        mean = float(np.sum(x * dens) * grid.cell_volume / total)
        sq = float(np.sum(x**2 * dens) * grid.cell_volume / total)
        rows.append([_float(t), _float(total), mean, sq])
    out.add_text("observables.csv", _csv(rows, ["t", "norm", "position", "position_sq"]))
    summary = {"final_norm": _float(grid.norm2(final)), "n_steps": app["n_steps"],
               "lambda_mag": lam}
    if app["residual_check"]:
        res = verify_hjm_residual(history, system, grid, lam)
        summary["hjm_residuals"] = res
    if app["save_wavefunctions"]:
        out.add_text("psi_final.csv", field_to_csv(final, [x], ["q"]))
        out.add_bytes("psi_final.wfsn", field_to_binary(final, [x]))
    out.add_json("summary.json", summary)
    return EXIT_OK


def _run_lambda_sweep(cfg: ExperimentConfig, out: RunOutput) -> int:
    app = cfg["appendix"]
    grid, system, psi0 = _appendix_setup(cfg)
    sweep = LambdaSweep(deltas=tuple(float(d) for d in app["deltas"]),
                        base=cfg.physical().lambda_mag)
    results = run_lambda_sweep(system, psi0, grid, sweep, float(app["dt"]),
                               app["n_steps"], app["record_every"])
    rows = []
    obs_names = None
    for delta in sorted(results):
        entry = results[delta]
        for row in entry["series"]:
            if obs_names is None:
                obs_names = [k for k in row if k != "t"]
            rows.append([_float(delta), _float(entry["lambda"]), _float(row["t"])]
                        + [_float(row[k]) for k in obs_names])
    out.add_text("sweep.csv", _csv(rows, ["delta", "lambda", "t"] + obs_names))
    summary = {
        "deviations": {repr(d): results[d]["max_deviation_from_reference"]
                       for d in sorted(results)},
    }
    status = EXIT_OK
    if cfg["checks"]["enabled"]:
        ref_dev = results[0.0]["max_deviation_from_reference"]
        summary["checks"] = _check_block(
            [("reference_zero_deviation", ref_dev == 0.0, f"delta=0 deviation {ref_dev!r}")])
        if not summary["checks"]["passed"]:
            status = EXIT_CHECKS
    out.add_json("summary.json", summary)
    return status


def _run_stochastic_check(cfg: ExperimentConfig, out: RunOutput) -> int:
    params = cfg.stochastic()
    n = cfg["checks"]["n_draws"]
    r = stream(cfg["seed"], GENERIC, 0)
    draws = sample_deviation(params, +1, r, size=n)
    mean_abs = float(np.mean(np.abs(draws)))
    sign_locked = bool(np.all(draws >= 0.0))
    expected = params.lambda_mag / 2.0

    path = sample_sign_path(params, n, stream(cfg["seed"], GENERIC, 1))
    sign_mean = float(np.mean(path))
    lag1 = float(np.mean(path[:-1] * path[1:]))

    r2 = stream(cfg["seed"], GENERIC, 2)
    worst = 0.0
    worst_gauss = 0.0
    for _ in range(1000):
        inc1 = ActionIncrement.from_deviation(float(r2.uniform(0.0, 2.0)))
        inc2 = ActionIncrement.from_deviation(float(r2.uniform(0.0, 2.0)))
        th1, th2 = r2.uniform(0.0, 0.5, size=2)
        lpj, lp1, lp2 = check_separability(inc1, inc2, params.lambda_mag, th1, th2)
        worst = max(worst, abs(lpj - lp1 - lp2))
        gj, g1, g2 = check_separability(inc1, inc2, params.lambda_mag, th1, th2,
                                        log_weight=gaussian_log_weight)
        worst_gauss = max(worst_gauss, abs(gj - g1 - g2))

    summary = {
        "mean_abs_deviation": mean_abs,
        "expected_mean": expected,
        "sign_locked": sign_locked,
        "sign_path_mean": sign_mean,
        "sign_path_lag1": lag1,
        "separability_max_error": float(worst),
        "gaussian_control_max_error": float(worst_gauss),
        "n_draws": n,
    }
    status = EXIT_OK
    if cfg["checks"]["enabled"]:
        rtol = cfg["checks"]["mean_abs_dev_rtol"]
        items = [
            ("mean_abs_deviation", abs(mean_abs - expected) <= rtol * expected,
             f"{mean_abs:.5f} vs {expected:.5f}"),
            ("sign_lock", sign_locked, "all draws share the scale sign"),
            ("separability", worst < 1e-12, f"max error {worst:.3e}"),
            ("gaussian_control_fails", worst_gauss > 1e-2,
             f"gaussian max error {worst_gauss:.3e}"),
        ]
        summary["checks"] = _check_block(items)
        if not summary["checks"]["passed"]:
            status = EXIT_CHECKS
    out.add_json("summary.json", summary)
    return status


_RUNNERS = {
    "born": _run_born,
    "trajectories": _run_trajectories,
    "prior-average": _run_prior_average,
    "repeatability": _run_repeatability,
    "appendix": _run_appendix,
    "lambda-sweep": _run_lambda_sweep,
    "stochastic-check": _run_stochastic_check,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Execute a validated config; returns the exit status (0 or 3).

    Runtime failures raise; the CLI turns them into a structured error file
    and exit status 2.
    """
    started = time.monotonic()
    out = RunOutput(Path(cfg["out_dir"]))
    status = _RUNNERS[cfg["experiment"]](cfg, out)
    out.write(cfg, started)
    return status
