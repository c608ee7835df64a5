"""End-to-end measurement pipeline.

A run prepares the product state (system superposition x pointer packet),
lets the joint wavefunction evolve in closed form while a trajectory of the
definite configuration is integrated underneath it, and reads the outcome off
the pointer position: the packet window that ``q2(t_M)`` landed in names the
recorded eigenvalue.  The wavefunction never collapses during an event; the
replacement of the system state by the correlated eigenfunction between
successive measurements is an explicit bookkeeping step
(:func:`repeat_measurement`).

Position and linear-momentum measurements reuse the same pipeline through
:func:`substitute_observable`, with bin centers standing in for the discrete
spectrum.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import rng as rngmod
from .core import (HBAR, DegenerateInputError, GridSpec, InvalidSystemError,
                   PhysicalConfig)
from .spectral import (AngularBasis, GaussianPacket, LineModes, PlaneWaveModes,
                       RingModes, SpectralState, evolve_measurement_spectral)
from .stochastic import StochasticParams, sample_sign_path
from .trajectories import (EnsembleSpec, ModeFlow, PointerReadoutFlow,
                           integrate_ensemble, sample_ring_angles, _sample_line)

_CHUNK = 1024  # fixed ensemble chunk size; independent of thread count


@dataclass(frozen=True)
class MeasurementRecord:
    """One trial: initial configuration, pointer landing, inferred outcome."""

    outcome_index: int | None
    omega: float | None
    q2_initial: float
    q2_final: float
    theta_initial: float
    lambda_sign0: int
    trial_seed: int
    ambiguous: bool = False
    overflow: bool = False

    def to_dict(self) -> dict:
        return {
            "trial": self.trial_seed,
            "outcome_index": self.outcome_index,
            "omega": self.omega,
            "q2_initial": self.q2_initial,
            "q2_final": self.q2_final,
            "theta_initial": self.theta_initial,
            "lambda_sign0": self.lambda_sign0,
            "ambiguous": self.ambiguous,
            "overflow": self.overflow,
        }


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Outcome frequencies against the squared coefficients."""

    indices: np.ndarray          # support mode identifiers
    omegas: np.ndarray
    reference: np.ndarray        # |c|^2 per support mode
    counts: np.ndarray
    n_trials: int
    n_ambiguous: int
    n_overflow: int

    @property
    def n_used(self) -> int:
        return self.n_trials - self.n_ambiguous - self.n_overflow

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.n_used, 1)

    @property
    def standard_errors(self) -> np.ndarray:
        p = self.reference
        return np.sqrt(p * (1.0 - p) / max(self.n_used, 1))

    @property
    def chi2(self) -> float:
        occupied = self.reference > 0
        if np.any(self.counts[~occupied] > 0):
            return float("inf")   # landed in a category of reference weight zero
        expected = self.reference[occupied] * self.n_used
        return float(np.sum((self.counts[occupied] - expected) ** 2 / expected))

    @property
    def chi2_p(self) -> float:
        df = int(np.count_nonzero(self.reference > 0)) - 1
        return float(sps.chi2.sf(self.chi2, df=max(df, 1)))

    @property
    def ambiguous_rate(self) -> float:
        return self.n_ambiguous / self.n_trials

    def mean_omega(self) -> tuple[float, float]:
        """Ensemble mean of recorded eigenvalues with its standard error."""
        w = self.frequencies
        mean = float(np.sum(w * self.omegas))
        var = float(np.sum(w * (self.omegas - mean) ** 2))
        return mean, np.sqrt(var / max(self.n_used, 1))

    def to_dict(self) -> dict:
        mean, se = self.mean_omega()
        return {
            "indices": [int(i) for i in self.indices],
            "omegas": [float(w) for w in self.omegas],
            "reference": [float(p) for p in self.reference],
            "counts": [int(c) for c in self.counts],
            "frequencies": [float(f) for f in self.frequencies],
            "standard_errors": [float(s) for s in self.standard_errors],
            "chi2": self.chi2,
            "chi2_p": self.chi2_p,
            "n_trials": self.n_trials,
            "n_ambiguous": self.n_ambiguous,
            "n_overflow": self.n_overflow,
            "mean_omega": mean,
            "mean_omega_se": se,
        }


@dataclass(frozen=True, eq=False)
class MeasurementPipeline:
    """Prepared state, velocity rule and outcome-inference rule for one observable.

    Discrete spectra use ``outcome_mode="windows"``: the landing must fall in
    the unique packet window ``sep_factor * sigma / 2`` around one center.
    Binned continuous spectra use ``"ranges"``: the pointer shift is mapped
    back through the classical relation and binned by the observable edges.
    """

    state0: SpectralState
    flow_kind: str               # "mode" or "pointer-readout"
    outcome_mode: str            # "windows" or "ranges"
    outcome_indices: np.ndarray  # category labels (mode numbers or bin indices)
    outcome_values: np.ndarray   # recorded eigenvalue per category
    outcome_reference: np.ndarray  # squared-coefficient weight per category
    outcome_edges: np.ndarray | None = None  # bin edges, observable units
    coverage: float = 1.0
    x_bounds: tuple[float, float] | None = None

    def infer(self, q2_final: float, centers_tm: np.ndarray, window: float,
              config: PhysicalConfig):
        """Category index of a landing, or None when ambiguous."""
        if self.outcome_mode == "windows":
            hits = np.flatnonzero(np.abs(q2_final - centers_tm) < window)
            return int(hits[0]) if len(hits) == 1 else None
        value_hat = (q2_final - self.state0.packet.center) / (config.g * config.t_M)
        edges = self.outcome_edges
        if value_hat < edges[0] or value_hat >= edges[-1]:
            return None
        return int(np.searchsorted(edges, value_hat, side="right") - 1)

    def centers_at(self, config: PhysicalConfig) -> np.ndarray:
        """Per-category packet centers at readout time (windows mode)."""
        if self.outcome_mode == "windows":
            sup = self.state0.support_indices()
            return (self.state0.centers[sup]
                    + config.g * self.state0.omegas[sup] * config.t_M)
        return np.array([])


def prepare_initial_state(coeffs, packet: GaussianPacket, config: PhysicalConfig,
                          grid: GridSpec, basis: AngularBasis | None = None,
                          enforce_separation: bool = True) -> SpectralState:
    """Product preparation at t = 0 with every packet center at the packet origin.

    ``coeffs`` is either a mapping {mode number: amplitude} or a full complex
    vector over the basis modes.  Amplitudes must already be normalized; the
    packet-separation invariant is checked against the occupied spectrum
    unless explicitly disabled for diagnostics.
    """
    basis = basis or AngularBasis()
    if isinstance(coeffs, dict):
        vec = np.zeros(len(basis.modes), dtype=complex)
        for l, c in coeffs.items():
            matches = np.flatnonzero(basis.modes == l)
            if len(matches) == 0:
                raise InvalidSystemError(f"mode {l} outside basis range |l| <= {basis.l_max}")
            vec[matches[0]] = c
    else:
        vec = np.asarray(coeffs, dtype=complex)
    total = float(np.sum(np.abs(vec) ** 2))
    if abs(total - 1.0) > 1e-10:
        raise DegenerateInputError(f"coefficients must be normalized: sum |c|^2 = {total!r}")
    modes = RingModes(basis)
    support = np.flatnonzero(np.abs(vec) ** 2 > 1e-14)
    if enforce_separation:
        config.check_separation(modes.omegas[support])
    centers = np.full(len(vec), packet.center)
    return SpectralState(coeffs=vec, modes=modes, packet=packet, centers=centers,
                         t=0.0, grid=grid)


def _resolve_pipeline(prepared) -> MeasurementPipeline:
    if isinstance(prepared, MeasurementPipeline):
        return prepared
    state = prepared
    sup = state.support_indices()
    if isinstance(state.modes, RingModes):
        labels = state.modes.basis.modes[sup]
    else:
        labels = sup
    return MeasurementPipeline(
        state0=state, flow_kind="mode", outcome_mode="windows",
        outcome_indices=np.asarray(labels), outcome_values=state.omegas[sup],
        outcome_reference=np.abs(state.coeffs[sup]) ** 2)


def _make_flow(pipe: MeasurementPipeline, config: PhysicalConfig):
    if pipe.flow_kind == "pointer-readout":
        return PointerReadoutFlow(config.g)
    return ModeFlow(pipe.state0, config.g)


def _outcome_window(config: PhysicalConfig) -> float:
    return config.sep_factor * config.sigma / 2.0


def _initial_draws(state0: SpectralState, seed: int, trials: np.ndarray) -> np.ndarray:
    """Per-trial product-form draws from |Psi(0)|^2, one counter stream each."""
    out = np.empty((len(trials), 2))
    if isinstance(state0.modes, RingModes):
        fine = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
        dens_fine = np.abs(np.tensordot(state0.coeffs, state0.modes.values(fine), axes=1)) ** 2
        bound = 1.05 * float(dens_fine.max())
        for k, trial in enumerate(trials):
            r = rngmod.stream(seed, rngmod.INITIAL, int(trial))
            while True:
                th = r.uniform(0.0, 2.0 * np.pi, size=8)
                u = r.uniform(0.0, bound, size=8)
                dens = np.abs(np.tensordot(state0.coeffs, state0.modes.values(th), axes=1)) ** 2
                ok = np.flatnonzero(u < dens)
                if len(ok):
                    out[k, 0] = th[ok[0]]
                    break
            out[k, 1] = r.normal(state0.centers[0], state0.packet.sigma)
    else:
        xg = state0.modes.x_grid
        if isinstance(state0.modes, PlaneWaveModes):
            table = state0.modes.values(xg)
        else:
            table = state0.modes.table
        dens = np.abs(np.tensordot(state0.coeffs, table, axes=1)) ** 2
        for k, trial in enumerate(trials):
            r = rngmod.stream(seed, rngmod.INITIAL, int(trial))
            out[k, 0] = _sample_line(dens, xg, 1, r)[0]
            out[k, 1] = r.normal(state0.centers[0], state0.packet.sigma)
    return out


def _sign_paths(seed: int, trials: np.ndarray, n_steps: int,
                stoch: StochasticParams) -> np.ndarray:
    paths = np.empty((len(trials), n_steps), dtype=np.int8)
    for k, trial in enumerate(trials):
        r = rngmod.stream(seed, rngmod.SIGNS, int(trial))
        paths[k] = sample_sign_path(stoch, n_steps, r)
    return paths


def _run_chunk(pipe: MeasurementPipeline, config: PhysicalConfig, spec: EnsembleSpec,
               seed: int, trials: np.ndarray, velocity: str,
               stoch: StochasticParams | None, snapshot_steps: tuple[int, ...]):
    state0 = pipe.state0
    flow = _make_flow(pipe, config)
    q0 = _initial_draws(state0, seed, trials)
    n_steps = int(round(config.t_M / spec.dt_traj))
    sign_paths = None
    signs0 = np.ones(len(trials), dtype=np.int8)
    if velocity == "actual":
        if stoch is None:
            raise ValueError("actual-velocity runs need StochasticParams")
        spec.validate_against(stoch)
        sign_paths = _sign_paths(seed, trials, n_steps, stoch)
        signs0 = sign_paths[:, 0]
    else:
        # the prior observable still carries a hidden sign at t = 0
        for k, trial in enumerate(trials):
            r = rngmod.stream(seed, rngmod.SIGNS, int(trial))
            signs0[k] = np.int8(r.integers(0, 2) * 2 - 1)
    result = integrate_ensemble(
        flow, q0, spec, t0=state0.t, duration=config.t_M,
        sign_paths=sign_paths, lambda_mag=config.lambda_mag,
        q2_bounds=(state0.grid.q2_min, state0.grid.q2_max),
        x_bounds=pipe.x_bounds, snapshot_steps=snapshot_steps)
    return q0, result, signs0


def _merge_chunks(parts, snapshot_steps):
    q0 = np.concatenate([p[0] for p in parts])
    configs = np.concatenate([p[1]["configs"] for p in parts])
    overflow = np.concatenate([p[1]["overflow"] for p in parts])
    clamped = np.concatenate([p[1]["node_clamped"] for p in parts])
    signs0 = np.concatenate([p[2] for p in parts])
    snaps = {s: np.concatenate([p[1]["snapshots"][s] for p in parts])
             for s in snapshot_steps}
    return q0, configs, overflow, clamped, signs0, snaps


def run_ensemble(prepared, config: PhysicalConfig, spec: EnsembleSpec, n_trials: int,
                 seed: int, velocity: str = "effective",
                 stoch: StochasticParams | None = None, threads: int = 1,
                 snapshot_steps: tuple[int, ...] = ()):
    """Seeded batch of measurement events.

    Returns ``(records, stats, extras)`` where extras carries trajectory
    snapshots for equivariance diagnostics.  Trials are integrated in fixed
    chunks whose results are identical at any thread count.
    """
    if velocity not in ("effective", "actual"):
        raise ValueError(f"unknown velocity source {velocity!r}")
    pipe = _resolve_pipeline(prepared)
    state0 = pipe.state0
    n_steps = int(round(config.t_M / spec.dt_traj))
    if abs(n_steps * spec.dt_traj - config.t_M) > 1e-9 * max(1.0, config.t_M):
        raise ValueError("t_M must be an integral number of dt_traj steps")

    all_trials = np.arange(n_trials)
    chunks = [all_trials[k:k + _CHUNK] for k in range(0, n_trials, _CHUNK)]
    parts = [None] * len(chunks)

    def work(ci: int):
        parts[ci] = _run_chunk(pipe, config, spec, seed, chunks[ci], velocity,
                               stoch, snapshot_steps)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(chunks))))
    else:
        for ci in range(len(chunks)):
            work(ci)

    q0, final, overflow, clamped, signs0, snaps = _merge_chunks(parts, snapshot_steps)

    # also validates that no packet center drifts off the pointer grid
    evolve_measurement_spectral(state0, config.t_M, config.g)
    centers_tm = pipe.centers_at(config)
    window = _outcome_window(config)

    records = []
    counts = np.zeros(len(pipe.outcome_indices), dtype=int)
    n_amb = n_ovf = 0
    for i in range(n_trials):
        if overflow[i]:
            rec = MeasurementRecord(None, None, q0[i, 1], final[i, 1], q0[i, 0],
                                    int(signs0[i]), i, ambiguous=False, overflow=True)
            n_ovf += 1
        else:
            hit = pipe.infer(final[i, 1], centers_tm, window, config)
            if hit is None:
                rec = MeasurementRecord(None, None, q0[i, 1], final[i, 1], q0[i, 0],
                                        int(signs0[i]), i, ambiguous=True)
                n_amb += 1
            else:
                rec = MeasurementRecord(int(pipe.outcome_indices[hit]),
                                        float(pipe.outcome_values[hit]),
                                        q0[i, 1], final[i, 1], q0[i, 0],
                                        int(signs0[i]), i)
                counts[hit] += 1
        records.append(rec)

    stats = EnsembleStats(
        indices=np.asarray(pipe.outcome_indices), omegas=np.asarray(pipe.outcome_values),
        reference=np.asarray(pipe.outcome_reference), counts=counts,
        n_trials=n_trials, n_ambiguous=n_amb, n_overflow=n_ovf)
    extras = {"snapshots": {s * spec.dt_traj + state0.t: snaps[s] for s in snaps},
              "node_clamped": clamped, "final_configs": final, "initial_configs": q0}
    return records, stats, extras


def run_single_event(prepared, config: PhysicalConfig, spec: EnsembleSpec, seed: int,
                     trial: int = 0, velocity: str = "effective",
                     stoch: StochasticParams | None = None) -> MeasurementRecord:
    """One seeded measurement event (trial ``trial`` of the seed's ensemble)."""
    pipe = _resolve_pipeline(prepared)
    parts = [_run_chunk(pipe, config, spec, seed, np.array([trial]), velocity,
                        stoch, ())]
    q0, final, overflow, _, signs0, _ = _merge_chunks(parts, ())
    evolve_measurement_spectral(pipe.state0, config.t_M, config.g)
    window = _outcome_window(config)
    if overflow[0]:
        return MeasurementRecord(None, None, q0[0, 1], final[0, 1], q0[0, 0],
                                 int(signs0[0]), trial, overflow=True)
    hit = pipe.infer(final[0, 1], pipe.centers_at(config), window, config)
    if hit is None:
        return MeasurementRecord(None, None, q0[0, 1], final[0, 1], q0[0, 0],
                                 int(signs0[0]), trial, ambiguous=True)
    return MeasurementRecord(int(pipe.outcome_indices[hit]),
                             float(pipe.outcome_values[hit]),
                             q0[0, 1], final[0, 1], q0[0, 0], int(signs0[0]), trial)


# ---------------------------------------------------------------------------
# observable values before and after a measurement
# ---------------------------------------------------------------------------

def actual_observable_prior(coeffs: np.ndarray, basis: AngularBasis, theta,
                            lambda_signed: float, eps_node_rel: float = 1e-12):
    """Configuration-valued observable before measurement.

    For the ring variable this is the phase gradient plus the signed osmotic
    term of the system wavefunction alone; it varies continuously with theta,
    unlike the recorded outcomes.
    """
    th = np.asarray(theta, dtype=float)
    u = basis.eigenfunctions(th)
    l = basis.modes.reshape((-1,) + (1,) * th.ndim)
    phi = np.tensordot(coeffs, u, axes=1)
    dphi = np.tensordot(coeffs, 1j * l * u, axes=1)
    dens = np.abs(phi) ** 2
    peak = float(np.max(np.abs(np.tensordot(
        coeffs, basis.eigenfunctions(np.linspace(0, 2 * np.pi, 1024, endpoint=False)),
        axes=1)) ** 2))
    if np.any(dens < eps_node_rel * peak):
        raise DegenerateInputError("observable evaluated at a node of the wavefunction")
    core = np.conj(phi) * dphi
    return HBAR * np.imag(core) / dens + lambda_signed * np.real(core) / dens


def average_prior(coeffs: np.ndarray, basis: AngularBasis, n_mc: int, seed: int,
                  lambda_mag: float = 1.0) -> dict:
    """Monte Carlo average of the prior observable over configuration and sign.

    Draws theta from the system density and the hidden sign fairly, then
    compares with the closed-form expectation sum(omega_l |c_l|^2).
    """
    c = np.asarray(coeffs, dtype=complex)
    r = rngmod.stream(seed, rngmod.PRIOR, 0)
    theta = sample_ring_angles(c, RingModes(basis), n_mc, r)
    signs = r.integers(0, 2, size=n_mc) * 2 - 1
    support = np.flatnonzero(np.abs(c) ** 2 > 1e-14)
    l = basis.modes[support].reshape(-1, 1)
    phi = np.tensordot(c[support], np.exp(1j * l * theta[None, :]), axes=1)
    dphi = np.tensordot(c[support], 1j * l * np.exp(1j * l * theta[None, :]), axes=1)
    dens = np.abs(phi) ** 2
    core = np.conj(phi) * dphi
    samples = HBAR * np.imag(core) / dens + lambda_mag * signs * np.real(core) / dens
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(n_mc))
    analytic = float(np.sum(basis.omegas * np.abs(c) ** 2))
    return {"mean": mean, "se": se, "analytic": analytic, "n": n_mc}


def effective_post(outcome_index: int, theta_samples, basis: AngularBasis) -> np.ndarray:
    """Sign-averaged observable right after an event that recorded ``outcome_index``.

    The relevant system wavefunction is the correlated eigenfunction, whose
    phase gradient is the eigenvalue itself, independent of configuration.
    """
    th = np.asarray(theta_samples, dtype=float)
    if outcome_index not in basis.modes:
        raise ValueError(f"outcome {outcome_index} outside basis")
    return np.full(th.shape, HBAR * float(outcome_index))


def repeat_measurement(record: MeasurementRecord, state0: SpectralState,
                       config: PhysicalConfig, spec: EnsembleSpec, seed: int,
                       trial: int = 0) -> MeasurementRecord:
    """Non-destructive follow-up measurement.

    The system wavefunction is replaced by the eigenfunction correlated with
    the first outcome (the explicit bookkeeping step) and a fresh pointer
    packet is attached; the follow-up event then must reproduce the outcome.
    """
    if record.outcome_index is None:
        raise ValueError("cannot repeat a flagged measurement")
    if not isinstance(state0.modes, RingModes):
        raise NotImplementedError("repetition protocol is defined for the ring system")
    basis = state0.modes.basis
    collapsed = prepare_initial_state({record.outcome_index: 1.0},
                                      GaussianPacket(state0.packet.center,
                                                     state0.packet.sigma),
                                      config, state0.grid, basis)
    return run_single_event(collapsed, config, spec, seed, trial=trial)


# ---------------------------------------------------------------------------
# substituted observables: position and linear momentum
# ---------------------------------------------------------------------------

def substitute_observable(kind: str, system_psi: np.ndarray, x_grid: np.ndarray,
                          window: tuple[float, float], n_bins: int,
                          config: PhysicalConfig, grid: GridSpec,
                          packet_center: float = 0.0,
                          coverage_min: float = 0.999) -> MeasurementPipeline:
    """Rebuild the pipeline for a continuous-spectrum observable.

    The readout is discretized into ``n_bins`` bins across ``window`` and the
    recorded value is the bin center of the inverted pointer shift.  The
    underlying dynamics stays exact: for ``kind="position"`` the pointer
    follows the exact characteristics of the coupling (the system coordinate
    is conserved), and for ``kind="linear_momentum"`` the spectral state is
    expanded over the discrete plane waves of the sampling box, which are
    true eigenfunctions, one drifting packet each.  Discreteness therefore
    enters only through the binned reading, as it should for a continuous
    spectrum.
    """
    if kind == "angular_momentum":
        raise ValueError("use prepare_initial_state for the angular-momentum pipeline")
    if kind not in ("position", "linear_momentum"):
        raise ValueError(f"unknown observable kind {kind!r}")
    psi = np.asarray(system_psi, dtype=complex)
    x = np.asarray(x_grid, dtype=float)
    h = x[1] - x[0]
    total = float(np.sum(np.abs(psi) ** 2) * h)
    if abs(total - 1.0) > 1e-8:
        raise DegenerateInputError(f"system state is not normalized: {total!r}")
    lo, hi = window
    if hi <= lo:
        raise ValueError("empty observable window")
    edges = np.linspace(lo, hi, n_bins + 1)
    bin_centers = 0.5 * (edges[:-1] + edges[1:])
    config.check_separation(bin_centers)  # bins must be pointer-resolvable
    packet = GaussianPacket(packet_center, config.sigma)

    if kind == "position":
        table = np.zeros((n_bins, len(x)), dtype=complex)
        weights = np.zeros(n_bins)
        for b in range(n_bins):
            mask = (x >= edges[b]) & (x < edges[b + 1])
            w = float(np.sum(np.abs(psi[mask]) ** 2) * h)
            weights[b] = w
            if w > 0:
                table[b, mask] = psi[mask] / np.sqrt(w)
        coverage = float(weights.sum())
        if coverage < coverage_min:
            raise InvalidSystemError(
                f"observable window covers only {coverage:.4f} of the state "
                f"(needs {coverage_min}); widen the window")
        coeffs = np.sqrt(weights / coverage).astype(complex)
        modes = LineModes(x, table, bin_centers)
        state0 = SpectralState(coeffs=coeffs, modes=modes, packet=packet,
                               centers=np.full(n_bins, packet_center), t=0.0, grid=grid)
        flow_kind = "pointer-readout"
    else:
        spect = np.fft.fft(psi)
        p_axis = 2.0 * np.pi * np.fft.fftfreq(len(x), d=h)
        box = h * len(x)
        # coefficients of the orthonormal box plane waves exp(i p x) / sqrt(L)
        c_all = np.exp(-1j * p_axis * x[0]) * spect * h / np.sqrt(box)
        w_all = np.abs(c_all) ** 2
        order = np.argsort(p_axis)
        p_sorted, c_sorted, w_sorted = p_axis[order], c_all[order], w_all[order]
        in_window = (p_sorted >= lo) & (p_sorted < hi)
        coverage = float(w_sorted[in_window].sum())
        if coverage < coverage_min:
            raise InvalidSystemError(
                f"observable window covers only {coverage:.4f} of the state "
                f"(needs {coverage_min}); widen the window")
        keep = in_window & (w_sorted > 1e-12 * w_sorted.max())
        kept_cov = float(w_sorted[keep].sum())
        weights = np.array([w_sorted[in_window & (p_sorted >= edges[b])
                                     & (p_sorted < edges[b + 1])].sum() / coverage
                            for b in range(n_bins)])
        # carry a contiguous momentum range so the mode table stays equally spaced
        kept_idx = np.flatnonzero(keep)
        k0, k1 = int(kept_idx[0]), int(kept_idx[-1])
        p_full = p_sorted[k0:k1 + 1]
        c_full = np.zeros(len(p_full), dtype=complex)
        c_full[kept_idx - k0] = c_sorted[keep] / np.sqrt(kept_cov)
        modes = PlaneWaveModes(p_full, box, x)
        state0 = SpectralState(coeffs=c_full, modes=modes, packet=packet,
                               centers=np.full(len(p_full), packet_center),
                               t=0.0, grid=grid)
        flow_kind = "mode"

    return MeasurementPipeline(
        state0=state0, flow_kind=flow_kind, outcome_mode="ranges",
        outcome_indices=np.arange(n_bins), outcome_values=bin_centers,
        outcome_reference=weights, outcome_edges=edges, coverage=coverage,
        x_bounds=(float(x[0]), float(x[-1])))
