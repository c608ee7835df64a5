"""Particle trajectories driven by the joint wavefunction.

Two velocity sources exist for the pair (system coordinate, pointer):

* the effective field, the phase-gradient flow of the joint wavefunction,
  obtained by averaging the two hidden-sign branches, and
* the actual field, which adds the sign-flipping osmotic term
  ``(lambda/2) * grad(Omega) / Omega`` read off the joint density.

For a spectral state both are evaluated in closed form (mode sums), so no
interpolation error enters the ensemble statistics.  Ensembles integrate
vectorized over trials in fixed chunks; per-trial randomness comes from
counter-based streams, which keeps runs bit-reproducible at any thread count.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy import stats

from .core import EPS_NODE_REL, DegenerateInputError, GridSpec
from .spectral import (PlaneWaveModes, RingModes, SpectralState,
                       evolve_measurement_spectral, system_marginal_density)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class EnsembleSpec:
    """Numerical knobs for trajectory ensembles."""

    n_trials: int = 1000
    dt_traj: float = 1e-3
    integrator: str = "rk4"
    node_policy: str = "reject-resample"
    eps_node_rel: float = EPS_NODE_REL
    max_halvings: int = 4

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.dt_traj <= 0:
            raise ValueError("dt_traj must be positive")
        if self.integrator not in ("rk4", "explicit-midpoint"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.node_policy not in ("reject-resample", "clamp"):
            raise ValueError(f"unknown node_policy {self.node_policy!r}")

    def validate_against(self, stoch) -> None:
        """Trajectory steps may not outpace the sign-block scale."""
        if self.dt_traj > stoch.tau_xi / stoch.hierarchy_factor + 1e-15:
            raise ValueError(
                f"dt_traj = {self.dt_traj} exceeds tau_xi / hierarchy_factor "
                f"= {stoch.tau_xi / stoch.hierarchy_factor}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped configuration path with the hidden-sign path used."""

    times: np.ndarray
    configs: np.ndarray          # (n_steps + 1, dim); axis 0 of dim 2 is wrapped theta
    lambda_signs: np.ndarray     # (n_steps,) int8, all +1 for effective runs
    seed: int
    overflow: bool = False
    node_clamped: bool = False


class ModeFlow:
    """Closed-form velocity fields of a spectral state.

    The coupling swaps the gradient axes: the system coordinate moves with
    the pointer-gradient of the phase and the pointer with the
    system-gradient, each scaled by g.  Only occupied modes enter the sums;
    ring eigenfunctions come from a single complex exponential through an
    integer power chain, which is what keeps large ensembles cheap.
    """

    def __init__(self, state: SpectralState, g: float):
        self.state = state
        self.g = g
        self.sigma = state.packet.sigma
        self.t0 = state.t
        self.modes = state.modes
        self.ring = isinstance(state.modes, RingModes)
        self.plane = isinstance(state.modes, PlaneWaveModes)
        # the plane-wave power chain needs the full equally spaced ladder, so
        # zero-weight interior modes must stay in place there
        sup = np.arange(len(state.coeffs)) if self.plane else state.support_indices()
        self.coeffs = state.coeffs[sup]
        self.omegas = state.omegas[sup]
        self.centers0 = state.centers[sup]
        if self.ring:
            self._l = state.modes.basis.modes[sup].astype(int)
        elif self.plane:
            self._p = state.modes.momenta[sup]
            self._box_scale = 1.0 / np.sqrt(state.modes.box_length)
        else:
            from scipy.interpolate import CubicSpline

            self._spl = CubicSpline(state.modes.x_grid, state.modes.table[sup],
                                    axis=1, extrapolate=False)
            self._dspl = self._spl.derivative()
        self._pack_norm = (TWO_PI * self.sigma**2) ** -0.25
        self.ref_peak = self._reference_peak()

    def _reference_peak(self) -> float:
        if self.ring:
            th = np.linspace(0.0, TWO_PI, 512, endpoint=False)
        else:
            th = self.modes.x_grid
        u, _ = self._mode_values(th, with_derivatives=False)
        sys_dens = np.abs(np.tensordot(self.coeffs, u, axes=1)) ** 2
        return float(sys_dens.max()) * self._pack_norm**2

    def centers(self, t: float) -> np.ndarray:
        return self.centers0 + self.g * self.omegas * (t - self.t0)

    def _mode_values(self, x: np.ndarray, with_derivatives: bool):
        if self.ring:
            # powers of exp(i x) cover every occupied mode; conjugate gives l < 0
            z = np.exp(1j * x)
            l_abs_max = int(np.max(np.abs(self._l))) if len(self._l) else 0
            powers = [np.ones_like(z)]
            for _ in range(l_abs_max):
                powers.append(powers[-1] * z)
            scale = 1.0 / np.sqrt(TWO_PI)
            u = np.empty((len(self._l),) + x.shape, dtype=complex)
            for k, l in enumerate(self._l):
                u[k] = powers[abs(l)] if l >= 0 else np.conj(powers[abs(l)])
            u *= scale
            du = (1j * self._l.reshape((-1,) + (1,) * x.ndim)) * u if with_derivatives else None
            return u, du
        if self.plane:
            # equally spaced momenta: one exp for the base, one per step of the chain
            p = self._p
            u = np.empty((len(p),) + x.shape, dtype=complex)
            u[0] = np.exp(1j * p[0] * x)
            if len(p) > 1:
                step = np.exp(1j * (p[1] - p[0]) * x)
                for k in range(1, len(p)):
                    u[k] = u[k - 1] * step
            u *= self._box_scale
            du = (1j * p.reshape((-1,) + (1,) * x.ndim)) * u if with_derivatives else None
            return u, du
        u = np.nan_to_num(self._spl(x), nan=0.0)
        du = np.nan_to_num(self._dspl(x), nan=0.0) if with_derivatives else None
        return u, du

    def _gaussians(self, q2: np.ndarray, t: float):
        mu = self.centers(t)
        shift = q2[None, ...] - mu.reshape((-1,) + (1,) * q2.ndim)
        zq = shift / (2.0 * self.sigma**2)
        gauss = self._pack_norm * np.exp(-0.5 * zq * shift)
        return gauss, zq

    def _terms(self, x: np.ndarray, q2: np.ndarray, t: float):
        """Psi, its two gradients and the density at arbitrary points."""
        u, du = self._mode_values(x, with_derivatives=True)
        gauss, zq = self._gaussians(q2, t)
        cg = self.coeffs.reshape((-1,) + (1,) * x.ndim) * gauss
        psi = np.sum(cg * u, axis=0)
        dpsi_x = np.sum(cg * du, axis=0)
        dpsi_q = np.sum(cg * u * (-zq), axis=0)
        dens = np.abs(psi) ** 2
        return psi, dpsi_x, dpsi_q, dens

    def density(self, points: np.ndarray, t: float) -> np.ndarray:
        x, q2 = points[..., 0], points[..., 1]
        u, _ = self._mode_values(x, with_derivatives=False)
        gauss, _ = self._gaussians(q2, t)
        cg = self.coeffs.reshape((-1,) + (1,) * x.ndim) * gauss
        psi = np.sum(cg * u, axis=0)
        return np.abs(psi) ** 2

    def effective(self, points: np.ndarray, t: float) -> np.ndarray:
        psi, dpsi_x, dpsi_q, dens = self._terms(points[..., 0], points[..., 1], t)
        safe = np.maximum(dens, 1e-300)
        grad_s_x = np.imag(np.conj(psi) * dpsi_x) / safe
        grad_s_q = np.imag(np.conj(psi) * dpsi_q) / safe
        return self.g * np.stack([grad_s_q, grad_s_x], axis=-1)

    def actual(self, points: np.ndarray, t: float, lambda_signed) -> np.ndarray:
        """Effective field plus the osmotic term with the given signed scale.

        ``lambda_signed`` may be a scalar or a per-point vector of signed
        magnitudes (sign path value times lambda_mag).
        """
        psi, dpsi_x, dpsi_q, dens = self._terms(points[..., 0], points[..., 1], t)
        safe = np.maximum(dens, 1e-300)
        pc = np.conj(psi)
        grad_s_x = np.imag(pc * dpsi_x) / safe
        grad_s_q = np.imag(pc * dpsi_q) / safe
        osm_x = np.real(pc * dpsi_x) / safe
        osm_q = np.real(pc * dpsi_q) / safe
        lam = np.asarray(lambda_signed)
        return self.g * np.stack([grad_s_q + lam * osm_q,
                                  grad_s_x + lam * osm_x], axis=-1)


class PointerReadoutFlow:
    """Exact characteristics of the position-coupling interaction.

    With the measured quantity equal to the system position itself, the
    velocity rule involves no wavefunction gradients at all: the system
    coordinate is frozen and the pointer drifts at ``g * x``.
    """

    def __init__(self, g: float, ref_peak: float = 1.0):
        self.g = g
        self.ref_peak = ref_peak

    def density(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.full(points.shape[:-1], self.ref_peak)

    def effective(self, points: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros_like(points)
        out[..., 1] = self.g * points[..., 0]
        return out

    def actual(self, points: np.ndarray, t: float, lambda_signed) -> np.ndarray:
        return self.effective(points, t)


class StaticFieldFlow:
    """1-D velocity field tabulated on a grid (external-potential runs)."""

    def __init__(self, x: np.ndarray, velocity: np.ndarray, density: np.ndarray):
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(velocity, dtype=float)
        self.dens = np.asarray(density, dtype=float)
        self.ref_peak = float(self.dens.max())

    def density(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.interp(points[..., 0], self.x, self.dens, left=0.0, right=0.0)

    def effective(self, points: np.ndarray, t: float) -> np.ndarray:
        out = np.empty_like(points)
        out[..., 0] = np.interp(points[..., 0], self.x, self.v)
        return out

    def actual(self, points: np.ndarray, t: float, lambda_signed) -> np.ndarray:
        return self.effective(points, t)


def effective_velocity(state: SpectralState, points, g: float, t: float | None = None) -> np.ndarray:
    """Phase-gradient velocity (system-dot, pointer-dot) at the given points."""
    flow = ModeFlow(state, g)
    return flow.effective(np.asarray(points, dtype=float), state.t if t is None else t)


def actual_velocity(state: SpectralState, points, g: float, lambda_signed,
                    t: float | None = None) -> np.ndarray:
    """Effective velocity plus the signed osmotic contribution."""
    flow = ModeFlow(state, g)
    return flow.actual(np.asarray(points, dtype=float), state.t if t is None else t,
                       lambda_signed)


# ---------------------------------------------------------------------------
# Born sampling
# ---------------------------------------------------------------------------

class GridSampler:
    """Inverse-CDF sampler for a density tabulated on the joint grid.

    The density is treated as piecewise constant on cells centered at the
    grid points; axis 0 is sampled from its marginal and axis 1 from the
    conditional row of the sampled cell.
    """

    def __init__(self, density: np.ndarray, grid: GridSpec, tol: float = 1e-6):
        w_t = grid.theta_weights
        w_q = grid.q2_weights
        masses = density * w_t[:, None] * w_q[None, :]
        total = float(masses.sum())
        if not np.isfinite(total) or abs(total - 1.0) > tol:
            raise DegenerateInputError(f"density is not normalized: mass = {total!r}")
        self.grid = grid
        self._marg = masses.sum(axis=1)
        self._cdf0 = np.cumsum(self._marg)
        self._rows = np.cumsum(masses, axis=1)
        self._total = total

    def _invert_axis0(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        target = u * self._total
        idx = np.searchsorted(self._cdf0, target, side="right")
        idx = np.minimum(idx, len(self._marg) - 1)
        prev = np.where(idx > 0, self._cdf0[idx - 1], 0.0)
        frac = np.clip((target - prev) / np.maximum(self._marg[idx], 1e-300), 0.0, 1.0)
        theta = (idx + frac - 0.5) * self.grid.dtheta
        return np.mod(theta, TWO_PI), idx

    def _invert_axis1(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        q = self.grid.q2
        out = np.empty(len(rows))
        for k, (r, uu) in enumerate(zip(rows, u)):
            cdf = self._rows[r]
            target = uu * cdf[-1]
            j = min(np.searchsorted(cdf, target, side="right"), len(q) - 1)
            prev = cdf[j - 1] if j > 0 else 0.0
            mass = cdf[j] - prev
            frac = np.clip((target - prev) / max(mass, 1e-300), 0.0, 1.0)
            half = 0.5 * self.grid.dq2
            if j == 0:
                out[k] = q[0] + frac * half
            elif j == len(q) - 1:
                out[k] = q[-1] - half + frac * half
            else:
                out[k] = q[j] - half + frac * self.grid.dq2
        return out

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random((n, 2))
        theta, idx = self._invert_axis0(u[:, 0])
        q2 = self._invert_axis1(idx, u[:, 1])
        return np.stack([theta, q2], axis=-1)


def sample_initial_ensemble(density: np.ndarray, grid: GridSpec, n: int,
                            rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. configuration draws from a normalized grid density."""
    return GridSampler(density, grid).draw(n, rng)


def sample_ring_angles(coeffs: np.ndarray, modes: RingModes, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Exact draws from the ring density ``|sum c_l u_l(theta)|^2`` by rejection."""
    support = np.flatnonzero(np.abs(coeffs) ** 2 > 1e-14)
    c = coeffs[support]
    l = modes.basis.modes[support].reshape(-1, 1)

    def density(theta):
        phi = np.tensordot(c, np.exp(1j * l * theta[None, :]), axes=1)
        return np.abs(phi) ** 2 / TWO_PI

    fine = np.linspace(0.0, TWO_PI, 2048, endpoint=False)
    bound = 1.05 * float(density(fine).max())
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = int(2.5 * (n - filled) * bound * TWO_PI) + 16
        theta = rng.uniform(0.0, TWO_PI, size=m)
        u = rng.uniform(0.0, bound, size=m)
        acc = theta[u < density(theta)]
        take = min(len(acc), n - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def born_initial_draw(state: SpectralState, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Exact product-form draw from the initial joint density.

    Valid at preparation time, when every packet center coincides and the
    joint density factorizes into (ring density) x (packet Gaussian).
    """
    if not np.allclose(state.centers, state.centers[0]):
        raise ValueError("exact product sampling needs coinciding packet centers")
    if isinstance(state.modes, RingModes):
        x = sample_ring_angles(state.coeffs, state.modes, n, rng)
    else:
        xg = state.modes.x_grid
        dens = np.abs(np.tensordot(state.coeffs, state.modes.table, axes=1)) ** 2
        x = _sample_line(dens, xg, n, rng)
    q2 = rng.normal(state.centers[0], state.packet.sigma, size=n)
    return np.stack([x, q2], axis=-1)


def _sample_line(density: np.ndarray, points: np.ndarray, n: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from a 1-D tabulated density (piecewise constant cells)."""
    h = points[1] - points[0]
    masses = density * h
    cdf = np.cumsum(masses)
    u = rng.random(n) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(points) - 1)
    prev = np.where(idx > 0, cdf[idx - 1], 0.0)
    frac = np.clip((u - prev) / np.maximum(masses[idx], 1e-300), 0.0, 1.0)
    return points[idx] + (frac - 0.5) * h


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _stage_velocity(flow, x, t, lam):
    if lam is None:
        return flow.effective(x, t)
    return flow.actual(x, t, lam)


def _step(flow, x, t, dt, lam, scheme: str) -> np.ndarray:
    if scheme == "rk4":
        k1 = _stage_velocity(flow, x, t, lam)
        k2 = _stage_velocity(flow, x + 0.5 * dt * k1, t + 0.5 * dt, lam)
        k3 = _stage_velocity(flow, x + 0.5 * dt * k2, t + 0.5 * dt, lam)
        k4 = _stage_velocity(flow, x + dt * k3, t + dt, lam)
        return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    k1 = _stage_velocity(flow, x, t, lam)
    k2 = _stage_velocity(flow, x + 0.5 * dt * k1, t + 0.5 * dt, lam)
    return x + dt * k2


def _resolve_step(flow, x, t, dt, lam, scheme, eps_abs, halvings):
    """One accepted step under reject-resample: halve on node landings."""
    prop = _step(flow, x, t, dt, lam, scheme)
    if flow.density(prop, t + dt) >= eps_abs:
        return prop, False
    if halvings <= 0:
        return x, True
    mid, c1 = _resolve_step(flow, x, t, 0.5 * dt, lam, scheme, eps_abs, halvings - 1)
    end, c2 = _resolve_step(flow, mid, t + 0.5 * dt, 0.5 * dt, lam, scheme, eps_abs,
                            halvings - 1)
    return end, (c1 or c2)


def integrate_ensemble(flow, q0: np.ndarray, spec: EnsembleSpec, t0: float, duration: float,
                       sign_paths: np.ndarray | None = None, lambda_mag: float = 0.0,
                       q2_bounds: tuple[float, float] | None = None,
                       x_bounds: tuple[float, float] | None = None,
                       snapshot_steps: tuple[int, ...] = ()) -> dict:
    """Fixed-step integration of a batch of trajectories.

    ``sign_paths`` (n, n_steps) switches the osmotic term per step; omit it
    for effective-velocity runs.  Trials whose pointer leaves ``q2_bounds``
    freeze and are flagged.  Returns final configs, per-trial flags and any
    requested intermediate snapshots.
    """
    n_steps = int(round(duration / spec.dt_traj))
    if abs(n_steps * spec.dt_traj - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be an integral number of dt_traj steps")
    x = np.array(q0, dtype=float)
    n = x.shape[0]
    overflow = np.zeros(n, dtype=bool)
    node_clamped = np.zeros(n, dtype=bool)
    eps_abs = spec.eps_node_rel * flow.ref_peak
    snapshots: dict[int, np.ndarray] = {}
    if 0 in snapshot_steps:
        snapshots[0] = x.copy()

    for k in range(n_steps):
        t = t0 + k * spec.dt_traj
        lam = None
        if sign_paths is not None:
            lam = lambda_mag * sign_paths[:, k]
        prop = _step(flow, x, t, spec.dt_traj, lam, spec.integrator)
        landing = flow.density(prop, t + spec.dt_traj)
        bad = landing < eps_abs
        if spec.node_policy == "reject-resample" and np.any(bad):
            for i in np.flatnonzero(bad):
                li = None if lam is None else lam[i]
                fixed, clamped = _resolve_step(flow, x[i:i + 1], t, spec.dt_traj, li,
                                               spec.integrator, eps_abs,
                                               spec.max_halvings)
                prop[i] = fixed[0]
                node_clamped[i] |= clamped
        elif np.any(bad):
            prop[bad] = x[bad]
            node_clamped |= bad
        if q2_bounds is not None:
            out = (prop[:, 1] < q2_bounds[0]) | (prop[:, 1] > q2_bounds[1])
            newly = out & ~overflow
            prop[newly] = x[newly]
            overflow |= newly
        if x_bounds is not None:
            out = (prop[:, 0] < x_bounds[0]) | (prop[:, 0] > x_bounds[1])
            newly = out & ~overflow
            prop[newly] = x[newly]
            overflow |= newly
        prop[overflow] = x[overflow]
        x = prop
        if (k + 1) in snapshot_steps:
            snapshots[k + 1] = x.copy()

    return {"configs": x, "overflow": overflow, "node_clamped": node_clamped,
            "snapshots": snapshots, "n_steps": n_steps}


def integrate_trajectory(q0, flow, spec: EnsembleSpec, duration: float,
                         sign_path: np.ndarray | None = None, lambda_mag: float = 0.0,
                         t0: float = 0.0, seed: int = 0,
                         q2_bounds: tuple[float, float] | None = None,
                         wrap_axis0: bool = True) -> Trajectory:
    """Single-trial integration retaining the full path."""
    n_steps = int(round(duration / spec.dt_traj))
    if abs(n_steps * spec.dt_traj - duration) > 1e-9 * max(1.0, duration):
        raise ValueError("duration must be an integral number of dt_traj steps")
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    dim = q0.shape[1]
    path = np.empty((n_steps + 1, dim))
    path[0] = q0[0]
    signs = np.ones(n_steps, dtype=np.int8) if sign_path is None else \
        np.asarray(sign_path[:n_steps], dtype=np.int8)
    if len(signs) < n_steps:
        raise ValueError("sign path shorter than the trajectory")
    eps_abs = spec.eps_node_rel * flow.ref_peak
    x = q0.copy()
    overflow = False
    clamped = False
    for k in range(n_steps):
        t = t0 + k * spec.dt_traj
        lam = None if sign_path is None else lambda_mag * float(signs[k])
        if spec.node_policy == "reject-resample":
            x_new, c = _resolve_step(flow, x, t, spec.dt_traj, lam, spec.integrator,
                                     eps_abs, spec.max_halvings)
            clamped |= c
        else:
            x_new = _step(flow, x, t, spec.dt_traj, lam, spec.integrator)
            if flow.density(x_new, t + spec.dt_traj) < eps_abs:
                x_new = x
                clamped = True
        if q2_bounds is not None and dim == 2 and not overflow:
            if not (q2_bounds[0] <= x_new[0, 1] <= q2_bounds[1]):
                x_new = x
                overflow = True
        if not overflow:
            x = x_new
        path[k + 1] = x[0]
    if wrap_axis0 and dim == 2 and getattr(getattr(flow, "modes", None), "periodic", True):
        path[:, 0] = np.mod(path[:, 0], TWO_PI)
    times = t0 + np.arange(n_steps + 1) * spec.dt_traj
    return Trajectory(times=times, configs=path, lambda_signs=signs, seed=seed,
                      overflow=overflow, node_clamped=clamped)


# ---------------------------------------------------------------------------
# equivariance diagnostics
# ---------------------------------------------------------------------------

def _equal_mass_edges(cdf_x: np.ndarray, cdf_y: np.ndarray, n_bins: int) -> np.ndarray:
    targets = np.linspace(0.0, 1.0, n_bins + 1)[1:-1] * cdf_y[-1]
    inner = np.interp(targets, cdf_y, cdf_x)
    return np.concatenate(([cdf_x[0]], inner, [cdf_x[-1]]))


def _chi2_equal_mass(samples: np.ndarray, edges: np.ndarray) -> tuple[float, float]:
    counts, _ = np.histogram(samples, bins=edges)
    expected = len(samples) / (len(edges) - 1)
    stat = float(np.sum((counts - expected) ** 2 / expected))
    p = float(stats.chi2.sf(stat, df=len(edges) - 2))
    return stat, p


def marginal_cdfs(state: SpectralState, n_fine: int = 8192):
    """Analytic-through-quadrature CDFs of both marginals of ``|Psi(t)|^2``."""
    from scipy.special import erf

    weights = np.abs(state.coeffs) ** 2
    mus = state.centers
    sig = state.packet.sigma

    def cdf_q2(q):
        q = np.asarray(q, dtype=float)
        z = (q[..., None] - mus) / (np.sqrt(2.0) * sig)
        return np.sum(weights * 0.5 * (1.0 + erf(z)), axis=-1)

    th = np.linspace(0.0, TWO_PI, n_fine + 1)
    dens_th = system_marginal_density(state, th)
    cdf_th_vals = np.concatenate(([0.0], np.cumsum(0.5 * (dens_th[1:] + dens_th[:-1])
                                                   * np.diff(th))))
    cdf_th_vals /= cdf_th_vals[-1]

    def cdf_theta(x):
        return np.interp(np.mod(np.asarray(x, dtype=float), TWO_PI), th, cdf_th_vals)

    return cdf_theta, cdf_q2, (th, cdf_th_vals)


def equivariance_report(snapshots: dict[float, np.ndarray], state0: SpectralState,
                        g: float, n_bins: int = 50) -> dict:
    """Binned chi-squared and KS comparisons against the evolved marginals.

    ``snapshots`` maps times to (n, 2) configuration arrays drawn from the
    ensemble.  Bins are equal-mass under the reference marginal, so every
    bin has the same expected count.
    """
    if not isinstance(state0.modes, RingModes):
        raise NotImplementedError("equivariance diagnostics assume the ring system")
    report = {}
    for t, pts in sorted(snapshots.items()):
        state_t = evolve_measurement_spectral(state0, t - state0.t, g) if t != state0.t \
            else state0
        cdf_theta, cdf_q2, (th_grid, th_cdf) = marginal_cdfs(state_t)

        theta = np.mod(pts[:, 0], TWO_PI)
        q2 = pts[:, 1]

        edges_th = _equal_mass_edges(th_grid, th_cdf, n_bins)
        chi_th, p_th = _chi2_equal_mass(theta, edges_th)

        qlo = state_t.centers.min() - 8.0 * state_t.packet.sigma
        qhi = state_t.centers.max() + 8.0 * state_t.packet.sigma
        qs = np.linspace(qlo, qhi, 8192)
        cq = cdf_q2(qs)
        edges_q = _equal_mass_edges(qs, cq, n_bins)
        edges_q[0], edges_q[-1] = -np.inf, np.inf
        chi_q, p_q = _chi2_equal_mass(q2, edges_q)

        ks_th = stats.kstest(theta, cdf_theta)
        ks_q = stats.kstest(q2, cdf_q2)
        report[t] = {
            "theta": {"chi2": chi_th, "chi2_p": p_th, "ks": float(ks_th.statistic),
                      "ks_p": float(ks_th.pvalue)},
            "q2": {"chi2": chi_q, "chi2_p": p_q, "ks": float(ks_q.statistic),
                   "ks_p": float(ks_q.pvalue)},
            "n": int(len(pts)),
        }
    return report
