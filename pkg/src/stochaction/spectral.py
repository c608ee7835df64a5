"""Exact spectral propagation of the measurement interaction.

The coupling ``g * O1 * p2`` is first order in the pointer momentum, so each
system eigenmode drags a rigid copy of the pointer packet at speed
``g * omega``.  The joint wavefunction therefore stays a finite sum

    Psi(x, q2; t) = sum_l c_l u_l(x) phi(q2 - mu_l(t)),   mu_l(t) = mu0 + g omega_l t

with constant coefficients.  No time discretization error enters; grids are
only used for synthesis, sampling and diagnostics.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .core import (HBAR, DomainOverflowError, GridSpec, TruncationError,
                   WaveFunction)


@dataclass(frozen=True, eq=False)
class AngularBasis:
    """Ring eigenmodes ``exp(i l theta) / sqrt(2 pi)`` for |l| <= l_max."""

    l_max: int = 8

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be positive")

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.l_max, self.l_max + 1)

    @property
    def omegas(self) -> np.ndarray:
        return HBAR * self.modes.astype(float)

    def eigenfunctions(self, theta) -> np.ndarray:
        """Values of every mode at ``theta``; shape (n_modes,) + theta.shape."""
        th = np.asarray(theta, dtype=float)
        l = self.modes.reshape((-1,) + (1,) * th.ndim)
        return np.exp(1j * l * th) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianPacket:
    """Pointer packet with density standard deviation ``sigma``."""

    center: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def profile(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        norm = (2.0 * np.pi * self.sigma**2) ** -0.25
        return norm * np.exp(-((q - self.center) ** 2) / (4.0 * self.sigma**2))


class RingModes:
    """Analytic mode table for the angular-momentum problem."""

    periodic = True

    def __init__(self, basis: AngularBasis):
        self.basis = basis
        self.omegas = basis.omegas

    def values(self, x) -> np.ndarray:
        return self.basis.eigenfunctions(x)

    def derivatives(self, x) -> np.ndarray:
        th = np.asarray(x, dtype=float)
        l = self.basis.modes.reshape((-1,) + (1,) * th.ndim)
        return 1j * l * self.values(x)


class LineModes:
    """Tabulated mode functions on a line, spline-interpolated off the grid.

    Used by the position measurement kind, where the 'modes' are the
    bin-masked pieces of the state with outcome values at bin centers.
    """

    periodic = False

    def __init__(self, x_grid: np.ndarray, table: np.ndarray, omegas: np.ndarray):
        if table.shape != (len(omegas), len(x_grid)):
            raise ValueError("mode table shape mismatch")
        self.x_grid = np.asarray(x_grid, dtype=float)
        self.table = np.asarray(table, dtype=complex)
        self.omegas = np.asarray(omegas, dtype=float)
        self._spline = CubicSpline(self.x_grid, self.table, axis=1, extrapolate=False)
        self._dspline = self._spline.derivative()

    def values(self, x) -> np.ndarray:
        # out-of-window points evaluate to 0 (packet support left the window)
        return np.nan_to_num(self._spline(np.asarray(x, dtype=float)), nan=0.0)

    def derivatives(self, x) -> np.ndarray:
        return np.nan_to_num(self._dspline(np.asarray(x, dtype=float)), nan=0.0)


class PlaneWaveModes:
    """Equally spaced plane waves ``exp(i p_k x) / sqrt(L)`` on a length-L box.

    These are exact eigenfunctions of the momentum coupling, so the spectral
    solution with one packet per retained wavenumber is exact; the discrete
    outcome only appears when the readout is binned.  ``x_grid`` is kept for
    initial-density sampling and trajectory bounds.
    """

    periodic = False

    def __init__(self, momenta: np.ndarray, box_length: float, x_grid: np.ndarray):
        p = np.asarray(momenta, dtype=float)
        if len(p) > 1:
            dp = np.diff(p)
            if not np.allclose(dp, dp[0], rtol=0, atol=1e-12 * abs(dp[0])):
                raise ValueError("plane-wave momenta must be equally spaced")
        self.momenta = p
        self.omegas = p
        self.box_length = float(box_length)
        self.x_grid = np.asarray(x_grid, dtype=float)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.momenta.reshape((-1,) + (1,) * x.ndim)
        return np.exp(1j * p * x) / np.sqrt(self.box_length)

    def derivatives(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.momenta.reshape((-1,) + (1,) * x.ndim)
        return 1j * p * self.values(x)


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Closed-form joint state: coefficients plus per-mode packet centers."""

    coeffs: np.ndarray
    modes: RingModes | LineModes
    packet: GaussianPacket
    centers: np.ndarray
    t: float
    grid: GridSpec

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        mu = np.asarray(self.centers, dtype=float)
        if c.shape != self.modes.omegas.shape or mu.shape != c.shape:
            raise ValueError("coefficients, omegas and centers must share a shape")
        total = float(np.sum(np.abs(c) ** 2))
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"coefficients are not normalized: sum |c|^2 = {total!r}")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "centers", mu)

    @property
    def omegas(self) -> np.ndarray:
        return self.modes.omegas

    def packet_profile(self, q, mode_index: int) -> np.ndarray:
        shifted = GaussianPacket(self.centers[mode_index], self.packet.sigma)
        return shifted.profile(q)

    def support_indices(self, tol: float = 1e-14) -> np.ndarray:
        """Modes actually present in the superposition."""
        return np.flatnonzero(np.abs(self.coeffs) ** 2 > tol)


def _check_centers_inside(centers: np.ndarray, sigma: float, grid: GridSpec) -> None:
    margin = 5.0 * sigma
    lo, hi = grid.q2_min + margin, grid.q2_max - margin
    bad = (centers < lo) | (centers > hi)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise DomainOverflowError(
            f"packet center {centers[idx]:.4g} (mode index {idx}) is within "
            f"5 sigma of the pointer grid boundary [{grid.q2_min}, {grid.q2_max}]")


def expand_in_angular_basis(phi: WaveFunction, basis: AngularBasis,
                            residual_tol: float = 1e-6,
                            on_truncation: str = "raise") -> tuple[np.ndarray, float]:
    """Mode coefficients of a ring wavefunction by grid quadrature.

    Returns ``(coeffs, residual)`` where residual is ``1 - sum |c_l|^2``, the
    weight lost to truncation at ``l_max``.  The quadrature on the uniform
    ring grid is exact for mode numbers below ``n_theta - l_max``.
    """
    if phi.axes != ("theta",):
        raise ValueError("expansion expects a ring wavefunction")
    eig = basis.eigenfunctions(phi.grid.theta)
    coeffs = (eig.conj() * phi.amplitudes) @ phi.grid.theta_weights
    residual = float(abs(np.sum(np.abs(phi.amplitudes) ** 2 * phi.grid.theta_weights)
                         - np.sum(np.abs(coeffs) ** 2)))
    if residual > residual_tol:
        msg = f"truncation residual {residual:.3g} exceeds {residual_tol:.3g}; raise l_max"
        if on_truncation == "raise":
            raise TruncationError(msg)
        warnings.warn(msg)
    return coeffs, residual


def evolve_measurement_spectral(state: SpectralState, delta_t: float, g: float) -> SpectralState:
    """Advance the exact solution: centers shift by ``g * omega * delta_t``."""
    centers = state.centers + g * state.omegas * delta_t
    _check_centers_inside(centers[state.support_indices()], state.packet.sigma, state.grid)
    return replace(state, centers=centers, t=state.t + delta_t)


def synthesize_joint(state: SpectralState, grid: GridSpec | None = None) -> WaveFunction:
    """Evaluate the closed-form joint wavefunction on the full grid."""
    grid = grid or state.grid
    if not isinstance(state.modes, RingModes):
        raise NotImplementedError("joint synthesis is defined for the ring system")
    _check_centers_inside(state.centers[state.support_indices()], state.packet.sigma, grid)
    eig = state.modes.values(grid.theta)                       # (M, n_theta)
    packs = np.stack([state.packet_profile(grid.q2, m)        # (M, n_q2+1)
                      for m in range(len(state.coeffs))])
    amp = np.einsum("m,mt,mq->tq", state.coeffs, eig, packs)
    return WaveFunction(amp, grid, ("theta", "q2"))


def pointer_marginal_density(state: SpectralState, q) -> np.ndarray:
    """Exact pointer-position density (ring modes are orthonormal, so the
    cross terms vanish under the theta integral)."""
    q = np.asarray(q, dtype=float)
    weights = np.abs(state.coeffs) ** 2
    dens = np.zeros_like(q)
    for m, w in enumerate(weights):
        dens += w * np.abs(state.packet_profile(q, m)) ** 2
    return dens


def system_marginal_density(state: SpectralState, theta) -> np.ndarray:
    """Exact ring-angle density including packet-overlap interference."""
    th = np.asarray(theta, dtype=float)
    sig2 = state.packet.sigma ** 2
    eig = state.modes.values(th)
    dens = np.zeros_like(th)
    M = len(state.coeffs)
    for a in range(M):
        for b in range(M):
            overlap = np.exp(-((state.centers[a] - state.centers[b]) ** 2) / (8.0 * sig2))
            term = (state.coeffs[a] * np.conj(state.coeffs[b]) * eig[a] * np.conj(eig[b])
                    * overlap)
            dens += term.real
    return dens
