"""Metric Hamiltonians, Cayley propagation, curvature term, residual pair."""
import numpy as np
import pytest
from scipy.linalg import eigh

from stochaction import (CartesianGrid, InvalidSystemError, MetricPotentialSystem,
                         build_metric_hamiltonian, build_unsymmetrized_hamiltonian,
                         evolve_grid, quantum_potential, verify_hjm_residual)


def harmonic_system():
    return MetricPotentialSystem.flat(1, scalar=lambda c: 0.5 * c[0] ** 2)


@pytest.fixture
def line_grid():
    return CartesianGrid((-7.0,), (7.0,), (512,), (False,))


def normalized(psi, grid):
    return psi / np.sqrt(grid.norm2(psi))


class TestHamiltonianAssembly:
    def test_variable_metric_is_hermitian(self):
        grid = CartesianGrid((0.0,), (2 * np.pi,), (128,), (True,))
        system = MetricPotentialSystem.isotropic(
            1, lambda c: 1.0 + 0.1 * np.sin(c[0]))
        op = build_metric_hamiltonian(system, 1.0, grid)
        assert op.hermiticity_defect() < 1e-10

    def test_2d_variable_metric_is_hermitian(self):
        grid = CartesianGrid((-2.0, -2.0), (2.0, 2.0), (24, 24), (False, False))

        def metric(coords):
            x, y = coords
            out = np.zeros(x.shape + (2, 2))
            out[..., 0, 0] = 1.0 + 0.2 * np.sin(x)
            out[..., 1, 1] = 1.0 + 0.1 * np.cos(y)
            out[..., 0, 1] = out[..., 1, 0] = 0.05 * np.sin(x) * np.cos(y)
            return out

        def vector(coords):
            x, y = coords
            return np.stack([0.1 * y, -0.1 * x], axis=-1)

        system = MetricPotentialSystem(2, metric, vector,
                                       lambda c: 0.5 * (c[0] ** 2 + c[1] ** 2))
        op = build_metric_hamiltonian(system, 1.0, grid)
        assert op.hermiticity_defect() < 1e-10

    def test_naive_ordering_breaks_hermiticity(self):
        grid = CartesianGrid((0.0,), (2 * np.pi,), (128,), (True,))
        system = MetricPotentialSystem.isotropic(
            1, lambda c: 1.0 + 0.1 * np.sin(c[0]))
        op = build_unsymmetrized_hamiltonian(system, 1.0, grid)
        assert op.hermiticity_defect() > 1e-4

    def test_non_positive_metric_rejected(self):
        grid = CartesianGrid((-1.0,), (1.0,), (64,), (False,))
        system = MetricPotentialSystem.isotropic(1, lambda c: c[0])  # changes sign
        with pytest.raises(InvalidSystemError):
            build_metric_hamiltonian(system, 1.0, grid)

    def test_oscillator_ground_state_is_near_eigenvector(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        x = line_grid.axis(0)
        psi0 = normalized(np.exp(-x**2 / 2) / np.pi**0.25, line_grid)
        residual = op.apply(psi0.astype(complex)) - 0.5 * psi0
        assert np.sqrt(line_grid.norm2(residual)) < 1e-4

    def test_constant_gauge_spectrum_matches_plane_wave_symbol(self):
        n, a0 = 128, 0.37
        grid = CartesianGrid((0.0,), (2 * np.pi,), (n,), (True,))
        system = MetricPotentialSystem.flat(
            1, vector=lambda c: np.stack([np.full_like(c[0], a0)], axis=-1))
        op = build_metric_hamiltonian(system, 1.0, grid)
        evals = np.sort(np.linalg.eigvalsh(op.dense()))
        h = grid.spacing(0)
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        # the discrete operator applied to exp(ikx), worked out by hand
        symbol = 0.5 * ((2 - 2 * np.cos(k * h)) / h**2
                        - 2 * a0 * np.sin(k * h) / h + a0**2)
        assert np.max(np.abs(evals - np.sort(symbol))) < 1e-6


class TestEvolveGrid:
    def test_norm_drift_tiny(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        x = line_grid.axis(0)
        psi = normalized(np.exp(-((x - 1.0) ** 2) / 2).astype(complex), line_grid)
        out = evolve_grid(psi, op, 2e-3, 1000)
        assert abs(1.0 - line_grid.norm2(out)) < 1e-8

    def test_free_packet_dispersion(self):
        grid = CartesianGrid((-30.0,), (30.0,), (768,), (False,))
        x = grid.axis(0)
        psi = normalized(np.exp(-x**2 / 4).astype(complex), grid)  # width 1
        op = build_metric_hamiltonian(MetricPotentialSystem.flat(1), 1.0, grid)
        out = evolve_grid(psi, op, 2e-3, 1000)
        dens = np.abs(out) ** 2
        total = dens.sum() * grid.cell_volume
        mean = np.sum(x * dens) * grid.cell_volume / total
        var = np.sum((x - mean) ** 2 * dens) * grid.cell_volume / total
        exact = 1.0 + (2.0 / 2.0) ** 2
        assert abs(var - exact) / exact < 0.005

    def test_discrete_ground_state_is_stationary(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        _, vecs = eigh(op.dense())
        gs = normalized(vecs[:, 0].astype(complex), line_grid)
        out = evolve_grid(gs, op, 2e-3, 3142)  # one period
        assert np.max(np.abs(np.abs(out) ** 2 - np.abs(gs) ** 2)) < 1e-6

    def test_second_order_self_convergence(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        x = line_grid.axis(0)
        psi = normalized(np.exp(-((x - 1.0) ** 2) / 2).astype(complex), line_grid)
        outs = {dt: evolve_grid(psi, op, dt, int(round(1.0 / dt)))
                for dt in (0.05, 0.025, 0.0125)}
        d1 = np.sqrt(line_grid.norm2(outs[0.05] - outs[0.025]))
        d2 = np.sqrt(line_grid.norm2(outs[0.025] - outs[0.0125]))
        assert 3.4 < d1 / d2 < 4.6

    def test_bad_steps_rejected(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        with pytest.raises(ValueError):
            evolve_grid(np.ones(512, dtype=complex), op, -0.1, 10)


class TestQuantumPotential:
    def test_constant_amplitude_gives_zero(self):
        grid = CartesianGrid((0.0,), (2 * np.pi,), (64,), (True,))
        Q, valid = quantum_potential(np.ones(64), MetricPotentialSystem.flat(1),
                                     grid, 1.0)
        assert np.allclose(Q[valid], 0.0, atol=1e-12)

    def test_exact_quadratic_scaling(self, line_grid):
        x = line_grid.axis(0)
        R = np.exp(-x**2 / 2)
        system = MetricPotentialSystem.flat(1)
        Q1, v1 = quantum_potential(R, system, line_grid, 1.0)
        Qh, vh = quantum_potential(R, system, line_grid, 0.5)
        assert np.array_equal(v1, vh)
        assert np.allclose(Qh[vh], 0.25 * Q1[v1], rtol=0, atol=1e-14)

    def test_stationary_madelung_balance(self, line_grid):
        # ground state: curvature term + V must be flat at the energy
        x = line_grid.axis(0)
        R = np.exp(-x**2 / 2) / np.pi**0.25
        Q, valid = quantum_potential(R, harmonic_system(), line_grid, 1.0)
        balance = Q[valid] + 0.5 * x[valid] ** 2
        assert np.max(np.abs(balance - 0.5)) < 1e-4


class TestResidualPair:
    @staticmethod
    def _history(n, dt, steps, record):
        grid = CartesianGrid((-8.0,), (8.0,), (n,), (False,))
        op = build_metric_hamiltonian(harmonic_system(), 1.0, grid)
        x = grid.axis(0)
        psi = np.exp(-((x - 1.0) ** 2) / 2).astype(complex)
        psi = normalized(psi, grid)
        _, hist = evolve_grid(psi, op, dt, steps, record_every=record)
        return grid, hist

    def test_residuals_shrink_fourfold_under_refinement(self):
        grid_c, hist_c = self._history(256, 2e-3, 250, 5)
        grid_f, hist_f = self._history(512, 1e-3, 500, 5)
        res_c = verify_hjm_residual(hist_c[::10], harmonic_system(), grid_c, 1.0)
        res_f = verify_hjm_residual(hist_f[::10], harmonic_system(), grid_f, 1.0)
        assert 3.0 < res_c["continuity_mean"] / res_f["continuity_mean"] < 5.0
        assert 3.0 < res_c["hj_mean"] / res_f["hj_mean"] < 5.0

    def test_eigenstate_continuity_residual_vanishes(self, line_grid):
        op = build_metric_hamiltonian(harmonic_system(), 1.0, line_grid)
        _, vecs = eigh(op.dense())
        gs = normalized(vecs[:, 0].astype(complex), line_grid)
        _, hist = evolve_grid(gs, op, 2e-3, 100, record_every=10)
        res = verify_hjm_residual(hist, harmonic_system(), line_grid, 1.0)
        assert res["continuity_mean"] < 1e-6

    def test_dropping_curvature_term_blows_up_residual(self):
        grid, hist = self._history(256, 2e-3, 100, 10)
        full = verify_hjm_residual(hist, harmonic_system(), grid, 1.0)
        ablated = verify_hjm_residual(hist, harmonic_system(), grid, 1.0,
                                      include_quantum_term=False)
        assert ablated["hj_mean"] > 50 * full["hj_mean"]
