"""Property-based checks of the algebraic invariants."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochaction import (ActionIncrement, AngularBasis, GaussianPacket, GridSpec,
                         RingModes, SpectralState, actual_velocity,
                         check_separability, compose_polar, effective_velocity,
                         gaussian_log_weight, normalize, polar_decompose,
                         transition_log_weight, WaveFunction)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)
positive = st.floats(min_value=1e-3, max_value=50.0, allow_nan=False)
scale = st.floats(min_value=0.05, max_value=10.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(dev1=positive, dev2=positive, lam=scale, th1=positive, th2=positive)
def test_exponential_law_is_additive(dev1, dev2, lam, th1, th2):
    inc1 = ActionIncrement.from_deviation(dev1)
    inc2 = ActionIncrement.from_deviation(dev2)
    lpj, lp1, lp2 = check_separability(inc1, inc2, lam, th1, th2)
    assert abs(lpj - (lp1 + lp2)) <= 1e-10 * max(1.0, abs(lpj))


@settings(max_examples=100, deadline=None)
@given(dev1=st.floats(min_value=0.05, max_value=10.0),
       dev2=st.floats(min_value=0.05, max_value=10.0), lam=scale)
def test_gaussian_counter_law_is_not_additive(dev1, dev2, lam):
    inc1 = ActionIncrement.from_deviation(dev1)
    inc2 = ActionIncrement.from_deviation(dev2)
    lpj, lp1, lp2 = check_separability(inc1, inc2, lam,
                                       log_weight=gaussian_log_weight)
    # cross term 2 dev1 dev2 / lam^2 never cancels for positive deviations
    assert abs(lpj - (lp1 + lp2)) == pytest.approx(2 * dev1 * dev2 / lam**2,
                                                   rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(dev=finite, lam=st.floats(min_value=-10.0, max_value=10.0).filter(
    lambda v: abs(v) > 1e-3))
def test_weight_finite_iff_sign_locked(dev, lam):
    w = transition_log_weight(ActionIncrement.from_deviation(dev), lam)
    if dev / lam >= 0:
        assert np.isfinite(w)
    else:
        assert w == float("-inf")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=5),
       st.floats(min_value=0.1, max_value=5.0))
def test_polar_round_trip(mode_amps, lam):
    grid = GridSpec(64, -1.0, 1.0, 64)
    th = grid.theta
    amp = np.zeros(64, dtype=complex)
    for k, (re, im) in enumerate(mode_amps):
        amp += complex(re, im) * np.exp(1j * (k - 2) * th)
    if np.max(np.abs(amp)) < 1e-12:
        return
    psi = normalize(WaveFunction(amp, grid, ("theta",)))
    fields = polar_decompose(psi, lam)
    back = compose_polar(fields, lam)
    off = ~fields.node_mask
    assert np.max(np.abs(back.amplitudes[off] - psi.amplitudes[off])) < 1e-10


@settings(max_examples=50, deadline=None)
@given(w=st.floats(min_value=0.05, max_value=0.95),
       phase=st.floats(min_value=0.0, max_value=6.28),
       theta=st.floats(min_value=0.0, max_value=6.28),
       q2=st.floats(min_value=-0.5, max_value=0.5),
       lam=st.floats(min_value=0.1, max_value=3.0))
def test_sign_average_identity(w, phase, theta, q2, lam):
    grid = GridSpec(32, -3.0, 3.0, 64)
    basis = AngularBasis(4)
    c = np.zeros(9, dtype=complex)
    c[4] = np.sqrt(w)
    c[5] = np.sqrt(1 - w) * np.exp(1j * phase)
    state = SpectralState(coeffs=c, modes=RingModes(basis),
                          packet=GaussianPacket(0.0, 0.3),
                          centers=np.zeros(9), t=0.0, grid=grid)
    pts = np.array([[theta, q2]])
    plus = actual_velocity(state, pts, g=1.0, lambda_signed=lam)
    minus = actual_velocity(state, pts, g=1.0, lambda_signed=-lam)
    eff = effective_velocity(state, pts, g=1.0)
    budget = 1e-12 * (np.max(np.abs(plus)) + np.max(np.abs(minus)) + 1.0)
    assert np.max(np.abs(0.5 * (plus + minus) - eff)) <= budget
