import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from ipml import layer_dynamics as ld
from ipml.fields import GridField, grid_mesh
from ipml.transport import angle_rate
from ipml.velocity import velocity_spectral

C0 = 2 * math.pi


@pytest.fixture(scope="module")
def window():
    layer = ld.SyntheticLayer(8 * math.log(2.0), 0.125, C0)
    return layer.window(ld.hypothesis_log_N_next(layer, 0.125))


def test_gradient_pattern_matches_spectral_velocity():
    """A single layer sin(N e.x) B/N has exactly the patterned velocity gradient."""
    n, L = 64, math.pi
    x1, x2 = grid_mesh(n, L)
    k = np.array([3.0, 4.0])
    N = float(np.linalg.norm(k))
    alpha = math.atan2(k[1], k[0])
    B = 1.7
    rho = GridField(B / N * np.sin(k[0] * x1 + k[1] * x2), L)
    Du = velocity_spectral(rho, C0).gradient_at_origin()
    np.testing.assert_allclose(Du, ld.velocity_gradient_pattern(B, C0, alpha), atol=1e-12)
    assert abs(np.trace(ld.velocity_gradient_pattern(B, C0, 0.3))) < 1e-14


@given(st.floats(0.0, 2 * math.pi), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_angle_rate_matches_transported_gradient(alpha, a, b, c):
    A = np.array([[a, b], [c, -a]])
    h = 1e-4
    theta = expm(-A.T * h) @ np.array([math.cos(alpha), math.sin(alpha)])
    fd = (math.atan2(theta[1], theta[0]) - alpha + math.pi) % (2 * math.pi) - math.pi
    assert abs(fd / h - angle_rate(A, alpha)) < 1e-3


@given(st.floats(0.01, 0.24), st.floats(1e-6, 0.5))
def test_final_angle_inverse(beta, offset):
    x = ld.log_N_for_final_angle(offset, beta)
    assert math.isclose(ld.final_angle(x, beta) - math.pi / 2, offset, rel_tol=1e-10)


def test_window_constants():
    assert math.isclose(ld.c_tilde(C0), 8 * math.pi**2)
    st_ = ld.LayerState(0, math.log(2.0**16), 0.125)
    lo, hi = st_.window(C0)
    assert hi == 1.0
    assert math.isclose(1 - lo, 8 * math.pi**2 * 2.0 ** (-16 * 0.75 * 0.125))
    assert st_.amplitude_range == (0.5 * 2.0**2, 2 * 2.0**2)
    with pytest.raises(ValueError):
        ld.LayerState(0, 5.0, 0.3)
    with pytest.raises(ValueError):
        ld.LayerState(0, 0.5, 0.1)


def test_find_t0_linear_angles():
    """alpha_next - alpha_p = 3 (t - 1) - 0.1 crosses -pi/2 at an explicit time."""
    t_star = 1 + (0.1 - math.pi / 2) / 3
    t0 = ld.find_t0(lambda t: 3 * (t - 1) - 0.1, lambda t: 0.0, (0.0, 1.0))
    assert abs(t0 - t_star) < 1e-10


def test_find_t0_picks_latest_crossing():
    f = lambda t: -math.pi / 2 + 0.3 * math.sin(20 * t)
    t0 = ld.find_t0(f, lambda t: 0.0, (0.0, 1.0))
    latest = max(k * math.pi / 20 for k in range(0, 7) if k * math.pi / 20 <= 1.0)
    assert abs(t0 - latest) < 1e-9


def test_find_t0_no_crossing():
    with pytest.raises(ld.NoCrossing):
        ld.find_t0(lambda t: 0.0, lambda t: 0.0, (0.0, 1.0))


def test_amplitude_constant_rate():
    model = ld.AmplitudeModel(lambda t: 2.0, lambda t: 0.4, lambda t: 1.2, C0)
    traj = ld.evolve_amplitude(model, 1.0, 0.5)
    rate = 2.0 * C0 * math.cos(1.2) * math.sin(0.4 - 1.2)
    np.testing.assert_allclose(traj.log_amplitude, rate * (traj.times - 1.0), atol=1e-12)
    assert math.isclose(traj.log_ratio(1.0, 0.5), 0.5 * rate, rel_tol=1e-10)


def test_min_pair_ratio():
    tr = ld.AmplitudeTrajectory(np.array([0.0, 1.0, 2.0, 3.0]), np.log(np.array([1.0, 3.0, 1.5, 4.0])))
    assert math.isclose(tr.min_pair_ratio(), 0.5)
    assert tr.min_pair_ratio(lo=2.0) == 1.0


def test_window_diagnostics(window):
    d = window.diagnostics()
    assert d.t0_in_window and d.monotone
    assert d.window[0] <= d.t0 <= 1.0
    assert d.min_pair_ratio >= math.exp(-2)
    assert d.log_ratio > 0
    # the relative angle equals -pi/2 at the critical time
    s0 = window.s0
    assert abs(window.alpha_next_s(s0) - window.alpha_p_s(s0) + math.pi / 2) < 1e-8
    # terminal angles are imposed at t = 1
    assert abs(window.alpha_p(1.0) - window.layer.state.terminal_angle) < 1e-14


def test_window_amplitude_matches_physical_time_model(window):
    """The window ODE (stretched time) and the physical-time ODE give the same ratio."""
    model = window.layer.amplitude_model(window)
    traj = ld.evolve_amplitude(model, 1.0, window.t0, step=(1 - window.t0) / 4000)
    assert abs(-traj.log_amplitude[-1] - window.log_ratio) < 1e-6 * max(1.0, abs(window.log_ratio))


def test_window_rejects_outside_times(window):
    with pytest.raises(ValueError):
        window.state(1.5)


def test_growth_ratio_increases_with_frequency():
    sweep = ld.growth_sweep([k * math.log(2.0) for k in (8.0, 12.0, 16.0)], 0.125, C0)
    assert np.all(np.diff(sweep.log_ratio) > 0)
    assert sweep.slope > 0


def test_solve_growth_balance_closed_form():
    """log_ratio(x) = 2 sqrt(x) balances x / beta at x = (2 beta)^2."""
    beta = 3.0
    x, res, it = ld.solve_growth_balance(lambda x: 2 * math.sqrt(x), beta, (1.0, 100.0))
    assert abs(x - 36.0) < 1e-6 and res <= ld.RESIDUAL_TOL and it > 0
    with pytest.raises(ld.BracketError):
        ld.solve_growth_balance(lambda x: 0.0, beta, (1.0, 100.0))


def test_desk_selection_falls_back():
    layer = ld.SyntheticLayer(8 * math.log(2.0), 0.125, C0)
    with pytest.raises(ld.BracketError):
        ld.select_Np1(layer, 0.125)
    fb = ld.fallback_selection(layer, "no root")
    assert math.isclose(fb.N, 4 * 2.0**8) and fb.tag.startswith("asymptotic")


def test_selection_beta_constraint():
    layer = ld.SyntheticLayer(8 * math.log(2.0), 0.2, C0)
    with pytest.raises(ValueError):
        ld.select_Np1(layer, 0.05)


def test_contract_flags_beta_chain():
    states = [ld.LayerState(0, math.log(2.0**8), 0.05), ld.LayerState(1, math.log(2.0**12), 0.2)]
    rep = ld.validate_layer_contract(states)
    assert rep.passed
    bad = [ld.LayerState(0, math.log(2.0**8), 0.2), ld.LayerState(1, math.log(2.0**12), 0.05)]
    rep = ld.validate_layer_contract(bad)
    assert [c.clause for c in rep.hard_failures] == ["chain_beta"]
    assert "chain_beta" in rep.text()


def test_contract_snapshot_clauses():
    n, L = 64, math.pi
    x1, x2 = grid_mesh(n, L)
    N, alpha, A = 5.0, math.atan2(4, 3), 1.2
    rho = GridField(A / N * np.sin(3 * x1 + 4 * x2), L)
    st_ = ld.LayerState(0, math.log(N), 0.1)
    rep = ld.validate_layer_contract([st_], [ld.LayerSnapshot(rho, A, A, alpha)], C0=C0)
    by = {c.clause: c for c in rep.clauses}
    assert by["gradient_x1"].value < 1e-12 and by["gradient_x2"].value < 1e-12
    assert by["velocity_du1_dx2"].value < 1e-12
    # a periodic mode fills the box, so the support clause reports a failure
    assert not by["support"].passed
