import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from ipml import transport as tr
from ipml.fields import BivariatePoly, GridField, grid_mesh
from oracles import characteristics_taylor


def _cubic(rng):
    return BivariatePoly.from_terms(3, {(i, d - i): rng.uniform(-1, 1) for d in (1, 2, 3) for i in range(d + 1)})


def _quartic(rng):
    return BivariatePoly.from_terms(4, {(i, d - i): rng.uniform(-1, 1) for d in range(5) for i in range(d + 1)})


def _callable(p: BivariatePoly):
    G = p.taylor()

    def f(x1, x2):
        out = np.zeros_like(np.asarray(x1, float))
        for i in range(G.shape[0]):
            for j in range(G.shape[1] - i):
                out = out + G[i, j] * x1**i * x2**j / (math.factorial(i) * math.factorial(j))
        return out

    return f


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_truncated_transport_matches_characteristics(seed):
    """Velocity vanishing at the origin closes the system; origin jets must agree."""
    rng = np.random.default_rng(seed)
    u1, u2 = _cubic(rng), _cubic(rng)
    g0 = _quartic(rng)
    T = 0.3
    got = tr.truncated_transport(g0, (u1, u2), 0.0, T, 4, 3).final
    ref = characteristics_taylor(_callable(u1), _callable(u2), _callable(g0), 0.0, T, 4)
    scale = np.max(np.abs(ref))
    for i in range(5):
        for j in range(5 - i):
            assert abs(got[i, j] - ref[i, j]) < 1e-6 * scale


def test_linear_velocity_composition():
    rng = np.random.default_rng(5)
    A = rng.uniform(-1, 1, (2, 2))
    lin = (BivariatePoly.linear(A[0, 0], A[0, 1], 3), BivariatePoly.linear(A[1, 0], A[1, 1], 3))
    h0 = _quartic(rng)
    got = tr.truncated_transport(h0, lin, 0.0, 0.5, 4, 1).final
    ref = h0.compose_linear(expm(-0.5 * A)).taylor()
    np.testing.assert_allclose(got, ref[:5, :5], atol=1e-10)


def test_backward_run_inverts_forward():
    rng = np.random.default_rng(6)
    u = (_cubic(rng), _cubic(rng))
    g0 = _quartic(rng)
    fwd = tr.truncated_transport(g0, u, 0.0, 0.2, 4, 4).final
    back = tr.truncated_transport(BivariatePoly.from_taylor(fwd), u, 0.2, 0.0, 4, 4).final
    np.testing.assert_allclose(back, g0.taylor()[:5, :5], atol=1e-9)


def test_trajectory_rows_and_offgrid():
    rng = np.random.default_rng(7)
    traj = tr.truncated_transport(_quartic(rng), (_cubic(rng), _cubic(rng)), 0.0, 0.05, 3, 3)
    rows = list(traj.rows())
    assert len(rows) == len(traj.times) * 10
    mid = 0.5 * (traj.times[3] + traj.times[4])
    assert np.all(np.isfinite(traj.at(mid)))
    with pytest.raises(ValueError):
        traj.at(1.0)


def test_truncate_grid_field():
    n, L = 64, math.pi
    x1, x2 = grid_mesh(n, L)
    f = GridField(np.sin(x1) * np.cos(2 * x2) + np.sin(x2), L)
    p = tr.truncate(f, 3)
    G = p.taylor()
    # spectral round-off grows like eps * kmax^order
    tol = lambda order: 1e-14 * (n / 2) ** order
    assert abs(G[1, 0] - 1.0) < tol(1)
    assert abs(G[0, 1] - 1.0) < tol(1)
    assert abs(G[3, 0] + 1.0) < tol(3)
    assert abs(G[1, 2] + 4.0) < tol(3)
    with pytest.raises(tr.DerivativeUnavailable):
        tr.truncate(lambda x1, x2: x1, 2)
    with pytest.raises(ValueError):
        tr.truncate(f, -1)


def test_flow_and_inverse():
    rng = np.random.default_rng(8)
    A0, A1 = rng.uniform(-1, 1, (2, 2, 2))
    flow = tr.linear_flow(lambda t: A0 + t * A1, 0.0, 0.4)
    assert flow.inverse_defect() < 1e-10
    # Liouville: det D(phi) = exp(int trace)
    tr_int = np.trace(A0) * flow.times + 0.5 * np.trace(A1) * flow.times**2
    np.testing.assert_allclose(flow.determinant(), np.exp(tr_int), rtol=1e-10)
    const = tr.linear_flow(A0, 0.0, 0.4)
    np.testing.assert_allclose(const.at(0.4)[0], expm(0.4 * A0), atol=1e-10)
    with pytest.raises(ValueError):
        const.at(0.123456789)


def test_angle_scalar_matches_vector_form():
    rng = np.random.default_rng(9)
    A0, A1 = rng.uniform(-1, 1, (2, 2, 2))

    def Du(t):
        return A0 + t * A1

    sc = tr.angle_evolution(Du, 0.4, 0.0, 0.3)
    vec = tr.angle_and_modulus(Du, 0.4, 2.0, 0.0, 0.3)
    np.testing.assert_allclose(sc.alpha, vec.alpha, atol=1e-10)
    assert np.all(vec.modulus > 0)


def test_angle_under_rotation_and_shear():
    omega = 1.3
    R = np.array([[0.0, -omega], [omega, 0.0]])
    rot = tr.angle_evolution(R, 0.2, 0.0, 0.5)
    np.testing.assert_allclose(rot.alpha, 0.2 + omega * rot.times, atol=1e-12)
    # shear u = (s x2, 0): the gradient of g0 o phi^-1 is (c, c' - s c t) for initial (c, c')
    s = 0.7
    S = np.array([[0.0, s], [0.0, 0.0]])
    res = tr.angle_and_modulus(S, 0.0, 1.0, 0.0, 1.0)
    np.testing.assert_allclose(np.tan(res.alpha), -s * res.times, atol=1e-10)


def test_degenerate_linear_part():
    with pytest.raises(tr.DegenerateLinearPart):
        tr.polar_form(np.array([[0.0, 0.0]]))


def test_step_underflow():
    huge = (BivariatePoly.linear(1e12, 0.0), BivariatePoly.linear(0.0, -1e12))
    with pytest.raises(tr.StepUnderflow):
        tr.truncated_transport(BivariatePoly.linear(1.0, 0.0), huge, 0.0, 1.0, 2, 1)


def test_coefficient_bound_report():
    rng = np.random.default_rng(11)
    u = (_cubic(rng), _cubic(rng))
    traj = tr.truncated_transport(BivariatePoly.linear(1.0, 0.5, 4), u, 0.0, 0.2, 4, 3)
    rep = tr.coefficient_bound_check(traj, velocity_norm=3.0, flow_bound=2.0)
    assert set(rep.constants) == {1, 2, 3, 4}
    assert rep.passed


@settings(max_examples=10)
@given(
    st.floats(-2, 2), st.floats(-2, 2),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4),
)
def test_transport_is_linear_in_data(c1, c2, A):
    u = (BivariatePoly.from_terms(2, {(1, 0): A[0], (0, 1): A[1], (2, 0): 0.3}),
         BivariatePoly.from_terms(2, {(1, 0): A[2], (0, 1): A[3], (1, 1): -0.2}))
    f = BivariatePoly.from_terms(3, {(1, 0): 1.0, (2, 1): 0.5})
    g = BivariatePoly.from_terms(3, {(0, 1): 1.0, (3, 0): -0.4})
    h = BivariatePoly.from_taylor(c1 * f.taylor() + c2 * g.taylor())
    run = lambda p: tr.truncated_transport(p, u, 0.0, 0.1, 3, 2).final
    np.testing.assert_allclose(run(h), c1 * run(f) + c2 * run(g), atol=1e-10)
