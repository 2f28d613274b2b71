import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ipml.fields import (
    BivariatePoly,
    GridField,
    ModulatedSum,
    PlaneWave,
    ResolutionError,
    bump,
    check_odd,
    classic_bump,
    grid_mesh,
    holder_norm,
    reflect,
    sample,
    smooth_step,
    spectral_derivative,
)

coef = st.floats(-2, 2, allow_nan=False)


def poly(draw_coefs, degree):
    c = np.zeros((degree + 1, degree + 1))
    it = iter(draw_coefs)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            c[i, j] = next(it)
    return BivariatePoly(c)


polys = st.integers(0, 4).flatmap(
    lambda d: st.lists(coef, min_size=(d + 1) * (d + 2) // 2, max_size=(d + 1) * (d + 2) // 2).map(
        lambda cs: poly(cs, d)
    )
)
points = st.tuples(st.floats(-1, 1), st.floats(-1, 1))


def test_grid_validation():
    with pytest.raises(ValueError):
        GridField(np.zeros((12, 12)), 1.0)
    with pytest.raises(ValueError):
        GridField(np.full((16, 16), np.nan), 1.0)
    with pytest.raises(ValueError):
        GridField(np.ones((16, 16)), 1.0, odd=True)


def test_spectral_derivative_of_trig_polynomial():
    n, L = 64, math.pi
    x1, x2 = grid_mesh(n, L)
    f = np.sin(3 * x1) * np.cos(2 * x2)
    d = spectral_derivative(f, L, 1, 2)
    exact = -4 * 3 * np.cos(3 * x1) * np.cos(2 * x2)
    assert np.max(np.abs(d - exact)) < 1e-11


def test_reflect_and_oddness():
    n, L = 32, 1.0
    x1, x2 = grid_mesh(n, L)
    f = np.sin(math.pi * x1) * np.cos(math.pi * x2)
    assert check_odd(f) < 1e-14
    assert np.array_equal(reflect(reflect(f)), f)


def test_smooth_step_plateau_and_support():
    r = np.linspace(0, 1.2, 121)
    s = smooth_step(r, 2.0)
    assert np.all(s[r <= 0.5] == 1.0) and np.all(s[r >= 1.0] == 0.0)
    assert np.all(np.diff(s) <= 0)
    assert bump(0.0, 0.0) == 1.0
    assert classic_bump(0.0, 0.0) == 1.0 and classic_bump(1.0, 0.0) == 0.0


def test_serialization_round_trip(tmp_path):
    x1, x2 = grid_mesh(32, 1.0)
    f = GridField(np.sin(x1) * x2, 1.0)
    p = tmp_path / "f.bin"
    f.save(p)
    g = GridField.load(p)
    assert np.array_equal(f.values, g.values) and g.L == f.L


def test_holder_norm_of_plane_wave():
    # |d/dx1 sin(k x1)| = k up to the fourth-order stencil error k (k h)^4 / 30
    L, k = math.pi, 5
    for n in (128, 256):
        x1, _ = grid_mesh(n, L)
        h = 2 * L / n
        f = GridField(np.sin(k * x1), L)
        assert abs(holder_norm(f, 1) - k) <= 1.01 * k * (k * h) ** 4 / 30


def test_sampling_refuses_unresolved_waves():
    w = PlaneWave(lambda x1, x2: bump(x1, x2), 200.0, 0.0, 1.0)
    with pytest.raises(ResolutionError):
        sample(w, 64, 1.0)
    sample(w, 1024, 1.0)


def test_modulated_sum_requires_distinct_multiples():
    X = BivariatePoly.linear(1.0, 0.0)
    with pytest.raises(ValueError):
        ModulatedSum(10.0, X, ((1, None, None), (1, None, None)))


@given(polys, polys, points)
def test_polynomial_product_pointwise(p, q, x):
    a, b = x
    assert math.isclose(p.multiply(q)(a, b), p(a, b) * q(a, b), rel_tol=1e-9, abs_tol=1e-9)


@given(polys, points)
def test_taylor_basis_round_trip(p, x):
    q = BivariatePoly.from_taylor(p.taylor())
    assert np.allclose(q.coeffs, p.coeffs, atol=1e-12)


@given(polys, st.lists(coef, min_size=4, max_size=4), points)
def test_compose_linear_pointwise(p, A, x):
    A = np.array(A).reshape(2, 2)
    y = A @ np.array(x)
    assert math.isclose(p.compose_linear(A)(*x), p(*y), rel_tol=1e-9, abs_tol=1e-8)


@given(polys, points, st.floats(1e-3, 1e-2))
def test_derivative_matches_difference_quotient(p, x, h):
    a, b = x
    fd = (p(a + h, b) - p(a - h, b)) / (2 * h)
    assert abs(p.derivative(1, 0)(a, b) - fd) < 50 * h * h
