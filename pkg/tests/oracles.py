"""Independent reference values used by the test-suite.

The large-N limits of the cutoff integrals are the Taylor coefficients of the
symbol of the averaging operator, 2*pi*i*xi1/|xi|^2, expanded around the unit
frequency direction.  The expansion is computed here by truncated power-series
arithmetic, sharing no code with the quadrature in the package.
"""

from __future__ import annotations

import math

import numpy as np


def _mul(p, q, deg):
    out = np.zeros((deg + 1, deg + 1), complex)
    for i in range(deg + 1):
        for j in range(deg + 1 - i):
            if p[i, j] == 0:
                continue
            for k in range(deg + 1 - i - j):
                for l in range(deg + 1 - i - j - k):
                    out[i + k, j + l] += p[i, j] * q[k, l]
    return out


def symbol_taylor(w1: float, w2: float, deg: int) -> np.ndarray:
    """t[p, q] with 2 pi i (w1+e1)/|w+e|^2 = sum t[p,q] e1^p e2^q (|w| = 1)."""
    u = np.zeros((deg + 1, deg + 1), complex)
    if deg >= 1:
        u[1, 0] = 2 * w1
        u[0, 1] = 2 * w2
    if deg >= 2:
        u[2, 0] = 1.0
        u[0, 2] = 1.0
    inv = np.zeros_like(u)
    term = np.zeros_like(u)
    term[0, 0] = 1.0
    for n in range(deg + 1):
        inv += term
        term = -_mul(term, u, deg)
    num = np.zeros_like(u)
    num[0, 0] = 2j * np.pi * w1
    if deg >= 1:
        num[1, 0] = 2j * np.pi
    return _mul(num, inv, deg)


def limit_constants(a: float, b: float, K: int):
    """Reference c^s[i, j], c^c[i, j] for the phase N(b x1 + a x2)."""
    t = symbol_taylor(b, a, K)
    cs = np.zeros((K + 1, K + 1))
    cc = np.zeros((K + 1, K + 1))
    for i in range(K + 1):
        for j in range(i + 1):
            z = t[i - j, j] * (-1j) ** i
            cs[i, j] = z.real
            cc[i, j] = z.imag
    return cs, cc


C0_EXACT = 2 * math.pi


def characteristics_taylor(u1, u2, g0, t0: float, t1: float, order: int, radius: float = 0.25, nodes: int = 24):
    """Origin derivatives of the transported datum at t1, traced along characteristics.

    u1, u2, g0 are vectorized callables of (x1, x2).  Foot points are found by
    integrating dX/ds = u(X) from s = t1 back to s = t0 with a high-order
    adaptive integrator; derivatives come from a Chebyshev fit on a small box.
    """
    from numpy.polynomial import chebyshev as C
    from scipy.integrate import solve_ivp

    z = np.cos(np.pi * (np.arange(nodes) + 0.5) / nodes)
    Z1, Z2 = np.meshgrid(z, z, indexing="ij")
    x = np.stack([Z1.ravel(), Z2.ravel()]) * radius
    m = x.shape[1]

    def f(_, y):
        p = y.reshape(2, m)
        return np.concatenate([u1(p[0], p[1]), u2(p[0], p[1])])

    sol = solve_ivp(f, (t1, t0), x.ravel(), method="DOP853", rtol=1e-13, atol=1e-14)
    foot = sol.y[:, -1].reshape(2, m)
    vals = g0(foot[0], foot[1])
    deg = nodes - 4
    V = C.chebvander2d(Z1.ravel(), Z2.ravel(), [deg, deg])
    coef = np.linalg.lstsq(V, vals, rcond=None)[0].reshape(deg + 1, deg + 1)
    out = np.zeros((order + 1, order + 1))
    for p in range(order + 1):
        for q in range(order + 1 - p):
            d = C.chebder(C.chebder(coef, p, axis=0), q, axis=1)
            out[p, q] = C.chebval2d(0.0, 0.0, d) / radius ** (p + q)
    return out
