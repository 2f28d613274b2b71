"""Exact velocity operators (spectral and direct-kernel) and the local
expansions V^K, u^K acting on plane waves and modulated sums."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fields import (
    BivariatePoly,
    MIN_POINTS_PER_WAVELENGTH,
    GridField,
    ModulatedSum,
    PlaneWave,
    grid_mesh,
    holder_norm,
    points_per_wavelength,
    smooth_step,
    spectral_derivative,
    wavenumbers,
)
from .kernel_constants import ConstantTable, default_table

Jet = dict  # (p, q) -> array of d1^p d2^q f


@dataclass(frozen=True)
class VelocityField:
    u1: GridField
    u2: GridField
    provenance: str

    @property
    def values(self) -> np.ndarray:
        return np.stack([self.u1.values, self.u2.values])

    def max_abs(self) -> float:
        return float(max(self.u1.max_abs(), self.u2.max_abs()))

    def divergence(self) -> np.ndarray:
        L = self.u1.L
        return spectral_derivative(self.u1.values, L, 1, 0) + spectral_derivative(self.u2.values, L, 0, 1)

    def scaled(self, c: float) -> "VelocityField":
        return VelocityField(self.u1.scaled(c), self.u2.scaled(c), self.provenance)

    def gradient_at_origin(self) -> np.ndarray:
        """Du(0) with rows indexing the component and columns the derivative."""
        out = np.zeros((2, 2))
        for r, comp in enumerate((self.u1, self.u2)):
            c = comp.center
            out[r, 0] = spectral_derivative(comp.values, comp.L, 1, 0)[c, c]
            out[r, 1] = spectral_derivative(comp.values, comp.L, 0, 1)[c, c]
        return out


# ---------------------------------------------------------------------------
# exact operators


def riesz_multipliers(n: int, L: float) -> tuple[np.ndarray, np.ndarray]:
    k = wavenumbers(n, L)
    k1 = k[:, None]
    k2 = k[None, :]
    mag2 = k1 * k1 + k2 * k2
    mag2[0, 0] = 1.0
    m1 = k1 * k2 / mag2
    m2 = -(k1 * k1) / mag2
    m1[0, 0] = 0.0
    m2[0, 0] = 0.0
    # the Nyquist lines carry no well-defined odd derivative; dropping them
    # keeps the discrete divergence at round-off
    nyq = np.zeros((n, n), bool)
    nyq[n // 2, :] = nyq[:, n // 2] = True
    m1[nyq] = 0.0
    m2[nyq] = 0.0
    return m1, m2


def velocity_spectral(rho: GridField, scale: float = 1.0) -> VelocityField:
    """u = -(R2, -R1) R1 rho by Fourier multipliers; the mean of rho is projected out.

    ``scale`` multiplies the result; the construction uses the normalization of
    the unit-kernel average, which is C0 times the Riesz velocity.
    """
    if rho.is_vector:
        raise ValueError("density must be scalar")
    if not np.all(np.isfinite(rho.values)):
        raise ValueError("density has non-finite samples")
    m1, m2 = riesz_multipliers(rho.n, rho.L)
    hat = np.fft.fft2(rho.values)
    u1 = scale * np.real(np.fft.ifft2(m1 * hat))
    u2 = scale * np.real(np.fft.ifft2(m2 * hat))
    if rho.odd:
        from .fields import reflect

        u1 = 0.5 * (u1 - reflect(u1))
        u2 = 0.5 * (u2 - reflect(u2))
    return VelocityField(GridField(u1, rho.L, rho.odd), GridField(u2, rho.L, rho.odd), "spectral")


def unit_kernel_scale(table: ConstantTable | None = None) -> float:
    """Ratio of the unit-kernel average velocity to the Riesz velocity.

    The averaging kernel h1/|h|^2 is odd and homogeneous of degree -1, so its
    symbol is a multiple of i xi1/|xi|^2; the multiple is the leading constant.
    """
    table = table or default_table()
    return table.C0


def velocity_kernel(
    rho: GridField,
    points: Sequence[tuple[float, float]],
    shell: float = 2.0,
    taper_cells: float = 8.0,
    images: int = 0,
    taylor_degree: int = 5,
) -> np.ndarray:
    """Principal-value convolution with the IPM kernel at grid nodes, plus the local term.

    A disk of radius shell*dx around the evaluation point is excluded from the
    lattice sum.  Near the point the Taylor model of rho of degree
    ``taylor_degree`` (spectral derivatives at the node), tapered by a smooth
    radial cutoff of radius taper_cells*dx, is subtracted from the summand and
    its convolution with the kernel is added back semi-analytically: each
    monomial splits into a radial moment of the taper times an angular moment
    against the kernel's cos(2 theta), sin(2 theta) harmonics.

    With ``images`` > 0 the periodic copies of rho in square shells up to that
    order are added, which gives the velocity of the periodized density.  The
    kernel sums to zero over each square shell of copies, so for mean-zero rho
    the sum converges quickly and matches the periodic operator.
    Returns shape (len(points), 2).
    """
    if rho.is_vector:
        raise ValueError("density must be scalar")
    x1, x2 = rho.mesh()
    dx = rho.dx
    area = dx * dx
    delta = taper_cells * dx
    L = rho.L
    jet = {
        (p, t - p): spectral_derivative(rho.values, L, p, t - p) for t in range(taylor_degree + 1) for p in range(t + 1)
    }
    local = _local_weights(taylor_degree, delta)
    out = np.zeros((len(points), 2))
    nz = rho.values != 0.0
    for k, (p1, p2) in enumerate(points):
        if not (-L + delta <= p1 < L - delta and -L + delta <= p2 < L - delta):
            raise ValueError(f"evaluation point {(p1, p2)} too close to the box edge")
        fi = (p1 + L) / dx
        fj = (p2 + L) / dx
        if abs(fi - round(fi)) > 1e-9 or abs(fj - round(fj)) > 1e-9:
            raise ValueError("kernel oracle evaluates at grid nodes only (symmetric PV shells)")
        i, j = int(round(fi)), int(round(fj))
        h1 = x1 - p1
        h2 = x2 - p2
        r2 = h1 * h1 + h2 * h2
        far = r2 > (shell * dx) ** 2
        r4 = np.where(far, r2 * r2, 1.0)
        # kernel at -h (the convolution evaluates rho at x - h = point + h)
        H1 = np.where(far, -2.0 * h1 * h2 / r4, 0.0) / (2 * np.pi)
        H2 = np.where(far, (h1 * h1 - h2 * h2) / r4, 0.0) / (2 * np.pi)
        taylor = np.zeros_like(h1)
        for (p, q), d in jet.items():
            taylor += d[i, j] * h1**p * h2**q / (math.factorial(p) * math.factorial(q))
        chi = smooth_step(np.sqrt(r2) / delta)
        summand = rho.values - chi * taylor
        near = sum(w * jet[pq][i, j] for pq, w in local.items())
        out[k, 0] = area * np.sum(H1 * summand) + near[0]
        out[k, 1] = area * np.sum(H2 * summand) + near[1] - 0.5 * rho.values[i, j]
        if images > 0:
            out[k] += area * _image_sum(h1[nz], h2[nz], rho.values[nz], L, images)
    return out


def _local_weights(degree: int, delta: float) -> dict:
    """Kernel integrals of chi(|h|/delta) h1^p h2^q / (p! q!) for even p + q >= 2."""
    xg, wg = np.polynomial.legendre.leggauss(64)
    sg = 0.75 + 0.25 * xg
    chi = smooth_step(sg)
    m = 256
    th = 2 * np.pi * np.arange(m) / m
    c, s = np.cos(th), np.sin(th)
    k1 = -2.0 * c * s / (2 * np.pi)
    k2 = (c * c - s * s) / (2 * np.pi)
    out = {}
    for d in range(2, degree + 1, 2):
        radial = 0.5**d / d + float(np.sum(0.25 * wg * sg ** (d - 1) * chi))
        for p in range(d + 1):
            q = d - p
            ang = c**p * s**q * (2 * np.pi / m)
            norm = delta**d * radial / (math.factorial(p) * math.factorial(q))
            out[(p, q)] = norm * np.array([np.sum(k1 * ang), np.sum(k2 * ang)])
    return out


def _image_sum(h1: np.ndarray, h2: np.ndarray, vals: np.ndarray, L: float, order: int) -> np.ndarray:
    """Contribution of the periodic copies of rho (offsets 2L m, 0 < |m|_inf <= order)."""
    m = np.arange(-order, order + 1)
    m1, m2 = np.meshgrid(m, m, indexing="ij")
    keep = (m1 != 0) | (m2 != 0)
    s1 = 2 * L * m1[keep]
    s2 = 2 * L * m2[keep]
    acc = np.zeros(2)
    for c in range(0, len(vals), 2048):
        a1 = h1[c : c + 2048, None] + s1[None, :]
        a2 = h2[c : c + 2048, None] + s2[None, :]
        r4 = (a1 * a1 + a2 * a2) ** 2
        v = vals[c : c + 2048, None]
        acc[0] += float(np.sum(v * (-2.0 * a1 * a2 / r4)))
        acc[1] += float(np.sum(v * ((a1 * a1 - a2 * a2) / r4)))
    return acc / (2 * np.pi)


# ---------------------------------------------------------------------------
# local expansions


def envelope_jet(values: np.ndarray, L: float, order: int) -> Jet:
    """Spectral derivatives d1^p d2^q of grid samples for p + q <= order."""
    hat = np.fft.fft2(values)
    n = values.shape[-1]
    k = wavenumbers(n, L)
    jet: Jet = {}
    for total in range(order + 1):
        for q in range(total + 1):
            p = total - q
            if p == 0 and q == 0:
                jet[(0, 0)] = np.asarray(values, float)
                continue
            k1 = (1j * k) ** p
            k2 = (1j * k) ** q
            if p % 2:
                k1[n // 2] = 0.0
            if q % 2:
                k2[n // 2] = 0.0
            jet[(p, q)] = np.real(np.fft.ifft2(hat * (k1[:, None] * k2[None, :])))
    return jet


def shift_jet(jet: Jet, p: int, q: int) -> Jet:
    """Jet of d1^p d2^q f from a jet of f (orders drop by p + q)."""
    return {(i - p, j - q): v for (i, j), v in jet.items() if i >= p and j >= q}


def _jet_order(jet: Jet) -> int:
    return max(i + j for i, j in jet)


def V_coefficients(jet: Jet, N, cs, cc, K: int):
    """(S, C) with V^K(f sin(phi)) = S sin(phi) + C cos(phi); V^{-1} = 0.

    Works for float arrays and for object arrays (exact or symbolic arithmetic).
    """
    zero = 0 * jet[(0, 0)]
    S = zero
    C = zero
    if K < 0:
        return S, C
    if _jet_order(jet) < K:
        raise ValueError(f"envelope jet of order {_jet_order(jet)} cannot feed V^{K}")
    for i in range(K + 1):
        scale = N ** (i + 1)
        for j in range(i + 1):
            d = jet[(i - j, j)]
            if cs[i][j] != 0:
                S = S + d * cs[i][j] / scale
            if cc[i][j] != 0:
                C = C + d * cc[i][j] / scale
    return S, C


def u_coefficients(jet: Jet, N, a, b, cs, cc, K: int):
    """u^K of f sin(N(b x1 + a x2) + theta0) as sin/cos coefficient pairs.

    Returns (S1, C1, S2, C2) with u^K_k = S_k sin(phase) + C_k cos(phase).
    Uses V(g cos) = S_g cos - C_g sin, since cos(phase) = sin(phase + pi/2).
    """
    Sf, Cf = V_coefficients(jet, N, cs, cc, K)
    zero = 0 * jet[(0, 0)]
    if K >= 1:
        S_d2, C_d2 = V_coefficients(shift_jet(jet, 0, 1), N, cs, cc, K - 1)
        S_d1, C_d1 = V_coefficients(shift_jet(jet, 1, 0), N, cs, cc, K - 1)
    else:
        S_d2 = C_d2 = S_d1 = C_d1 = zero
    S1 = N * a * Cf - S_d2
    C1 = -N * a * Sf - C_d2
    S2 = -N * b * Cf + S_d1
    C2 = N * b * Sf + C_d1
    return S1, C1, S2, C2


def _grid_of(w: PlaneWave, n: int | None, L: float | None):
    env = w.envelope
    if isinstance(env, GridField):
        return env.values, env.L
    if n is None or L is None:
        raise ValueError("closed-form envelopes need a sampling grid (n, L)")
    x1, x2 = grid_mesh(n, L)
    return np.asarray(env(x1, x2), float) * np.ones_like(x1), L


def approx_V(
    w: PlaneWave, K: int, table: ConstantTable | None = None, n: int | None = None, L: float | None = None
) -> GridField:
    """V^K(w) sampled on the envelope's grid (or on the supplied grid)."""
    table = table or default_table()
    vals, L = _grid_of(w, n, L)
    cs, cc = table.coefficients(w.a, w.b, max(K, 0))
    jet = envelope_jet(vals, L, max(K, 0))
    S, C = V_coefficients(jet, w.N, cs, cc, K)
    x1, x2 = grid_mesh(vals.shape[-1], L)
    ph = w.phase(x1, x2)
    return GridField(S * np.sin(ph) + C * np.cos(ph), L)


def approx_u(
    rho: PlaneWave, K: int, table: ConstantTable | None = None, n: int | None = None, L: float | None = None
) -> VelocityField:
    table = table or default_table()
    vals, L = _grid_of(rho, n, L)
    cs, cc = table.coefficients(rho.a, rho.b, K)
    jet = envelope_jet(vals, L, K)
    S1, C1, S2, C2 = u_coefficients(jet, rho.N, rho.a, rho.b, cs, cc, K)
    x1, x2 = grid_mesh(vals.shape[-1], L)
    ph = rho.phase(x1, x2)
    sn, cn = np.sin(ph), np.cos(ph)
    u1 = S1 * sn + C1 * cn
    u2 = S2 * sn + C2 * cn
    odd = bool(rho.odd)
    if odd:
        from .fields import reflect

        u1 = 0.5 * (u1 - reflect(u1))
        u2 = 0.5 * (u2 - reflect(u2))
    return VelocityField(GridField(u1, L, odd), GridField(u2, L, odd), f"approx-{K}")


# ---------------------------------------------------------------------------
# modulated sums


class VanishingLinearPart(ValueError):
    pass


def phase_direction(X: BivariatePoly) -> tuple[float, float, float]:
    """(|grad X(0)|, a, b) with grad X(0) / |grad X(0)| = (b, a)."""
    g = X.gradient_at_origin()
    mag = float(np.hypot(g[0], g[1]))
    if mag < 1e-12:
        raise VanishingLinearPart("phase polynomial has (numerically) no linear part")
    return mag, float(g[1] / mag), float(g[0] / mag)


def modulated_term_u(
    jet_c: Jet,
    jet_s: Jet,
    c: np.ndarray,
    s: np.ndarray,
    freq: float,
    a: float,
    b: float,
    cs,
    cc,
    K: int,
    channel: str,
):
    """u^K of g sin(Nl X) (channel 'sin') or g cos(Nl X) (channel 'cos').

    The phase is split as Nl X = phi + psi with phi = Nl P1X the plane-wave part
    (frequency ``freq`` along (b, a)) and psi the nonlinear remainder; jet_c and
    jet_s are jets of g cos(psi) and g sin(psi), c and s are cos(psi), sin(psi).
    Returns (P1, Q1, P2, Q2) with u^K_k = P_k sin(Nl X) + Q_k cos(Nl X).
    """
    Uc = u_coefficients(jet_c, freq, a, b, cs, cc, K)  # of (g c) sin(phi)
    Us = u_coefficients(jet_s, freq, a, b, cs, cc, K)  # of (g s) sin(phi)
    out = []
    for k in range(2):
        Sc, Cc = Uc[2 * k], Uc[2 * k + 1]
        Ss, Cs = Us[2 * k], Us[2 * k + 1]
        # u(F cos(phi)) = S_F cos(phi) - C_F sin(phi)
        if channel == "sin":
            # g sin(NlX) = (g c) sin(phi) + (g s) cos(phi)
            A = Sc - Cs
            B = Cc + Ss
        elif channel == "cos":
            # g cos(NlX) = (g c) cos(phi) - (g s) sin(phi)
            A = -Cc - Ss
            B = Sc - Cs
        else:
            raise ValueError("channel must be 'sin' or 'cos'")
        # A sin(phi) + B cos(phi) in terms of sin(NlX), cos(NlX)
        out.append(A * c + B * s)
        out.append(B * c - A * s)
    return tuple(out)


def approx_u_modulated(
    rho: ModulatedSum, K: int, n: int, L: float, table: ConstantTable | None = None
) -> tuple[ModulatedSum, ModulatedSum]:
    """u^K of a modulated sum, returned as one modulated sum per component.

    Envelopes are sampled on the periodic grid (n, L) and differentiated
    spectrally; the returned envelopes are grid-backed callables on that grid.
    """
    table = table or default_table()
    mag, a, b = phase_direction(rho.X)
    cs, cc = table.coefficients(a, b, K)
    x1, x2 = grid_mesh(n, L)
    lin = rho.X.truncate(1)
    psi_base = rho.N * (rho.X(x1, x2) - lin(x1, x2))
    acc = [dict(), dict()]
    for l, g1, g2 in rho.terms:
        psi = l * psi_base
        c, s = np.cos(psi), np.sin(psi)
        for channel, g in (("sin", g1), ("cos", g2)):
            if g is None:
                continue
            gv = np.asarray(g(x1, x2), float) * np.ones_like(x1)
            jc = envelope_jet(gv * c, L, K)
            js = envelope_jet(gv * s, L, K)
            P1, Q1, P2, Q2 = modulated_term_u(jc, js, c, s, rho.N * l * mag, a, b, cs, cc, K, channel)
            for comp, (P, Q) in enumerate(((P1, Q1), (P2, Q2))):
                cur = acc[comp].get(l, (0.0, 0.0))
                acc[comp][l] = (cur[0] + P, cur[1] + Q)
    out = []
    for comp in range(2):
        terms = tuple(
            (l, _grid_callable(P, L), _grid_callable(Q, L)) for l, (P, Q) in sorted(acc[comp].items())
        )
        out.append(ModulatedSum(rho.N, rho.X, terms, rho.support_radius, rho.odd))
    return out[0], out[1]


def _grid_callable(values, L: float) -> Callable:
    """Envelope backed by samples on the standard grid; evaluation only at those nodes."""
    vals = np.asarray(values, float)
    n = vals.shape[-1]
    x_axis = -L + (2 * L / n) * np.arange(n)

    def f(x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        i = np.rint((x1 + L) / (2 * L / n)).astype(int)
        j = np.rint((x2 + L) / (2 * L / n)).astype(int)
        if np.any(np.abs(x_axis[i % n] - x1) > 1e-9 * L) or np.any(np.abs(x_axis[j % n] - x2) > 1e-9 * L):
            raise ValueError("grid-backed envelope evaluated off its grid")
        return vals[i % n, j % n]

    f.values = vals
    return f


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ErrorStudyRow:
    N: float
    K: int
    J: int
    error: float
    fitted_slope: float


def fit_slope(N: Sequence[float], err: Sequence[float], last: int = 4) -> float:
    """Least-squares log-log slope over the last points of a sweep (unresolved points dropped)."""
    N = np.asarray(N, float)
    e = np.asarray(err, float)
    ok = np.isfinite(e)
    N, e = N[ok][-last:], e[ok][-last:]
    if len(e) < 2:
        return float("nan")
    if np.any(e <= 0):
        return 0.0 if np.all(e == 0) else float("nan")
    return float(np.polyfit(np.log(N), np.log(e), 1)[0])


def velocity_error_study(
    envelope: Callable,
    a: float,
    b: float,
    K_list: Sequence[int],
    N_list: Sequence[float],
    n: int,
    L: float,
    J_list: Sequence[int] = (0,),
    table: ConstantTable | None = None,
) -> list[ErrorStudyRow]:
    """||u - u^K||_{C^J} over a frequency sweep, exact velocity from the spectral oracle."""
    table = table or default_table()
    scale = unit_kernel_scale(table)
    x1, x2 = grid_mesh(n, L)
    f = np.asarray(envelope(x1, x2), float) * np.ones_like(x1)
    Kmax = max(K_list)
    jet = envelope_jet(f, L, Kmax)
    errs: dict[tuple[int, int], list[float]] = {(K, J): [] for K in K_list for J in J_list}
    for N in N_list:
        ph = N * (b * x1 + a * x2)
        sn, cn = np.sin(ph), np.cos(ph)
        rho = GridField(f * sn, L)
        resolved = points_per_wavelength(rho.values, L) >= MIN_POINTS_PER_WAVELENGTH
        exact = velocity_spectral(rho, scale)
        for K in K_list:
            cs, cc = table.coefficients(a, b, K)
            sub = {k: v for k, v in jet.items() if k[0] + k[1] <= K}
            S1, C1, S2, C2 = u_coefficients(sub, N, a, b, cs, cc, K)
            d1 = exact.u1.values - (S1 * sn + C1 * cn)
            d2 = exact.u2.values - (S2 * sn + C2 * cn)
            for J in J_list:
                if J == 0:
                    e = float(max(np.max(np.abs(d1)), np.max(np.abs(d2))))
                elif resolved:
                    e = max(
                        holder_norm(GridField(d1, L), J, check_resolution=False),
                        holder_norm(GridField(d2, L), J, check_resolution=False),
                    )
                else:
                    e = float("nan")  # finite differences cannot resolve this N
                errs[(K, J)].append(e)
    rows = []
    for (K, J), e in errs.items():
        slope = fit_slope(N_list, e)
        rows.extend(ErrorStudyRow(float(N), K, J, float(v), slope) for N, v in zip(N_list, e))
    return rows
