"""First-order solution operator, Duhamel accumulation, frequency projections
and the correction iteration that builds one new layer.

Envelopes live on a *label grid*: the physical point carrying label y at time
t is x = D(t) y, where D is the Jacobian of the linear flow of the background
velocity started at the activation time t0.  Transport of envelopes by that
flow is then the identity on label arrays, Duhamel integrals become pointwise
quadratures in y, and x-derivatives are spectral multipliers built from D^{-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import ndimage

from .fields import (
    BivariatePoly,
    GridField,
    MIN_POINTS_PER_WAVELENGTH,
    ModulatedSum,
    ResolutionError,
    bump,
    grid_mesh,
    spectral_derivative,
    wavenumbers,
)
from .kernel_constants import ConstantTable, default_table
from .layer_dynamics import AmplitudeModel, NoCrossing, c_tilde, find_t0
from .transport import (
    CoefficientTrajectory,
    LinearFlow,
    Trajectory,
    _pad,
    integrate,
    linear_flow,
    taylor_at_origin,
    transport_rhs,
)
from .velocity import VelocityField, modulated_term_u, velocity_spectral

CHANNELS = ("sin", "cos")
M_CAP = 4  # highest order in the shipped constant table
LABEL_POINTS = 128
UPSAMPLE = 4
SPLINE_ORDER = 5
BLOWUP_FACTOR = 1e6
SUPPORT_TOL = 1e-8
ENVELOPE_SHARPNESS = 2.0  # cutoff sharpness; resolves fourth derivatives on the label grid


class EnvelopeBlowup(ResolutionError):
    """The correction iteration left the regime where its envelopes are representable."""


# ---------------------------------------------------------------------------
# truncation degree


def truncation_degree(beta: float, cap: int | None = M_CAP) -> tuple[int, bool]:
    """(M, capped) with M = ceil(1/beta^2), limited to ``cap``."""
    if not 0.0 < beta < 0.25:
        raise ValueError("beta must lie in (0, 1/4)")
    M = math.ceil(1.0 / beta**2 - 1e-12)
    if cap is not None and M > cap:
        return cap, True
    return M, False


def terminal_angle(N: float, beta: float) -> float:
    return math.pi / 2 + N ** (-beta / 8)


# ---------------------------------------------------------------------------
# background layers


class Background:
    """Density, velocity and source of the layers already built, on a periodic grid.

    ``density_fn(t)`` returns grid samples; ``source_fn(t)`` the source they solve
    with.  Without a source function the implied source u . grad(rho) of a
    time-independent density is used.  Quantities are cached per time.
    """

    def __init__(
        self,
        n: int,
        L: float,
        density_fn: Callable[[float], np.ndarray],
        source_fn: Callable[[float], np.ndarray] | None = None,
        static: bool = False,
        C0: float | None = None,
        label: str = "background",
        cache_size: int = 64,
    ):
        self.n = n
        self.L = L
        self.C0 = default_table().C0 if C0 is None else C0
        self._density_fn = density_fn
        self._source_fn = source_fn
        self.static = static
        self.label = label
        self._cache: dict = {}
        self._cache_size = cache_size

    def _key(self, t: float):
        return 0.0 if self.static else round(float(t), 13)

    def _cached(self, name: str, t: float, make):
        key = (name, self._key(t))
        if key not in self._cache:
            if len(self._cache) > self._cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = make()
        return self._cache[key]

    def density(self, t: float) -> GridField:
        return self._cached("rho", t, lambda: GridField(np.asarray(self._density_fn(t), float), self.L))

    def velocity(self, t: float) -> VelocityField:
        return self._cached("u", t, lambda: velocity_spectral(self.density(t), self.C0))

    def source(self, t: float) -> GridField:
        def make():
            if self._source_fn is not None:
                return GridField(np.asarray(self._source_fn(t), float), self.L)
            if not self.static:
                raise ValueError("a time-dependent background needs an explicit source")
            return GridField(advection(self.velocity(t), self.density(t)), self.L)

        return self._cached("F", t, make)

    def velocity_taylor(self, t: float, k: int) -> tuple[np.ndarray, np.ndarray]:
        def make():
            u = self.velocity(t)
            return taylor_at_origin(u.u1, k), taylor_at_origin(u.u2, k)

        return self._cached(("Ut", k), t, make)

    def density_taylor(self, t: float, k: int) -> np.ndarray:
        return self._cached(("rt", k), t, lambda: taylor_at_origin(self.density(t), k))

    def velocity_poly(self, t: float, k: int) -> tuple[BivariatePoly, BivariatePoly]:
        U1, U2 = self.velocity_taylor(t, k)
        return BivariatePoly.from_taylor(U1), BivariatePoly.from_taylor(U2)

    def jacobian(self, t: float) -> np.ndarray:
        U1, U2 = self.velocity_taylor(t, 1)
        return np.array([[U1[1, 0], U1[0, 1]], [U2[1, 0], U2[0, 1]]])

    def gradient(self, t: float) -> np.ndarray:
        R = self.density_taylor(t, 1)
        return np.array([R[1, 0], R[0, 1]])

    def top_layer(self, t: float) -> tuple[float, float]:
        """(A_p, alpha_p): the whole gradient at the origin is attributed to the top layer."""
        g = self.gradient(t)
        return float(np.hypot(g[0], g[1])), float(math.atan2(g[1], g[0]))


def advection(u: VelocityField, rho: GridField) -> np.ndarray:
    L = rho.L
    return u.u1.values * spectral_derivative(rho.values, L, 1, 0) + u.u2.values * spectral_derivative(
        rho.values, L, 0, 1
    )


def seed_density(N0: float, beta0: float = 0.125, sharpness: float = ENVELOPE_SHARPNESS) -> Callable:
    """rho_0(x) = f(N0^{1/4} x) sin(N0 (cos a0 x1 + sin a0 x2)) / N0^{1 - beta0}.

    f is the radial cutoff equal to 1 on |x| <= 1/2 and 0 outside the unit ball.
    """
    a0 = terminal_angle(N0, beta0)
    c, s = math.cos(a0), math.sin(a0)
    scale = N0**0.25

    def rho0(x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        return bump(scale * x1, scale * x2, 1.0, sharpness) * np.sin(N0 * (c * x1 + s * x2)) / N0 ** (1 - beta0)

    rho0.angle = a0
    rho0.gradient_at_origin = N0**beta0 * np.array([c, s])
    return rho0


def seed_background(N0: float, n: int, L: float, beta0: float = 0.125, C0: float | None = None) -> Background:
    """The time-independent zeroth layer with its implied source u . grad(rho)."""
    f = seed_density(N0, beta0)
    x1, x2 = grid_mesh(n, L)
    vals = f(x1, x2)
    bg = Background(n, L, lambda t: vals, static=True, C0=C0, label=f"seed N0={N0:g}")
    bg.N = N0
    bg.beta = beta0
    bg.closed_form = f
    return bg


# ---------------------------------------------------------------------------
# phase system


@dataclass
class PhaseSystem:
    """Phase X(x, t) of the new layer: degree-M Taylor coefficients on a uniform grid."""

    N: float
    beta: float
    M: int
    M_requested: int
    trajectory: Trajectory
    _angles: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = self.trajectory.states
        self._angles = np.unwrap(np.arctan2(G[:, 0, 1], G[:, 1, 0]))

    @property
    def capped(self) -> bool:
        return self.M < self.M_requested

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def t_start(self) -> float:
        return float(self.times[-1])

    def taylor(self, t: float) -> np.ndarray:
        return self.trajectory.at(t)

    def poly(self, t: float) -> BivariatePoly:
        return BivariatePoly.from_taylor(self.taylor(t))

    def gradient(self, t: float) -> np.ndarray:
        G = self.taylor(t)
        return np.array([G[1, 0], G[0, 1]])

    def angle(self, t: float) -> float:
        """Angle of grad X(0, t), continuous along the trajectory."""
        g = self.gradient(t)
        raw = math.atan2(g[1], g[0])
        ts, ang = self.times[::-1], self._angles[::-1]
        ref = float(np.interp(t, ts, ang))
        return raw + 2 * math.pi * round((ref - raw) / (2 * math.pi))

    def coefficient_bound(self, t_lo: float, t_hi: float = 1.0) -> float:
        ts = self.times
        sel = (ts >= t_lo - 1e-12) & (ts <= t_hi + 1e-12)
        coeffs = [BivariatePoly.from_taylor(G).coeffs for G in self.trajectory.states[sel]]
        return float(max(np.max(np.abs(c)) for c in coeffs))

    def gradient_range(self, t_lo: float, t_hi: float = 1.0) -> tuple[float, float]:
        ts = self.times
        sel = (ts >= t_lo - 1e-12) & (ts <= t_hi + 1e-12)
        G = self.trajectory.states[sel]
        mag = np.hypot(G[:, 1, 0], G[:, 0, 1])
        return float(mag.min()), float(mag.max())


def _phase_rhs(background: Background, M: int):
    def rhs(t, G):
        U1, U2 = background.velocity_taylor(t, M)
        return transport_rhs(G, U1, U2)

    return rhs


def evolve_phase(
    background: Background,
    N: float,
    beta: float,
    t_start: float,
    M_cap: int | None = M_CAP,
    step: float = 1e-3,
) -> PhaseSystem:
    """Degree-M truncated transport of the anchor phase from t = 1 back to t_start."""
    M, _ = truncation_degree(beta, M_cap)
    M_req, _ = truncation_degree(beta, None)
    a1 = terminal_angle(N, beta)
    X1 = BivariatePoly.linear(math.cos(a1), math.sin(a1), M)
    span = 1.0 - t_start
    n = max(1, math.ceil(span / step - 1e-12))
    traj = integrate(_phase_rhs(background, M), _pad(X1.taylor(), M + 1), 1.0, t_start, span / n, n)
    return PhaseSystem(N, beta, M, M_req, traj)


def extend_phase(phase: PhaseSystem, background: Background, t_start: float) -> PhaseSystem:
    """Continue the backward integration to an earlier t_start at the same step."""
    old = phase.trajectory
    if t_start >= phase.t_start:
        return phase
    h = abs(old.times[1] - old.times[0]) if len(old.times) > 1 else 1e-3
    n = max(1, math.ceil((phase.t_start - t_start) / h - 1e-9))
    more = integrate(old.rhs, old.states[-1], phase.t_start, phase.t_start - n * h, h, n)
    traj = Trajectory(np.concatenate([old.times, more.times[1:]]), np.concatenate([old.states, more.states[1:]]), old.rhs)
    return PhaseSystem(phase.N, phase.beta, phase.M, phase.M_requested, traj)


def locate_activation(
    background: Background,
    N: float,
    beta: float,
    window_start: float,
    M_cap: int | None = M_CAP,
    step: float = 1e-3,
    chunk: float = 0.25,
    p_angle: Callable[[float], float] | None = None,
) -> tuple[PhaseSystem, float]:
    """Integrate the phase backward until its angle lags the background's by pi/2.

    Returns the phase system (covering [t0, 1]) and t0.  The backward scan stops
    at the first crossing, so the (possibly very long) nominal window is only
    integrated as far as needed.
    """
    if p_angle is None:
        p_angle = lambda t: background.top_layer(t)[1]
    t_lo = max(window_start, 1.0 - chunk)
    phase = evolve_phase(background, N, beta, t_lo, M_cap, step)
    while True:
        try:
            t0 = find_t0(phase.angle, p_angle, (phase.t_start, 1.0), grid=phase.times[::4])
            return phase, t0
        except NoCrossing:
            if phase.t_start <= window_start + 1e-12:
                raise
            phase = extend_phase(phase, background, max(window_start, phase.t_start - chunk))


# ---------------------------------------------------------------------------
# shared time grid: linear flow and amplitude


@dataclass
class ActiveWindow:
    """Uniform grid on [t0, 1] carrying D(t) (flow from t0) and log of the amplitude.

    ``log_amp`` is normalized to vanish at t = 1, so exp(log_amp) is the
    amplitude factor with value 1 at the terminal time.
    """

    t0: float
    flow: LinearFlow
    log_amp: np.ndarray
    model: AmplitudeModel

    @property
    def times(self) -> np.ndarray:
        return self.flow.times

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def index(self, t: float) -> int:
        return self.flow.index(t)

    def D(self, t: float) -> np.ndarray:
        return self.flow.at(t)[0]

    def Dinv(self, t: float) -> np.ndarray:
        return self.flow.at(t)[1]

    def amplitude(self, t: float) -> float:
        return float(np.exp(self.log_amp[self.index(t)]))

    def amplitude_ratio(self, t1: float, t2: float) -> float:
        """The factor A_{t1}(t2) of the solution operator."""
        return float(np.exp(self.log_amp[self.index(t2)] - self.log_amp[self.index(t1)]))


def amplitude_model(background: Background, phase: PhaseSystem) -> AmplitudeModel:
    def A_p(t):
        return background.top_layer(t)[0]

    def alpha_p(t):
        return background.top_layer(t)[1]

    def A_err(t):
        A, a = background.top_layer(t)
        e = background.gradient(t) - A * np.array([math.cos(a), math.sin(a)])
        return float(np.hypot(*e))

    def alpha_err(t):
        A, a = background.top_layer(t)
        e = background.gradient(t) - A * np.array([math.cos(a), math.sin(a)])
        return float(math.atan2(e[1], e[0]))

    return AmplitudeModel(A_p, alpha_p, phase.angle, background.C0, A_err, alpha_err)


def active_window(background: Background, phase: PhaseSystem, t0: float, step: float = 1e-3) -> ActiveWindow:
    span = 1.0 - t0
    n = max(2, math.ceil(span / step - 1e-12))
    h = span / n
    flow = linear_flow(background.jacobian, t0, 1.0, step=h)
    model = amplitude_model(background, phase)
    traj = integrate(lambda t, y: np.array([model.rate(t)]), np.zeros(1), t0, 1.0, h, n)
    log_amp = traj.states[:, 0] - traj.states[-1, 0]
    return ActiveWindow(t0, flow, log_amp, model)


# ---------------------------------------------------------------------------
# label grids and modulated sums on them


@dataclass(frozen=True)
class LabelGrid:
    n: int
    L: float

    @property
    def dy(self) -> float:
        return 2 * self.L / self.n

    @property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return grid_mesh(self.n, self.L)

    @property
    def k(self) -> np.ndarray:
        return wavenumbers(self.n, self.L)

    def x_wavenumbers(self, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multipliers of d/dx1, d/dx2 (divided by i) on the half-spectrum, y = B x."""
        k1 = self.k[:, None]
        k2 = np.fft.rfftfreq(self.n, d=self.dy)[None, :] * 2 * np.pi
        return B[0, 0] * k1 + B[1, 0] * k2, B[0, 1] * k1 + B[1, 1] * k2

    def _hat(self, values: np.ndarray) -> np.ndarray:
        hat = np.fft.rfft2(values)
        hat[self.n // 2, :] = 0.0
        hat[:, -1] = 0.0
        return hat

    def x_jet(self, values: np.ndarray, kx: tuple[np.ndarray, np.ndarray], order: int) -> dict:
        hat = self._hat(values)
        jet = {(0, 0): values}
        i1, i2 = 1j * kx[0], 1j * kx[1]
        for total in range(1, order + 1):
            for q in range(total + 1):
                p = total - q
                jet[(p, q)] = np.fft.irfft2(hat * i1**p * i2**q, s=values.shape)
        return jet

    def x_gradient(self, values: np.ndarray, kx) -> tuple[np.ndarray, np.ndarray]:
        hat = self._hat(values)
        s = values.shape
        return np.fft.irfft2(hat * 1j * kx[0], s=s), np.fft.irfft2(hat * 1j * kx[1], s=s)

    def interpolate(self, values: np.ndarray, y1, y2) -> np.ndarray:
        """Exact trigonometric interpolation at scattered points (small point sets)."""
        hat = np.fft.fft2(values) / self.n**2
        hat[self.n // 2, :] = 0.0
        hat[:, self.n // 2] = 0.0
        k = self.k
        y1 = np.ravel(np.asarray(y1, float)) + self.L
        y2 = np.ravel(np.asarray(y2, float)) + self.L
        e1 = np.exp(1j * np.outer(y1, k))
        e2 = np.exp(1j * np.outer(y2, k))
        return np.real(np.einsum("pi,ij,pj->p", e1, hat, e2))

    def spline_coefficients(self, values: np.ndarray) -> np.ndarray:
        """Spline coefficients of the spectrally upsampled array."""
        m = self.n * UPSAMPLE
        hat = np.fft.fftshift(np.fft.fft2(values))
        pad = (m - self.n) // 2
        big = np.zeros((m, m), complex)
        big[pad : pad + self.n, pad : pad + self.n] = hat
        big[pad, :] = 0.0
        big[:, pad] = 0.0
        up = np.real(np.fft.ifft2(np.fft.ifftshift(big))) * UPSAMPLE**2
        return ndimage.spline_filter(up, order=SPLINE_ORDER, mode="grid-wrap")

    def sample(self, coeffs: np.ndarray, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        h = self.dy / UPSAMPLE
        idx = np.stack([(y1 + self.L) / h, (y2 + self.L) / h])
        out = ndimage.map_coordinates(coeffs, idx, order=SPLINE_ORDER, mode="grid-wrap", prefilter=False)
        inside = (np.abs(y1) < self.L) & (np.abs(y2) < self.L)
        return np.where(inside, out, 0.0)


def _key_order(key):
    l, ch = key
    return (CHANNELS.index(ch), l)


class LabelSum:
    """sum over (l, channel) of g(y) * sin or cos(l * Theta) on a label grid.

    l = 0 appears only in the cos channel (a non-oscillating part).
    """

    def __init__(self, terms: dict | None = None):
        self.terms: dict = {}
        for key, g in (terms or {}).items():
            self.add(key, g)

    def add(self, key, g) -> None:
        l, ch = key
        if ch not in CHANNELS or l < 0 or int(l) != l:
            raise ValueError(f"bad term key {key}")
        if l == 0 and ch == "sin":
            return
        if key in self.terms:
            self.terms[key] = self.terms[key] + g
        else:
            self.terms[key] = np.array(g, float, copy=True)

    def items(self):
        return sorted(self.terms.items(), key=lambda kv: _key_order(kv[0]))

    def copy(self) -> "LabelSum":
        return LabelSum({k: v for k, v in self.terms.items()})

    def __add__(self, other: "LabelSum") -> "LabelSum":
        out = self.copy()
        for key, g in other.terms.items():
            out.add(key, g)
        return out

    def __sub__(self, other: "LabelSum") -> "LabelSum":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "LabelSum":
        return LabelSum({k: c * v for k, v in self.terms.items()})

    def times_field(self, f: np.ndarray) -> "LabelSum":
        return LabelSum({k: f * v for k, v in self.terms.items()})

    @property
    def frequencies(self) -> list[int]:
        return sorted({l for l, _ in self.terms})

    @property
    def max_frequency(self) -> int:
        return max(self.frequencies, default=0)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.terms.values()), default=0.0)

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        out = np.zeros_like(theta)
        for (l, ch), g in self.terms.items():
            out = out + g * (np.sin(l * theta) if ch == "sin" else np.cos(l * theta))
        return out

    def zero_part(self) -> np.ndarray | None:
        return self.terms.get((0, "cos"))

    def positive_part(self) -> "LabelSum":
        return LabelSum({k: v for k, v in self.terms.items() if k[0] > 0})


def _fold(l: int, ch: str, coef: float) -> tuple[int, str, float]:
    if l >= 0:
        return l, ch, coef
    return -l, ch, (-coef if ch == "sin" else coef)


def trig_product(A: LabelSum, B: LabelSum) -> LabelSum:
    """Exact product-to-sum rewrite of the pointwise product of two sums."""
    out = LabelSum()
    for (l1, c1), g1 in A.items():
        for (l2, c2), g2 in B.items():
            gg = g1 * g2
            if c1 == "sin" and c2 == "sin":
                parts = ((l1 - l2, "cos", 0.5), (l1 + l2, "cos", -0.5))
            elif c1 == "cos" and c2 == "cos":
                parts = ((l1 - l2, "cos", 0.5), (l1 + l2, "cos", 0.5))
            elif c1 == "sin":
                parts = ((l1 + l2, "sin", 0.5), (l1 - l2, "sin", 0.5))
            else:
                parts = ((l1 + l2, "sin", 0.5), (l1 - l2, "sin", -0.5))
            for l, ch, coef in parts:
                l, ch, coef = _fold(l, ch, coef)
                if l == 0 and ch == "sin":
                    continue
                out.add((l, ch), coef * gg)
    return out


def dot(u: tuple[LabelSum, LabelSum], grad: tuple[LabelSum, LabelSum]) -> LabelSum:
    return trig_product(u[0], grad[0]) + trig_product(u[1], grad[1])


def frequency_project(expr: LabelSum, which: str):
    """P0 returns the non-oscillating envelope (array); P>0 the oscillating remainder."""
    if which == "P0":
        z = expr.zero_part()
        return None if z is None else z.copy()
    if which == "P>0":
        return expr.positive_part()
    raise ValueError("which must be 'P0' or 'P>0'")


def expand_products(pairs: Iterable[tuple[LabelSum, LabelSum]]) -> LabelSum:
    out = LabelSum()
    for a, b in pairs:
        out = out + trig_product(a, b)
    return out


# ---------------------------------------------------------------------------
# per-time geometry


class Frame:
    """Everything needed to act on label sums at one time t."""

    def __init__(
        self,
        t: float,
        grid: LabelGrid,
        window: ActiveWindow,
        phase: PhaseSystem,
        background: Background,
        support: float,
        table: ConstantTable | None = None,
    ):
        self.t = t
        self.grid = grid
        self.N = phase.N
        self.M = phase.M
        self.table = table or default_table()
        self.D = window.D(t)
        self.B = window.Dinv(t)
        self.kx = grid.x_wavenumbers(self.B)
        y1, y2 = grid.mesh
        self.x1 = self.D[0, 0] * y1 + self.D[0, 1] * y2
        self.x2 = self.D[1, 0] * y1 + self.D[1, 1] * y2
        X = phase.poly(t)
        self.X = X
        self.theta = self.N * X(self.x1, self.x2)
        lin = X.truncate(1)
        self.psi = self.theta - self.N * lin(self.x1, self.x2)
        self.dX = (X.derivative(1, 0)(self.x1, self.x2), X.derivative(0, 1)(self.x1, self.x2))
        g = X.gradient_at_origin()
        self.mag = float(np.hypot(g[0], g[1]))
        self.a, self.b = float(g[1] / self.mag), float(g[0] / self.mag)
        M = self.M
        uM = background.velocity_poly(t, M)
        u1 = [c.truncate(1) for c in uM]
        self.uM_minus_u1 = tuple(P(self.x1, self.x2) - Q(self.x1, self.x2) for P, Q in zip(uM, u1))
        self.u_lin = tuple(Q(self.x1, self.x2) for Q in u1)
        self.uM_poly = uM
        rhoM = BivariatePoly.from_taylor(background.density_taylor(t, M))
        self.grad_rhoM = (rhoM.derivative(1, 0)(self.x1, self.x2), rhoM.derivative(0, 1)(self.x1, self.x2))
        self.G = background.gradient(t)
        # truncation remainder of the phase equation, (I - P_M)(P_M u . grad X)
        adv = uM[0].multiply(X.derivative(1, 0)) + uM[1].multiply(X.derivative(0, 1))
        self.remainder_poly = adv - adv.truncate(M)
        self.remainder = self.remainder_poly(self.x1, self.x2)
        # resolution of the nonlinear phase remainder on the label support
        y = np.hypot(y1, y2) <= support
        gpsi = np.stack(
            [
                self.N * (self.dX[0] - g[0]),
                self.N * (self.dX[1] - g[1]),
            ]
        )
        gy = np.einsum("ki,k...->i...", self.D, gpsi)
        self.psi_frequency = float(np.max(np.hypot(gy[0], gy[1])[y])) if np.any(y) else 0.0

    def points_per_wavelength(self, l: int) -> float:
        f = l * self.psi_frequency
        return math.inf if f == 0 else 2 * math.pi / (f * self.grid.dy)

    def check_resolved(self, l: int) -> None:
        ppw = self.points_per_wavelength(l)
        if ppw < MIN_POINTS_PER_WAVELENGTH:
            raise EnvelopeBlowup(
                f"t={self.t:.6g}: nonlinear phase remainder at multiple {l} has {ppw:.2f} label points"
                f" per wavelength (need {MIN_POINTS_PER_WAVELENGTH}); the background is not slowly"
                " varying on the support of the new layer"
            )

    def evaluate(self, S: LabelSum) -> np.ndarray:
        return S.evaluate(self.theta)

    def envelope_gradient(self, S: LabelSum) -> tuple[LabelSum, LabelSum]:
        d1, d2 = LabelSum(), LabelSum()
        for key, g in S.items():
            g1, g2 = self.grid.x_gradient(g, self.kx)
            d1.add(key, g1)
            d2.add(key, g2)
        return d1, d2

    def phase_gradient(self, S: LabelSum) -> tuple[LabelSum, LabelSum]:
        d1, d2 = LabelSum(), LabelSum()
        for (l, ch), g in S.items():
            if l == 0:
                continue
            f = self.N * l * g
            if ch == "sin":
                d1.add((l, "cos"), f * self.dX[0])
                d2.add((l, "cos"), f * self.dX[1])
            else:
                d1.add((l, "sin"), -f * self.dX[0])
                d2.add((l, "sin"), -f * self.dX[1])
        return d1, d2

    def gradient(self, S: LabelSum) -> tuple[LabelSum, LabelSum]:
        e1, e2 = self.envelope_gradient(S)
        p1, p2 = self.phase_gradient(S)
        return e1 + p1, e2 + p2

    def velocity(self, S: LabelSum, K: int) -> tuple[LabelSum, LabelSum]:
        """u^K of an oscillating label sum, term by term."""
        cs, cc = self.table.coefficients(self.a, self.b, K)
        out = (LabelSum(), LabelSum())
        for (l, ch), g in S.items():
            if l == 0:
                raise ValueError("the local velocity expansion needs oscillating terms")
            if K > 0:
                self.check_resolved(l)
            psi = l * self.psi
            c, s = np.cos(psi), np.sin(psi)
            jc = self.grid.x_jet(g * c, self.kx, K)
            js = self.grid.x_jet(g * s, self.kx, K)
            P1, Q1, P2, Q2 = modulated_term_u(jc, js, c, s, self.N * l * self.mag, self.a, self.b, cs, cc, K, ch)
            out[0].add((l, "sin"), P1)
            out[0].add((l, "cos"), Q1)
            out[1].add((l, "sin"), P2)
            out[1].add((l, "cos"), Q2)
        return out

    def phase_remainder_term(self, S: LabelSum) -> LabelSum:
        """sum N l R (g1 cos - g2 sin): the part of d/dt S from the truncated phase equation."""
        out = LabelSum()
        for (l, ch), g in S.items():
            f = self.N * l * self.remainder * g
            if ch == "sin":
                out.add((l, "cos"), f)
            else:
                out.add((l, "sin"), -f)
        return out


# ---------------------------------------------------------------------------
# solution operator and Duhamel accumulation


def apply_S(term: LabelSum, t1: float, t2: float, window: ActiveWindow) -> LabelSum:
    """S_{t1,t2} on label sums: envelopes keep their labels, the amplitude factor applies.

    The phase of the result is X(., t2); evaluate it with a frame at t2.
    """
    return term.scaled(window.amplitude_ratio(t1, t2))


def envelope_to_labels(f: Callable, t: float, grid: LabelGrid, window: ActiveWindow) -> np.ndarray:
    """Label array of a physical envelope given at time t: F(y) = f(D(t) y)."""
    D = window.D(t)
    y1, y2 = grid.mesh
    return np.asarray(f(D[0, 0] * y1 + D[0, 1] * y2, D[1, 0] * y1 + D[1, 1] * y2), float)


class DuhamelAccumulator:
    """Streaming integral of S_{s,t}[H(s)] over s in [t0, t] on the window grid.

    ``simpson``: composite Simpson at even nodes, the three-point quadratic rule
    over the last interval at odd nodes.  ``cubic``: the four-point Adams-Moulton
    rule on every interval.  ``quadratic``: the three-point rule on every
    interval.  All start with the trapezoid rule on the first interval.
    """

    def __init__(self, window: ActiveWindow, rule: str = "simpson"):
        self.window = window
        self.h = window.step
        self.rule = rule
        self.f: list[LabelSum] = []
        self.I: list[LabelSum] = []
        self.k = -1

    def push(self, H: LabelSum) -> LabelSum:
        self.k += 1
        k = self.k
        w = self.window
        f = H.scaled(math.exp(-w.log_amp[k]))
        self.f = (self.f + [f])[-4:]
        h = self.h
        F = self.f
        if k == 0:
            I = LabelSum()
        elif k == 1:
            I = self.I[-1] + (F[-2] + F[-1]).scaled(h / 2)
        elif self.rule == "simpson" and k % 2 == 0:
            I = self.I[-2] + (F[-3] + F[-2].scaled(4.0) + F[-1]).scaled(h / 3)
        elif k == 2 or self.rule != "cubic":
            I = self.I[-1] + (F[-3].scaled(-1.0) + F[-2].scaled(8.0) + F[-1].scaled(5.0)).scaled(h / 12)
        else:
            I = self.I[-1] + (
                F[-4] + F[-3].scaled(-5.0) + F[-2].scaled(19.0) + F[-1].scaled(9.0)
            ).scaled(h / 24)
        self.I = (self.I + [I])[-2:]
        return I.scaled(math.exp(w.log_amp[k]))


def duhamel(sources: Sequence[LabelSum], window: ActiveWindow) -> list[LabelSum]:
    """Integral of S_{s,t}[F(s)] ds from t0 to every grid time, given F on the grid."""
    acc = DuhamelAccumulator(window)
    return [acc.push(F) for F in sources]


# ---------------------------------------------------------------------------
# correction iteration


def ramp(t: float, t0: float, N_p: float) -> tuple[float, float]:
    """(w, dw/dt) for the piecewise-linear switch-on of the new layer."""
    s = N_p * (t - t0)
    if s <= 0.0:
        return 0.0, 0.0
    if s >= 1.0:
        return 1.0, 0.0
    return s, N_p


@dataclass
class NormRow:
    t: float
    j: int
    l: int
    m: int
    norm_g1: float
    norm_g2: float
    norm_Ftilde: float
    norm_F: float = float("nan")


@dataclass
class Snapshot:
    t: float
    rhos: list[LabelSum]
    ftildes: list[LabelSum] | None = None


@dataclass
class CorrectionLedger:
    """Layer corrections rho_{p+1,j}, structured sources and logged norms."""

    N: float
    N_p: float
    beta: float
    M: int
    j_max: int
    grid: LabelGrid
    support: float
    window: ActiveWindow
    phase: PhaseSystem
    background: Background
    t_end: float
    snapshots: dict = field(default_factory=dict)
    norms: list[NormRow] = field(default_factory=list)
    support_leak: float = 0.0  # relative, density corrections
    source_leak: float = 0.0  # relative, structured sources
    max_frequencies: dict = field(default_factory=dict)
    guard: str | None = None
    completed_until: float = float("nan")

    def frame(self, t: float) -> Frame:
        return Frame(t, self.grid, self.window, self.phase, self.background, self.support)

    def seed(self, t: float) -> LabelSum:
        w, _ = ramp(t, self.window.t0, self.N_p)
        return self._seed_envelope(t, w)

    def seed_source(self, t: float) -> LabelSum:
        """F_{p+1,0}: the part of the seed's time derivative coming from the switch-on."""
        _, dw = ramp(t, self.window.t0, self.N_p)
        return self._seed_envelope(t, dw)

    def _seed_envelope(self, t: float, factor: float) -> LabelSum:
        y1, y2 = self.grid.mesh
        f = bump(y1 / self.support, y2 / self.support, 1.0, ENVELOPE_SHARPNESS)
        g = factor * self.window.amplitude(t) * self.N ** (self.beta - 1.0) * f
        return LabelSum({(1, "sin"): g})

    # per-j summaries -------------------------------------------------
    def envelope_norms(self, m: int = 0) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.norms:
            if r.m == m:
                out[r.j] = max(out.get(r.j, 0.0), r.norm_g1, r.norm_g2)
        return out

    def source_norms(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for r in self.norms:
            if r.m == 0:
                out[r.j] = max(out.get(r.j, 0.0), r.norm_Ftilde)
        return out

    def decay_factor(self, values: dict[int, float]) -> float:
        js = np.array(sorted(values))
        v = np.array([values[j] for j in js])
        ok = v > 0
        if ok.sum() < 2:
            return float("nan")
        slope = np.polyfit(js[ok], np.log(v[ok]), 1)[0]
        return float(np.exp(slope))

    def rows(self):
        for r in self.norms:
            yield (r.t, r.j, r.l, r.m, r.norm_g1, r.norm_g2, r.norm_Ftilde, r.norm_F)


def structured_source(frame: Frame, rhos: Sequence[LabelSum], j: int, parts: dict | None = None) -> LabelSum:
    """F~_{p+1,j}: the oscillating self-interaction plus the background mismatch terms."""
    M = frame.M
    rho_j = rhos[j - 1]
    below = LabelSum()
    for r in rhos[: j - 1]:
        below = below + r
    upto = below + rho_j
    uj = frame.velocity(rho_j, M)
    grad_j = frame.gradient(rho_j)
    self_terms = dot(uj, frame.gradient(upto))
    if below.terms:
        self_terms = self_terms + dot(frame.velocity(below, M), grad_j)
    u0j = frame.velocity(rho_j, 0)
    G = frame.G
    mismatch = (
        uj[0].times_field(frame.grad_rhoM[0])
        + uj[1].times_field(frame.grad_rhoM[1])
        - u0j[0].scaled(G[0])
        - u0j[1].scaled(G[1])
    )
    e1, e2 = frame.envelope_gradient(rho_j)
    transport = e1.times_field(frame.uM_minus_u1[0]) + e2.times_field(frame.uM_minus_u1[1])
    if parts is not None:
        parts["self"] = self_terms
        parts["uM_j"] = uj
        parts["uM_below"] = frame.velocity(below, M) if below.terms else None
    return frequency_project(self_terms, "P>0") + mismatch + transport


def _c_norms(frame: Frame, g: np.ndarray, m_max: int) -> list[float]:
    jet = frame.grid.x_jet(g, frame.kx, m_max)
    out = []
    for m in range(m_max + 1):
        out.append(max(float(np.max(np.abs(v))) for (p, q), v in jet.items() if p + q <= m))
    return out


def iterate_correction(
    background: Background,
    phase: PhaseSystem,
    window: ActiveWindow,
    N_p: float,
    j_max: int | None = None,
    t_end: float = 1.0,
    label_points: int = LABEL_POINTS,
    label_margin: float = 1.25,
    record: Sequence[float] = (),
    norm_stride: int = 10,
    m_max: int = 2,
    raise_on_guard: bool = False,
    quadrature: str = "simpson",
) -> CorrectionLedger:
    """Run the correction iteration on the window grid up to t_end.

    All j are advanced together in one sweep over time (rho_{j+1}(t) only needs
    F~_j on [t0, t]).  Label sums at times in ``record`` are kept for grid
    evaluation.  When an envelope guard fires the ledger records the reason and
    the time reached; with ``raise_on_guard`` the error propagates instead.
    """
    N = phase.N
    beta = phase.beta
    M = phase.M
    j_max = M if j_max is None else min(j_max, M)
    support = N ** (-2 * beta)
    grid = LabelGrid(label_points, label_margin * support)
    ledger = CorrectionLedger(N, N_p, beta, M, j_max, grid, support, window, phase, background, t_end)
    times = window.times
    k_end = window.index(t_end)
    rec = {window.index(t) for t in record}
    accs = [DuhamelAccumulator(window, quadrature) for _ in range(j_max)]
    y1, y2 = grid.mesh
    outside = np.hypot(y1, y2) > support * (1 + 1e-9)
    seed_max = None
    try:
        for k in range(k_end + 1):
            t = float(times[k])
            fr = ledger.frame(t)
            rhos = [ledger.seed(t)]
            ftildes = []
            for j in range(1, j_max + 1):
                H = structured_source(fr, rhos, j)
                if H.max_frequency > 2 ** (j + 1):
                    raise AssertionError(f"frequency budget exceeded at j={j}")
                ledger.max_frequencies[j] = max(ledger.max_frequencies.get(j, 0), H.max_frequency)
                ftildes.append(H)
                if j < j_max:
                    rhos.append(accs[j].push(H.scaled(-1.0)))
            if seed_max is None or seed_max == 0.0:
                seed_max = max(r.max_abs() for r in rhos[:1]) or None
            for r in rhos + ftildes:
                for g in r.terms.values():
                    if not np.all(np.isfinite(g)):
                        raise EnvelopeBlowup(f"t={t:.6g}: non-finite envelope")
            ledger.support_leak = max(ledger.support_leak, _leak(rhos, outside))
            ledger.source_leak = max(ledger.source_leak, _leak(ftildes, outside))
            if seed_max:
                big = max(r.max_abs() for r in rhos)
                if big > BLOWUP_FACTOR * seed_max:
                    raise EnvelopeBlowup(f"t={t:.6g}: envelope norm {big:.3e} exceeds {BLOWUP_FACTOR:g} x seed")
            if k in rec:
                ledger.snapshots[k] = Snapshot(t, rhos, ftildes)
            if k % norm_stride == 0 or k == k_end:
                _log_norms(ledger, fr, t, rhos, ftildes, m_max)
            ledger.completed_until = t
    except EnvelopeBlowup as exc:
        ledger.guard = str(exc)
        if raise_on_guard:
            raise
    return ledger


def _leak(sums: Sequence[LabelSum], outside: np.ndarray) -> float:
    """Largest envelope value outside the support relative to the envelope's maximum."""
    worst = 0.0
    for r in sums:
        top = r.max_abs()
        if top > 0 and np.any(outside):
            worst = max(worst, max(float(np.max(np.abs(g[outside]))) for g in r.terms.values()) / top)
    return worst


def _log_norms(ledger: CorrectionLedger, fr: Frame, t: float, rhos, ftildes, m_max: int) -> None:
    for j, (rho, H) in enumerate(zip(rhos, ftildes), start=1):
        Fn = float(np.max(np.abs(fr.evaluate(H))))
        for l in sorted({l for l, _ in rho.terms}):
            n1 = _c_norms(fr, rho.terms[(l, "sin")], m_max) if (l, "sin") in rho.terms else [0.0] * (m_max + 1)
            n2 = _c_norms(fr, rho.terms[(l, "cos")], m_max) if (l, "cos") in rho.terms else [0.0] * (m_max + 1)
            for m in range(m_max + 1):
                ledger.norms.append(NormRow(t, j, l, m, n1[m], n2[m], Fn))


# ---------------------------------------------------------------------------
# evaluation on the physical grid


class PhysicalSampler:
    """Evaluates label sums of a ledger on the periodic physical grid of its background."""

    def __init__(self, ledger: CorrectionLedger):
        self.ledger = ledger
        bg = ledger.background
        self.n, self.L = bg.n, bg.L
        self.x1, self.x2 = grid_mesh(self.n, self.L)
        self._geom: dict = {}

    def geometry(self, t: float):
        key = round(t, 13)
        if key not in self._geom:
            led = self.ledger
            B = led.window.Dinv(t)
            y1 = B[0, 0] * self.x1 + B[0, 1] * self.x2
            y2 = B[1, 0] * self.x1 + B[1, 1] * self.x2
            theta = led.N * led.phase.poly(t)(self.x1, self.x2)
            self._geom = {key: (y1, y2, theta)}
        return self._geom[key]

    def envelope(self, g: np.ndarray, t: float) -> np.ndarray:
        y1, y2, _ = self.geometry(t)
        grid = self.ledger.grid
        return grid.sample(grid.spline_coefficients(g), y1, y2)

    def __call__(self, S: LabelSum, t: float) -> np.ndarray:
        _, _, theta = self.geometry(t)
        out = np.zeros_like(self.x1)
        for (l, ch), g in S.items():
            trig = np.sin(l * theta) if ch == "sin" else np.cos(l * theta)
            out = out + self.envelope(g, t) * trig
        return out

    def modulated(self, S: LabelSum, t: float) -> ModulatedSum:
        """The label sum at time t as a ModulatedSum with grid-sampled envelopes."""
        from .velocity import _grid_callable

        terms = []
        for l in sorted({l for l, _ in S.terms if l > 0}):
            g1 = S.terms.get((l, "sin"))
            g2 = S.terms.get((l, "cos"))
            terms.append(
                (
                    l,
                    None if g1 is None else _grid_callable(self.envelope(g1, t), self.L),
                    None if g2 is None else _grid_callable(self.envelope(g2, t), self.L),
                )
            )
        led = self.ledger
        return ModulatedSum(led.N, led.phase.poly(t), tuple(terms), min(1.0, self.L), True)


def _dot_grid(u: VelocityField | tuple, rho: np.ndarray, L: float) -> np.ndarray:
    u1, u2 = (u.u1.values, u.u2.values) if isinstance(u, VelocityField) else u
    return u1 * spectral_derivative(rho, L, 1, 0) + u2 * spectral_derivative(rho, L, 0, 1)


def unstructured_source(ledger: CorrectionLedger, sampler: PhysicalSampler, t: float, j: int) -> GridField:
    """F_{p+1,j} on the physical grid: the non-oscillating part and every
    exact-minus-approximate remainder, including the phase truncation term."""
    snap = ledger.snapshots[ledger.window.index(t)]
    fr = ledger.frame(t)
    bg = ledger.background
    C0, L = bg.C0, bg.L
    parts: dict = {}
    structured_source(fr, snap.rhos, j, parts)
    rho_j = snap.rhos[j - 1]
    below = LabelSum()
    for r in snap.rhos[: j - 1]:
        below = below + r
    s = lambda S: sampler(S, t)
    rj, rb = s(rho_j), s(below)
    ru = rj + rb
    uj = velocity_spectral(GridField(rj, L), C0)
    ub = velocity_spectral(GridField(rb, L), C0)
    uMj = tuple(s(c) for c in parts["uM_j"])
    out = np.zeros_like(rj)
    P0 = frequency_project(parts["self"], "P0")
    if P0 is not None:
        out += sampler.envelope(P0, t)
    out += _dot_grid((uj.u1.values - uMj[0], uj.u2.values - uMj[1]), ru, L)
    if parts["uM_below"] is not None:
        uMb = tuple(s(c) for c in parts["uM_below"])
        out += _dot_grid((ub.u1.values - uMb[0], ub.u2.values - uMb[1]), rj, L)
    # background mismatch: exact velocity and density against their truncations
    rho_bg = bg.density(t).values
    rhoM = BivariatePoly.from_taylor(bg.density_taylor(t, ledger.M))
    x1, x2 = sampler.x1, sampler.x2
    out += _dot_grid(uj, rho_bg, L)
    out -= uMj[0] * rhoM.derivative(1, 0)(x1, x2) + uMj[1] * rhoM.derivative(0, 1)(x1, x2)
    u_bg = bg.velocity(t)
    uM = bg.velocity_poly(t, ledger.M)
    out += _dot_grid((u_bg.u1.values - uM[0](x1, x2), u_bg.u2.values - uM[1](x1, x2)), rj, L)
    out += s(fr.phase_remainder_term(rho_j))
    return GridField(out, L)


def fd5(values: Sequence[np.ndarray] | np.ndarray, h: float):
    """Fourth-order centered first derivative from samples at t-2h .. t+2h."""
    v = values
    return (v[0] - 8 * v[1] + 8 * v[3] - v[4]) / (12 * h)


def fd7(values: Sequence[np.ndarray] | np.ndarray, h: float):
    """Sixth-order centered first derivative from samples at t-3h .. t+3h."""
    v = values
    return (-v[0] + 9 * v[1] - 45 * v[2] + 45 * v[4] - 9 * v[5] + v[6]) / (60 * h)


@dataclass
class ResidualReport:
    t: float
    defect: GridField
    relative: float
    relative_to_total: float
    energy_defect: float
    energy_relative: float
    scale: float

    def as_row(self) -> tuple:
        return (self.t, float(np.max(np.abs(self.defect.values))), self.relative, self.relative_to_total,
                self.energy_defect, self.energy_relative)


def residual_source(
    densities: Sequence[GridField], h: float, source: GridField, C0: float, scale: float | None = None
) -> tuple[GridField, float, float]:
    """Defect of d_t rho + u(rho) . grad rho = F at the middle of five equally spaced samples.

    Returns (defect, relative defect, relative energy-identity defect).  The
    relative defect divides by ``scale`` (default: the sup of the source).
    """
    if len(densities) != 5:
        raise ValueError("need densities at t-2h, t-h, t, t+h, t+2h")
    mid = densities[2]
    L = mid.L
    from .fields import points_per_wavelength

    if points_per_wavelength(mid.values, L) < MIN_POINTS_PER_WAVELENGTH:
        raise ResolutionError("density is under-resolved on the residual grid")
    dt = fd5([d.values for d in densities], h)
    u = velocity_spectral(mid, C0)
    defect = dt + _dot_grid(u, mid.values, L) - source.values
    scale = float(np.max(np.abs(source.values))) if scale is None else scale
    rel = float(np.max(np.abs(defect)) / scale) if scale > 0 else float(np.max(np.abs(defect)))
    cell = mid.dx**2
    E = [float(np.sum(d.values**2) * cell) for d in densities]
    dE = fd5(E, h)
    rhs = 2 * float(np.sum(mid.values * source.values) * cell)
    denom = 2 * float(np.sum(np.abs(mid.values * source.values)) * cell)
    erel = abs(dE - rhs) / denom if denom > 0 else abs(dE - rhs)
    return GridField(defect, L), rel, erel


def layer_residual(ledger: CorrectionLedger, t: float, j0: int | None = None) -> ResidualReport:
    """Check the layer equation with corrections up to j0 at a recorded time t.

    Needs snapshots at the four neighbouring grid times as well.
    """
    j0 = ledger.j_max if j0 is None else j0
    w = ledger.window
    k = w.index(t)
    h = w.step
    sampler = PhysicalSampler(ledger)
    bg = ledger.background
    L = bg.L
    dens = []
    new_parts = []
    for kk in range(k - 2, k + 3):
        snap = ledger.snapshots.get(kk)
        if snap is None:
            raise KeyError(f"no snapshot at grid index {kk}; record t-2h .. t+2h")
        tt = float(w.times[kk])
        new = np.zeros((bg.n, bg.n))
        for r in snap.rhos[:j0]:
            new = new + sampler(r, tt)
        new_parts.append(new)
        dens.append(GridField(bg.density(tt).values + new, L))
    snap = ledger.snapshots[k]
    src_new = sampler(ledger.seed_source(t), t)
    for j in range(1, j0 + 1):
        src_new = src_new + unstructured_source(ledger, sampler, t, j).values
    src_new = src_new + sampler(snap.ftildes[j0 - 1], t)
    total = GridField(bg.source(t).values + src_new, L)
    scale_new = float(np.max(np.abs(fd5(new_parts, h))))
    defect, rel_total, erel = residual_source(dens, h, total, bg.C0)
    dmax = float(np.max(np.abs(defect.values)))
    cell = dens[2].dx ** 2
    E = [float(np.sum(d.values**2) * cell) for d in dens]
    e_def = abs(fd5(E, h) - 2 * float(np.sum(dens[2].values * total.values) * cell))
    return ResidualReport(t, defect, dmax / scale_new if scale_new > 0 else dmax, rel_total, e_def, erel, scale_new)


def stencil(t: float, window: ActiveWindow, half: int = 2) -> list[float]:
    k = window.index(t)
    return [float(window.times[i]) for i in range(k - half, k + half + 1)]


# ---------------------------------------------------------------------------
# identity checks for the solution operator and the Duhamel integral


def probe_points(grid: LabelGrid, support: float, count: int, rng: np.random.Generator) -> np.ndarray:
    r = support * np.sqrt(rng.uniform(0.0, 0.8, count))
    a = rng.uniform(0.0, 2 * math.pi, count)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def _probe_frame(ledger: CorrectionLedger, t: float, x: np.ndarray):
    w = ledger.window
    B = w.Dinv(t)
    y = x @ B.T
    X = ledger.phase.poly(t)
    return y, X


def _probe_value(ledger, S: LabelSum, t: float, x: np.ndarray) -> np.ndarray:
    y, X = _probe_frame(ledger, t, x)
    theta = ledger.N * X(x[:, 0], x[:, 1])
    out = np.zeros(len(x))
    for (l, ch), g in S.items():
        trig = np.sin(l * theta) if ch == "sin" else np.cos(l * theta)
        out += ledger.grid.interpolate(g, y[:, 0], y[:, 1]) * trig
    return out


def _probe_rhs(ledger, S: LabelSum, t: float, x: np.ndarray, source: LabelSum | None) -> tuple[np.ndarray, np.ndarray]:
    """Assembled time derivative of S at fixed x: transport, amplitude and phase terms."""
    w = ledger.window
    bg = ledger.background
    y, X = _probe_frame(ledger, t, x)
    B = w.Dinv(t)
    theta = ledger.N * X(x[:, 0], x[:, 1])
    dX = np.stack([X.derivative(1, 0)(x[:, 0], x[:, 1]), X.derivative(0, 1)(x[:, 0], x[:, 1])], 1)
    M = ledger.M
    uM = bg.velocity_poly(t, M)
    uMx = np.stack([uM[0](x[:, 0], x[:, 1]), uM[1](x[:, 0], x[:, 1])], 1)
    Du = bg.jacobian(t)
    u1x = x @ Du.T
    adv = uM[0].multiply(X.derivative(1, 0)) + uM[1].multiply(X.derivative(0, 1))
    R = (adv - adv.truncate(M))(x[:, 0], x[:, 1])
    rate = w.model.rate(t)
    grid = ledger.grid
    k = grid.k
    out = np.zeros(len(x))
    rem = np.zeros(len(x))
    for (l, ch), g in S.items():
        gv = grid.interpolate(g, y[:, 0], y[:, 1])
        hat = np.fft.fft2(g)
        gy1 = grid.interpolate(np.real(np.fft.ifft2(hat * 1j * k[:, None])), y[:, 0], y[:, 1])
        gy2 = grid.interpolate(np.real(np.fft.ifft2(hat * 1j * k[None, :])), y[:, 0], y[:, 1])
        gx = np.stack([B[0, 0] * gy1 + B[1, 0] * gy2, B[0, 1] * gy1 + B[1, 1] * gy2], 1)
        trig = np.sin(l * theta) if ch == "sin" else np.cos(l * theta)
        dtrig = np.cos(l * theta) if ch == "sin" else -np.sin(l * theta)
        out += -np.sum(u1x * gx, 1) * trig  # envelope carried by the linear flow
        out += rate * gv * trig  # amplitude feedback, -u^0(S) . grad rho(0)
        out += -ledger.N * l * gv * dtrig * np.sum(uMx * dX, 1)  # phase carried by P_M u
        rem += ledger.N * l * gv * dtrig * R
    if source is not None:
        out += _probe_value(ledger, source, t, x)
    return out, rem


@dataclass
class IdentityCheck:
    residual: float
    scale: float
    remainder: float

    @property
    def relative(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual


def solution_operator_identity(
    ledger: CorrectionLedger, S0: LabelSum, t1: float, t: float, points: np.ndarray
) -> IdentityCheck:
    """Finite-difference d/dt of S_{t1,t}[S0] at fixed points against the assembled right side."""
    w = ledger.window
    ts = stencil(t, w, 3)
    vals = [_probe_value(ledger, apply_S(S0, t1, s, w), s, points) for s in ts]
    lhs = fd7(vals, w.step)
    rhs, rem = _probe_rhs(ledger, apply_S(S0, t1, t, w), t, points, None)
    err = np.max(np.abs(lhs - rhs - rem))
    return IdentityCheck(float(err), float(np.max(np.abs(lhs))), float(np.max(np.abs(rem))))


def duhamel_identity(ledger: CorrectionLedger, j: int, t: float, points: np.ndarray) -> IdentityCheck:
    """Evolution identity of rho_{p+1,j+1} = Duhamel(-F~_j) at fixed points.

    Needs snapshots at t-3h .. t+3h.
    """
    w = ledger.window
    k = w.index(t)
    vals = [_probe_value(ledger, ledger.snapshots[i].rhos[j], float(w.times[i]), points) for i in range(k - 3, k + 4)]
    lhs = fd7(vals, w.step)
    snap = ledger.snapshots[k]
    rhs, rem = _probe_rhs(ledger, snap.rhos[j], t, points, snap.ftildes[j - 1].scaled(-1.0))
    err = np.max(np.abs(lhs - rhs - rem))
    return IdentityCheck(float(err), float(np.max(np.abs(lhs))), float(np.max(np.abs(rem))))


# ---------------------------------------------------------------------------
# one-call construction of a layer


@dataclass
class LayerBuild:
    background: Background
    phase: PhaseSystem
    window: ActiveWindow
    ledger: CorrectionLedger
    N_p: float
    beta_p: float
    nominal_window: tuple[float, float]


def build_layer(
    background: Background,
    N_p: float,
    beta_p: float,
    N: float,
    beta: float,
    j_max: int | None = None,
    t_end: float | None = None,
    M_cap: int | None = M_CAP,
    step: float = 1e-3,
    label_points: int = LABEL_POINTS,
    record: Sequence[float] = (),
    record_offsets: Sequence[float] = (),
    norm_stride: int = 10,
    raise_on_guard: bool = False,
    quadrature: str = "simpson",
) -> LayerBuild:
    """Phase, activation time, window and correction iteration for one new layer.

    ``record_offsets`` are times after t0 (snapped to the grid) at which the
    seven-point stencils needed by the residual checks are stored.
    """
    Ct = c_tilde(background.C0)
    start = 1.0 - Ct * N_p ** (-3 * beta_p / 4)
    phase, t0 = locate_activation(background, N, beta, start, M_cap, step)
    win = active_window(background, phase, t0, step)
    times = win.times
    rec = list(record)
    for off in record_offsets:
        k = int(np.argmin(np.abs(times - (t0 + off))))
        rec += [float(times[i]) for i in range(max(k - 3, 0), min(k + 4, len(times)))]
    if t_end is None:
        t_end = max(rec) if rec else 1.0
    t_end = float(times[int(np.argmin(np.abs(times - t_end)))])
    ledger = iterate_correction(
        background, phase, win, N_p, j_max, t_end, label_points, record=rec, norm_stride=norm_stride,
        raise_on_guard=raise_on_guard, quadrature=quadrature,
    )
    return LayerBuild(background, phase, win, ledger, N_p, beta_p, (start, 1.0))
