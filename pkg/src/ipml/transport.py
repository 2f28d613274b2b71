"""Taylor truncation, truncated transport of polynomial data, linear flows and angles.

All polynomial coefficients handled by the ODE solvers live in the
factorial-normalized basis: ``G[i, j]`` is the origin derivative
d1^i d2^j g(0), so ``g = sum G[i, j] x1^i x2^j / (i! j!)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.special import comb

from .fields import BivariatePoly, GridField, spectral_derivative

PolyPair = tuple[BivariatePoly, BivariatePoly]
VelocitySource = Union[PolyPair, Callable[[float], PolyPair]]
JacobianSource = Union[np.ndarray, Callable[[float], np.ndarray]]

MAX_STEP = 1e-3
STEP_SAFETY = 0.05
MIN_STEP = 1e-12
INVERSE_TOL = 1e-10
DEGENERATE_MODULUS = 1e-12


class DerivativeUnavailable(TypeError):
    pass


class StepUnderflow(RuntimeError):
    pass


class FlowInverseError(RuntimeError):
    pass


class DegenerateLinearPart(ValueError):
    pass


# ---------------------------------------------------------------------------
# truncation


def taylor_at_origin(fld: GridField, k: int) -> np.ndarray:
    """Origin derivatives of a grid field up to total order k (spectral)."""
    c = fld.center
    out = np.zeros((k + 1, k + 1))
    for total in range(k + 1):
        for q in range(total + 1):
            p = total - q
            vals = fld.values if total == 0 else spectral_derivative(fld.values, fld.L, p, q)
            out[p, q] = vals[c, c]
    return out


def truncate(f, k: int) -> BivariatePoly:
    """Degree-k Taylor polynomial at the origin.

    Accepts a BivariatePoly (exact) or a scalar GridField (spectral derivatives).
    """
    if k < 0:
        raise ValueError("truncation order must be non-negative")
    if isinstance(f, BivariatePoly):
        return f.truncate(k)
    if isinstance(f, GridField):
        if f.is_vector:
            raise DerivativeUnavailable("truncate a vector field componentwise")
        return BivariatePoly.from_taylor(taylor_at_origin(f, k))
    raise DerivativeUnavailable(f"no origin derivatives for {type(f).__name__}")


def truncate_velocity(u, k: int) -> PolyPair:
    """Componentwise truncation of a velocity given as a pair or as a VelocityField."""
    if hasattr(u, "u1") and hasattr(u, "u2"):
        return truncate(u.u1, k), truncate(u.u2, k)
    u1, u2 = u
    return truncate(u1, k), truncate(u2, k)


def jacobian_at_origin(u: PolyPair) -> np.ndarray:
    """Du(0) with rows indexing the component and columns the derivative."""
    g1, g2 = (c.gradient_at_origin() for c in u)
    return np.array([g1, g2], float)


def _pad(G: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size, size))
    m = min(size, G.shape[0])
    out[:m, :m] = G[:m, :m]
    i, j = np.indices(out.shape)
    out[i + j >= size] = 0.0
    return out


# ---------------------------------------------------------------------------
# truncated transport


def transport_rhs(G: np.ndarray, U1: np.ndarray, U2: np.ndarray) -> np.ndarray:
    """Time derivative of the truncated coefficients under velocity jets U1, U2.

    G has shape (l+1, l+1); U1, U2 have shape (k+1, k+1); entries above the
    respective total degrees are zero.
    """
    n = G.shape[0]
    l = n - 1
    # G shifted by one derivative in x1 / x2, zero beyond degree l
    Gx = np.zeros((n + 1, n + 1))
    Gy = np.zeros((n + 1, n + 1))
    Gx[: n - 1, :n] = G[1:, :]
    Gy[:n, : n - 1] = G[:, 1:]
    i, j = np.indices((n, n))
    out = np.zeros_like(G)
    k = U1.shape[0] - 1
    for ti in range(min(k, l) + 1):
        for tj in range(min(k, l) + 1 - ti):
            a, b = U1[ti, tj], U2[ti, tj]
            if a == 0.0 and b == 0.0:
                continue
            ii, jj = i - ti, j - tj
            ok = (ii >= 0) & (jj >= 0)
            w = comb(i, ti) * comb(j, tj)
            src = a * Gx[np.where(ok, ii, 0), np.where(ok, jj, 0)] + b * Gy[np.where(ok, ii, 0), np.where(ok, jj, 0)]
            out -= np.where(ok, w * src, 0.0)
    out[i + j > l] = 0.0
    return out


def _velocity_jets(u: VelocitySource, k: int) -> Callable[[float], tuple[np.ndarray, np.ndarray]]:
    def jets(pair: PolyPair):
        return tuple(_pad(c.truncate(min(k, c.degree)).taylor(), k + 1) for c in pair)

    if callable(u):
        return lambda t: jets(u(t))
    fixed = jets(u)
    return lambda t: fixed


def _step_size(norm: float, span: float, step: float | None) -> tuple[float, int]:
    if span == 0.0:
        return 0.0, 0
    h = step if step is not None else min(MAX_STEP, STEP_SAFETY / norm if norm > 0 else MAX_STEP)
    if h < MIN_STEP:
        raise StepUnderflow(f"step {h:.3e} below {MIN_STEP:.0e}")
    n = max(1, math.ceil(span / h - 1e-12))
    return span / n, n


def _rk4(f, y, t, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class Trajectory:
    """States y(t) on a uniform (possibly decreasing) time grid from an RK4 run."""

    times: np.ndarray
    states: np.ndarray
    rhs: Callable = field(repr=False, compare=False)

    def at(self, t: float) -> np.ndarray:
        """State at t; off-grid times are reached with one partial RK4 step."""
        ts = self.times
        lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise ValueError(f"t={t} outside [{lo}, {hi}]")
        if len(ts) == 1:
            return self.states[0]
        h = ts[1] - ts[0]
        idx = int(np.clip(math.floor((t - ts[0]) / h + 1e-9), 0, len(ts) - 1))
        dt = t - ts[idx]
        if abs(dt) < 1e-14:
            return self.states[idx]
        return _rk4(self.rhs, self.states[idx], ts[idx], dt)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate(rhs, y0: np.ndarray, t0: float, t1: float, h: float, n: int) -> Trajectory:
    """Fixed-step RK4 from t0 to t1 (either direction), n steps of signed size."""
    y = np.array(y0, float)
    hs = math.copysign(h, t1 - t0) if n else 0.0
    times = t0 + hs * np.arange(n + 1)
    if n:
        times[-1] = t1
    states = np.empty((n + 1,) + y.shape)
    states[0] = y
    for s in range(n):
        y = _rk4(rhs, y, times[s], hs)
        states[s + 1] = y
    return Trajectory(times, states, rhs)


@dataclass(frozen=True)
class CoefficientTrajectory:
    """g_{i,j}(t) for i + j <= l (factorial-normalized) on the integrator grid."""

    l: int
    k: int
    trajectory: Trajectory

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def coefficients(self) -> np.ndarray:
        return self.trajectory.states

    def at(self, t: float) -> np.ndarray:
        return self.trajectory.at(t)

    @property
    def final(self) -> np.ndarray:
        return self.trajectory.final

    def poly(self, t: float) -> BivariatePoly:
        return BivariatePoly.from_taylor(self.at(t))

    def rows(self):
        """(t, i, j, g_ij) tuples for CSV output."""
        for t, G in zip(self.times, self.coefficients):
            for i in range(self.l + 1):
                for j in range(self.l + 1 - i):
                    yield float(t), i, j, float(G[i, j])


def truncated_transport(
    g0: BivariatePoly,
    u: VelocitySource,
    t0: float,
    t1: float,
    l: int,
    k: int,
    step: float | None = None,
) -> CoefficientTrajectory:
    """Integrate the (k, l) truncated transport system from t0 to t1.

    ``u`` is a pair of polynomials (frozen in time) or a callable t -> pair.
    Backward runs (t1 < t0) negate the time direction of the same vector field.
    """
    jets = _velocity_jets(u, k)
    G0 = _pad(g0.taylor(), l + 1)

    def rhs(t, G):
        U1, U2 = jets(t)
        return transport_rhs(G, U1, U2)

    # step control from the largest velocity gradient seen on a coarse sample
    probes = np.linspace(min(t0, t1), max(t0, t1), 5)
    norm = 0.0
    for t in probes:
        U1, U2 = jets(t)
        norm = max(norm, abs(U1[1, 0]), abs(U1[0, 1]), abs(U2[1, 0]), abs(U2[0, 1]))
    h, n = _step_size(norm, abs(t1 - t0), step)
    return CoefficientTrajectory(l, k, integrate(rhs, G0, t0, t1, h, n))


# ---------------------------------------------------------------------------
# linear flows


def _jacobian_source(Du: JacobianSource) -> Callable[[float], np.ndarray]:
    if callable(Du):
        return lambda t: np.asarray(Du(t), float)
    M = np.asarray(Du, float)
    return lambda t: M


@dataclass(frozen=True)
class LinearFlow:
    """Jacobian D(phi)(t) of the linear flow anchored at t_anchor, plus its inverse."""

    t_anchor: float
    times: np.ndarray
    jacobian: np.ndarray
    inverse: np.ndarray

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the flow grid")
        return i

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = self.index(t)
        return self.jacobian[i], self.inverse[i]

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        """Image of points x (last axis of length 2) at time t."""
        D, _ = self.at(t)
        return np.asarray(x, float) @ D.T

    def determinant(self) -> np.ndarray:
        return np.linalg.det(self.jacobian)

    def inverse_defect(self) -> float:
        eye = np.eye(2)
        return float(np.max(np.abs(self.jacobian @ self.inverse - eye)))

    def bound(self) -> float:
        """max over time of all entries of D(phi) and its inverse."""
        return float(max(np.max(np.abs(self.jacobian)), np.max(np.abs(self.inverse))))


def linear_flow(Du: JacobianSource, t_anchor: float, t: float, step: float | None = None) -> LinearFlow:
    """Flow of x' = Du(t) x from t_anchor to t.

    The inverse comes from integrating the adjoint system W' = -W Du and
    is cross-checked against the forward Jacobian at every step.
    """
    J = _jacobian_source(Du)
    probes = np.linspace(min(t_anchor, t), max(t_anchor, t), 5)
    norm = max(float(np.max(np.abs(J(s)))) for s in probes)
    h, n = _step_size(norm, abs(t - t_anchor), step)

    def rhs(s, Y):
        A = J(s)
        return np.stack([A @ Y[0], -Y[1] @ A])

    traj = integrate(rhs, np.stack([np.eye(2), np.eye(2)]), t_anchor, t, h, n)
    flow = LinearFlow(t_anchor, traj.times, traj.states[:, 0], traj.states[:, 1])
    defect = np.max(np.abs(flow.jacobian @ flow.inverse - np.eye(2)), axis=(1, 2))
    if np.any(defect > INVERSE_TOL):
        bad = int(np.argmax(defect > INVERSE_TOL))
        raise FlowInverseError(f"inverse-product defect {defect[bad]:.2e} at t={traj.times[bad]:.6g}")
    return flow


# ---------------------------------------------------------------------------
# angle and modulus of linear functions


@dataclass(frozen=True)
class AngleTrajectory:
    times: np.ndarray
    alpha: np.ndarray
    modulus: np.ndarray | None = None


def angle_rate(A: np.ndarray, alpha: float) -> float:
    """d(alpha)/dt for a linear function moving with velocity gradient A."""
    e = np.array([math.cos(alpha), math.sin(alpha)])
    e_perp = np.array([-e[1], e[0]])
    return -float((A.T @ e) @ e_perp)


def angle_evolution(
    Du: JacobianSource, alpha0: float, t0: float, t1: float, step: float | None = None
) -> AngleTrajectory:
    """Scalar angle ODE; does not involve the modulus."""
    J = _jacobian_source(Du)
    probes = np.linspace(min(t0, t1), max(t0, t1), 5)
    norm = max(float(np.max(np.abs(J(s)))) for s in probes)
    h, n = _step_size(norm, abs(t1 - t0), step)
    traj = integrate(lambda s, y: np.array([angle_rate(J(s), y[0])]), np.array([alpha0]), t0, t1, h, n)
    return AngleTrajectory(traj.times, traj.states[:, 0])


def vector_evolution(
    Du: JacobianSource, theta0: Sequence[float], t0: float, t1: float, step: float | None = None
) -> Trajectory:
    """Gradient vector of a transported linear function: theta' = -Du^T theta."""
    J = _jacobian_source(Du)
    probes = np.linspace(min(t0, t1), max(t0, t1), 5)
    norm = max(float(np.max(np.abs(J(s)))) for s in probes)
    h, n = _step_size(norm, abs(t1 - t0), step)
    return integrate(lambda s, y: -J(s).T @ y, np.asarray(theta0, float), t0, t1, h, n)


def polar_form(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(modulus, angle) of gradient vectors; angles are unwrapped along axis 0."""
    theta = np.atleast_2d(np.asarray(theta, float))
    r = np.hypot(theta[:, 0], theta[:, 1])
    if np.any(r < DEGENERATE_MODULUS):
        raise DegenerateLinearPart("linear part vanishes; angle undefined")
    return r, np.unwrap(np.arctan2(theta[:, 1], theta[:, 0]))


def angle_and_modulus(
    Du: JacobianSource, alpha0: float, r0: float, t0: float, t1: float, step: float | None = None
) -> AngleTrajectory:
    """Joint evolution through the vector form, reported in polar coordinates."""
    traj = vector_evolution(Du, (r0 * math.cos(alpha0), r0 * math.sin(alpha0)), t0, t1, step)
    r, alpha = polar_form(traj.states)
    alpha = alpha + 2 * math.pi * round((alpha0 - alpha[0]) / (2 * math.pi))
    return AngleTrajectory(traj.times, alpha, r)


# ---------------------------------------------------------------------------
# polynomial-growth envelope


@dataclass
class BoundReport:
    flow_bound: float
    velocity_norm: float
    constants: dict[int, float]
    limit: float

    @property
    def passed(self) -> bool:
        return all(c <= self.limit for c in self.constants.values())


def coefficient_bound_check(
    traj: CoefficientTrajectory,
    velocity_norm: float,
    flow_bound: float,
    T: float | None = None,
    limit: float = 100.0,
) -> BoundReport:
    """Smallest C_m per degree m with |g_ij(t)| <= C_m M^(m+2) (1+|T-t|)^(m-1) ||u||^(m-1).

    T defaults to the trajectory's initial time.  A vanishing right-hand side
    with a vanishing coefficient counts as C_m = 0; with a nonzero one as inf.
    """
    T = traj.times[0] if T is None else T
    G = traj.coefficients
    consts: dict[int, float] = {}
    for m in range(1, traj.l + 1):
        worst = 0.0
        for i in range(m + 1):
            g = np.abs(G[:, i, m - i])
            env = flow_bound ** (m + 2) * (1 + np.abs(T - traj.times)) ** (m - 1) * velocity_norm ** (m - 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(g == 0.0, 0.0, g / env)
            worst = max(worst, float(np.max(ratio)))
        consts[m] = worst
    return BoundReport(flow_bound, velocity_norm, consts, limit)
