"""Field representations: periodic grid samples, plane waves, bivariate
polynomials and modulated sums, plus norms and symmetry checks."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

Envelope = Callable[[np.ndarray, np.ndarray], np.ndarray]

MIN_POINTS_PER_WAVELENGTH = 8.0
# spectral amplitude (relative to the peak) above which a mode counts as present
SPECTRAL_PRESENCE = 1e-4
_MAGIC = b"IPMF"


class ResolutionError(ValueError):
    """Raised when a grid cannot resolve the content it is asked to carry."""


# ---------------------------------------------------------------------------
# smooth cutoffs


def _psi(x: np.ndarray, sharpness: float) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-sharpness / x[pos])
    return out


def smooth_step(r, sharpness: float = 1.0) -> np.ndarray:
    """C-infinity monotone step: 1 on r <= 1/2, 0 on r >= 1.

    Built as psi(1-s) / (psi(1-s) + psi(s)) with s = 2r - 1 and
    psi(x) = exp(-sharpness/x) for x > 0, which is flat to all orders at
    both ends of the transition.
    """
    r = np.asarray(r, dtype=float)
    s = np.clip(2.0 * r - 1.0, -1.0, 2.0)
    up = _psi(1.0 - s, sharpness)
    down = _psi(s, sharpness)
    return up / (up + down)


def bump(x1, x2, radius: float = 1.0, sharpness: float = 1.0) -> np.ndarray:
    """Radial bump equal to 1 on |x| <= radius/2 and supported in |x| <= radius."""
    r = np.hypot(np.asarray(x1, float), np.asarray(x2, float)) / radius
    return smooth_step(r, sharpness)


def classic_bump(x1, x2, radius: float = 1.0) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) on the ball of the given radius, 1 at the center."""
    r2 = (np.asarray(x1, float) ** 2 + np.asarray(x2, float) ** 2) / radius**2
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


# ---------------------------------------------------------------------------
# grid fields


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def reflect(values: np.ndarray) -> np.ndarray:
    """v(-x) on the periodic grid: index i -> (n - i) mod n on both axes."""
    axes = (-2, -1)
    return np.roll(np.flip(values, axis=axes), 1, axis=axes)


@dataclass(frozen=True)
class GridField:
    """Samples on the periodic box [-L, L)^2; values[i, j] sits at (x1_i, x2_j).

    A vector field stores two planes, shape (2, n, n).
    """

    values: np.ndarray
    L: float
    odd: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (2, 3) or v.shape[-1] != v.shape[-2]:
            raise ValueError("values must be n x n or 2 x n x n")
        if v.ndim == 3 and v.shape[0] != 2:
            raise ValueError("vector fields carry exactly two planes")
        n = v.shape[-1]
        if n < 16 or not _is_pow2(n):
            raise ValueError(f"grid size must be a power of two >= 16, got {n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        if not self.L > 0:
            raise ValueError("box half-width must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.odd:
            scale = float(np.max(np.abs(v))) if v.size else 0.0
            defect = float(np.max(np.abs(v + reflect(v))))
            if defect > 1e-12 * max(scale, 1e-300) and defect > 0:
                raise ValueError(f"field flagged odd but reflection defect is {defect:.3e}")

    # geometry ---------------------------------------------------------
    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 3

    @property
    def center(self) -> int:
        return self.n // 2

    def axis(self) -> np.ndarray:
        return grid_axis(self.n, self.L)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return grid_mesh(self.n, self.L)

    def component(self, k: int) -> "GridField":
        return GridField(self.values[k], self.L, self.odd)

    def at_origin(self):
        c = self.center
        return self.values[..., c, c]

    # spectral calculus ------------------------------------------------
    def wavenumbers(self) -> np.ndarray:
        return wavenumbers(self.n, self.L)

    def derivative(self, p: int = 0, q: int = 0) -> "GridField":
        """Spectral derivative d1^p d2^q."""
        return GridField(spectral_derivative(self.values, self.L, p, q), self.L, self.odd and (p + q) % 2 == 0)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, GridField):
            _check_compatible(self, other)
            return GridField(self.values + other.values, self.L, self.odd and other.odd)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, GridField):
            _check_compatible(self, other)
            return GridField(self.values - other.values, self.L, self.odd and other.odd)
        return NotImplemented

    def scaled(self, c: float) -> "GridField":
        return GridField(c * self.values, self.L, self.odd)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    # serialization ----------------------------------------------------
    def to_bytes(self) -> bytes:
        header = _MAGIC + struct.pack("<IdB", self.n, float(self.L), 1 if self.odd else 0)
        return header + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "GridField":
        if blob[:4] != _MAGIC:
            raise ValueError("not a grid-field file (bad magic)")
        n, L, odd = struct.unpack_from("<IdB", blob, 4)
        payload = np.frombuffer(blob, dtype="<f8", offset=4 + struct.calcsize("<IdB"))
        planes, rem = divmod(payload.size, n * n)
        if rem or planes not in (1, 2):
            raise ValueError("payload size does not match header")
        vals = payload.reshape((n, n) if planes == 1 else (2, n, n)).astype(float)
        return cls(vals, L, bool(odd))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridField":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_function(cls, fn: Envelope, n: int, L: float, odd: bool = False) -> "GridField":
        x1, x2 = grid_mesh(n, L)
        return cls(np.asarray(fn(x1, x2), float), L, odd)


def _check_compatible(a: GridField, b: GridField) -> None:
    if a.values.shape != b.values.shape or a.L != b.L:
        raise ValueError("grid fields live on different grids")


def grid_axis(n: int, L: float) -> np.ndarray:
    return -L + (2.0 * L / n) * np.arange(n)


def grid_mesh(n: int, L: float) -> tuple[np.ndarray, np.ndarray]:
    x = grid_axis(n, L)
    return np.meshgrid(x, x, indexing="ij")


def wavenumbers(n: int, L: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=2.0 * L / n)


def spectral_derivative(values: np.ndarray, L: float, p: int, q: int) -> np.ndarray:
    if p == 0 and q == 0:
        return np.array(values, dtype=float)
    n = values.shape[-1]
    k = wavenumbers(n, L)
    k1 = (1j * k) ** p
    k2 = (1j * k) ** q
    # the Nyquist mode has no well-defined odd derivative
    if p % 2:
        k1[n // 2] = 0.0
    if q % 2:
        k2[n // 2] = 0.0
    mult = k1[:, None] * k2[None, :]
    return np.real(np.fft.ifft2(np.fft.fft2(values) * mult))


# ---------------------------------------------------------------------------
# norms and checks


def points_per_wavelength(values: np.ndarray, L: float) -> float:
    """Smallest sampling density (points per wavelength) among present modes."""
    v = np.asarray(values, float)
    if v.ndim == 3:
        return min(points_per_wavelength(c, L) for c in v)
    n = v.shape[-1]
    amp = np.abs(np.fft.fft2(v))
    peak = amp.max()
    if peak == 0.0:
        return math.inf
    idx = np.abs(np.fft.fftfreq(n) * n)
    present = amp >= SPECTRAL_PRESENCE * peak
    m = max(idx[np.any(present, axis=1)].max(), idx[np.any(present, axis=0)].max())
    return math.inf if m == 0 else n / m


def _fd_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Fourth-order centered stencil for the order-th derivative (unit spacing)."""
    half = (order - 1) // 2 + 2
    offsets = np.arange(-half, half + 1)
    size = offsets.size
    vander = np.vander(offsets.astype(float), size, increasing=True).T
    rhs = np.zeros(size)
    rhs[order] = math.factorial(order)
    return offsets, np.linalg.solve(vander, rhs)


_FD_CACHE = {d: _fd_weights(d) for d in range(1, 7)}


def fd_derivative(values: np.ndarray, dx: float, p: int, q: int) -> np.ndarray:
    out = np.asarray(values, float)
    for axis, order in ((-2, p), (-1, q)):
        if order == 0:
            continue
        offsets, w = _FD_CACHE[order]
        acc = np.zeros_like(out)
        for o, c in zip(offsets, w):
            if c != 0.0:
                acc += c * np.roll(out, -int(o), axis=axis)
        out = acc / dx**order
    return out


def holder_norm(fld: GridField, j: int, check_resolution: bool = True) -> float:
    """Max over the grid of all finite-difference derivatives of total order <= j.

    Callers that have already checked the resolution of the underlying data (for
    example when the argument is a small difference of two resolved fields, whose
    relative spectrum is dominated by its tail) may pass check_resolution=False.
    """
    if not 0 <= j <= 6:
        raise ValueError("holder_norm supports orders 0..6")
    ppw = points_per_wavelength(fld.values, fld.L) if check_resolution else math.inf
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        raise ResolutionError(f"only {ppw:.2f} points per wavelength (need {MIN_POINTS_PER_WAVELENGTH})")
    best = float(np.max(np.abs(fld.values)))
    for total in range(1, j + 1):
        for p in range(total + 1):
            d = fd_derivative(fld.values, fld.dx, p, total - p)
            best = max(best, float(np.max(np.abs(d))))
    return best


def check_odd(fld: GridField | np.ndarray) -> float:
    v = fld.values if isinstance(fld, GridField) else np.asarray(fld, float)
    return float(np.max(np.abs(v + reflect(v))))


# ---------------------------------------------------------------------------
# bivariate polynomials


def n_coeffs(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def monomials(degree: int) -> list[tuple[int, int]]:
    """(i, j) exponent pairs of x1^i x2^j ordered by total degree then by j."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


@dataclass(frozen=True)
class BivariatePoly:
    """Real polynomial sum c[i, j] x1^i x2^j over i + j <= degree."""

    coeffs: np.ndarray
    odd: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coefficient array must be square")
        deg = c.shape[0] - 1
        i, j = np.indices(c.shape)
        if np.any(c[i + j > deg] != 0.0):
            raise ValueError("coefficients above the total degree must vanish")
        if self.odd and np.any(c[((i + j) % 2 == 0) & (i + j <= deg)] != 0.0):
            raise ValueError("odd polynomial has an even-degree coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction ------------------------------------------------------
    @classmethod
    def zeros(cls, degree: int) -> "BivariatePoly":
        return cls(np.zeros((degree + 1, degree + 1)))

    @classmethod
    def from_terms(cls, degree: int, terms: dict[tuple[int, int], float], odd: bool = False) -> "BivariatePoly":
        c = np.zeros((degree + 1, degree + 1))
        for (i, j), v in terms.items():
            if i + j > degree:
                raise ValueError(f"monomial ({i},{j}) exceeds degree {degree}")
            c[i, j] = v
        return cls(c, odd)

    @classmethod
    def linear(cls, c1: float, c2: float, degree: int = 1) -> "BivariatePoly":
        return cls.from_terms(max(degree, 1), {(1, 0): c1, (0, 1): c2})

    @classmethod
    def from_taylor(cls, g: np.ndarray) -> "BivariatePoly":
        """From origin derivatives g[i, j] = d1^i d2^j p(0)."""
        g = np.asarray(g, float)
        return cls(g / _factorial_grid(g.shape[0] - 1))

    def taylor(self) -> np.ndarray:
        """Origin derivatives d1^i d2^j p(0) (the factorial-normalized basis)."""
        return self.coeffs * _factorial_grid(self.degree)

    # basic properties ---------------------------------------------------
    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def n_coeffs(self) -> int:
        return n_coeffs(self.degree)

    def coefficient_vector(self) -> np.ndarray:
        return np.array([self.coeffs[i, j] for i, j in monomials(self.degree)])

    def is_odd(self, tol: float = 0.0) -> bool:
        i, j = np.indices(self.coeffs.shape)
        mask = (i + j) % 2 == 0
        return bool(np.all(np.abs(self.coeffs[mask]) <= tol))

    def gradient_at_origin(self) -> np.ndarray:
        if self.degree < 1:
            return np.zeros(2)
        return np.array([self.coeffs[1, 0], self.coeffs[0, 1]])

    # evaluation ---------------------------------------------------------
    def __call__(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        deg = self.degree
        out = np.zeros(np.broadcast(x1, x2).shape)
        # Horner in x1 with inner Horner in x2
        for i in range(deg, -1, -1):
            inner = np.zeros_like(out)
            for j in range(deg - i, -1, -1):
                inner = inner * x2 + self.coeffs[i, j]
            out = out * x1 + inner
        return out

    # algebra ------------------------------------------------------------
    def _lift(self, degree: int) -> np.ndarray:
        c = np.zeros((degree + 1, degree + 1))
        d = min(degree, self.degree)
        c[: d + 1, : d + 1] = self.coeffs[: d + 1, : d + 1]
        i, j = np.indices(c.shape)
        c[i + j > degree] = 0.0
        return c

    def truncate(self, k: int) -> "BivariatePoly":
        return BivariatePoly(self._lift(k))

    def __add__(self, other):
        if isinstance(other, (int, float)):
            c = self.coeffs.copy()
            c[0, 0] += other
            return BivariatePoly(c)
        d = max(self.degree, other.degree)
        return BivariatePoly(self._lift(d) + other._lift(d), self.odd and other.odd)

    __radd__ = __add__

    def __neg__(self):
        return BivariatePoly(-self.coeffs, self.odd)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return BivariatePoly(float(other) * self.coeffs, self.odd)
        return self.multiply(other)

    __rmul__ = __mul__

    def multiply(self, other: "BivariatePoly", max_degree: int | None = None) -> "BivariatePoly":
        d = self.degree + other.degree if max_degree is None else max_degree
        out = np.zeros((d + 1, d + 1))
        a, b = self.coeffs, other.coeffs
        for (i, j) in zip(*np.nonzero(a)):
            for (k, l) in zip(*np.nonzero(b)):
                if i + j + k + l <= d:
                    out[i + k, j + l] += a[i, j] * b[k, l]
        return BivariatePoly(out)

    def derivative(self, p: int = 0, q: int = 0) -> "BivariatePoly":
        c = self.coeffs
        deg = self.degree
        if p + q > deg:
            return BivariatePoly.zeros(0)
        out = np.zeros((deg - p - q + 1,) * 2)
        for i in range(p, deg + 1):
            for j in range(q, deg + 1 - i):
                out[i - p, j - q] = c[i, j] * _falling(i, p) * _falling(j, q)
        return BivariatePoly(out)

    def compose_linear(self, A: np.ndarray) -> "BivariatePoly":
        """Polynomial x -> p(A x)."""
        A = np.asarray(A, float)
        y1 = BivariatePoly.linear(A[0, 0], A[0, 1])
        y2 = BivariatePoly.linear(A[1, 0], A[1, 1])
        deg = self.degree
        pw1 = [BivariatePoly.from_terms(0, {(0, 0): 1.0})]
        pw2 = [BivariatePoly.from_terms(0, {(0, 0): 1.0})]
        for _ in range(deg):
            pw1.append(pw1[-1].multiply(y1))
            pw2.append(pw2[-1].multiply(y2))
        out = BivariatePoly.zeros(deg)
        for i in range(deg + 1):
            for j in range(deg + 1 - i):
                if self.coeffs[i, j] != 0.0:
                    out = out + pw1[i].multiply(pw2[j]) * self.coeffs[i, j]
        return out.truncate(deg)

    @classmethod
    def fit(cls, x1: np.ndarray, x2: np.ndarray, values: np.ndarray, degree: int) -> "BivariatePoly":
        """Least-squares fit of the given degree to scattered samples."""
        x1 = np.ravel(x1)
        x2 = np.ravel(x2)
        mons = monomials(degree)
        # scale for conditioning
        s = max(np.max(np.abs(x1)), np.max(np.abs(x2)), 1e-300)
        design = np.stack([(x1 / s) ** i * (x2 / s) ** j for i, j in mons], axis=1)
        sol, *_ = np.linalg.lstsq(design, np.ravel(values), rcond=None)
        c = np.zeros((degree + 1, degree + 1))
        for (i, j), v in zip(mons, sol):
            c[i, j] = v / s ** (i + j)
        return cls(c)


def _falling(n: int, k: int) -> int:
    out = 1
    for t in range(k):
        out *= n - t
    return out


def _factorial_grid(deg: int) -> np.ndarray:
    f = np.array([math.factorial(k) for k in range(deg + 1)], float)
    return f[:, None] * f[None, :]


# ---------------------------------------------------------------------------
# plane waves and modulated sums


@dataclass(frozen=True)
class PlaneWave:
    """envelope(x) * sin(N (b x1 + a x2) + theta0)."""

    envelope: Envelope
    N: float
    a: float
    b: float
    theta0: float = 0.0
    support_radius: float = 1.0
    odd: bool = False

    def __post_init__(self):
        if not self.N > 0:
            raise ValueError("frequency must be positive")
        if abs(self.a**2 + self.b**2 - 1.0) > 1e-12:
            raise ValueError("direction (a, b) must be a unit vector")
        if self.support_radius > 1.0 + 1e-12:
            raise ValueError("envelope support must lie inside the unit ball")

    def phase(self, x1, x2):
        return self.N * (self.b * np.asarray(x1) + self.a * np.asarray(x2)) + self.theta0

    def __call__(self, x1, x2):
        return self.envelope(x1, x2) * np.sin(self.phase(x1, x2))

    def max_frequency(self, x1=None, x2=None) -> float:
        return float(self.N)


@dataclass(frozen=True)
class ModulatedSum:
    """sum over l of g1_l(x) sin(N l X(x)) + g2_l(x) cos(N l X(x))."""

    N: float
    X: BivariatePoly
    terms: tuple = ()
    support_radius: float = 1.0
    odd: bool = False

    def __post_init__(self):
        ls = [t[0] for t in self.terms]
        if len(set(ls)) != len(ls):
            raise ValueError("frequency multiples l must be distinct")
        if any(int(l) != l or l < 1 for l in ls):
            raise ValueError("frequency multiples must be positive integers")
        object.__setattr__(self, "terms", tuple(sorted(self.terms, key=lambda t: t[0])))

    @property
    def frequencies(self) -> list[int]:
        return [t[0] for t in self.terms]

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        phase = self.N * self.X(x1, x2)
        out = np.zeros(np.broadcast(x1, x2).shape)
        for l, g1, g2 in self.terms:
            if g1 is not None:
                out = out + g1(x1, x2) * np.sin(l * phase)
            if g2 is not None:
                out = out + g2(x1, x2) * np.cos(l * phase)
        return out

    def max_frequency(self, x1, x2) -> float:
        if not self.terms:
            return 0.0
        r = np.hypot(x1, x2) <= self.support_radius
        if not np.any(r):
            return 0.0
        g1 = self.X.derivative(1, 0)(x1[r], x2[r])
        g2 = self.X.derivative(0, 1)(x1[r], x2[r])
        return float(self.N * max(self.frequencies) * np.max(np.hypot(g1, g2)))


def sample(obj, n: int, L: float, check_resolution: bool = True) -> GridField:
    """Evaluate a closed-form object on the periodic grid of size n over [-L, L)^2."""
    x1, x2 = grid_mesh(n, L)
    if check_resolution and hasattr(obj, "max_frequency"):
        freq = obj.max_frequency(x1, x2)
        if freq > 0:
            ppw = 2.0 * np.pi / (freq * 2.0 * L / n)
            if ppw < MIN_POINTS_PER_WAVELENGTH:
                raise ResolutionError(f"{ppw:.2f} points per wavelength (need {MIN_POINTS_PER_WAVELENGTH})")
    vals = np.asarray(obj(x1, x2), float)
    odd = bool(getattr(obj, "odd", False))
    if odd:
        # closed forms are odd up to roundoff; symmetrize the samples exactly
        vals = 0.5 * (vals - reflect(vals))
    return GridField(vals, L, odd)


def sum_fields(fields: Iterable[GridField]) -> GridField:
    fields = list(fields)
    if not fields:
        raise ValueError("nothing to sum")
    out = fields[0]
    for f in fields[1:]:
        out = out + f
    return out
