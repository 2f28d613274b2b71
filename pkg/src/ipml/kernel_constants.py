"""Oscillatory cutoff integrals T_N and their large-N limits.

For a unit direction (a, b) the integrals are

    T_N = int h1/|h|^2 * h1^(i-j) h2^j / ((i-j)! j!) * trig(a h2 + b h1) * g(|h| / R) dh,
    R = N^(1 - eps),

with trig = cos for the ``sin`` family and trig = sin for the ``cos`` family (the
family name refers to the trigonometric factor the limit multiplies in the
local velocity expansion).  Everything is computed by quadrature; the limits
are obtained by marching N through powers of two.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import smooth_step

KINDS = ("sin", "cos")
DEFAULT_EPS = 0.5
MAX_ORDER = 8


class QuadratureNonconvergence(RuntimeError):
    pass


class NoConvergence(RuntimeError):
    pass


class InvalidDirection(ValueError):
    pass


class LinearityViolation(RuntimeError):
    pass


class NonpositiveC0(RuntimeError):
    pass


class MissingConstants(KeyError):
    pass


@dataclass(frozen=True)
class CutoffG:
    """Radial cutoff: 1 on r <= 1/2, 0 on r >= 1, smooth and decreasing between."""

    sharpness: float = 2.0

    def __call__(self, r):
        return smooth_step(r, self.sharpness)


REFERENCE_CUTOFF = CutoffG(2.0)
ALTERNATE_CUTOFF = CutoffG(4.0)


def _check_direction(a: float, b: float) -> None:
    if not (np.isfinite(a) and np.isfinite(b)) or abs(a * a + b * b - 1.0) > 1e-12:
        raise InvalidDirection(f"(a, b) = ({a}, {b}) is not a unit vector")


def _check_indices(i: int, j: int) -> None:
    if not (0 <= j <= i <= MAX_ORDER):
        raise ValueError(f"need 0 <= j <= i <= {MAX_ORDER}, got i={i}, j={j}")


def parity_zero(i: int, kind: str) -> bool:
    """Entries that vanish identically by the theta -> theta + pi symmetry."""
    return (kind == "sin" and i % 2 == 0) or (kind == "cos" and i % 2 == 1)


# ---------------------------------------------------------------------------
# polar Gauss-Legendre engine

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


ANGULAR_PANELS = 16
RADIAL_PANEL = np.pi / 2  # a quarter of the unit-frequency wavelength


def _angular_points(r: np.ndarray, refine: float) -> np.ndarray:
    """Gauss points per angular panel; the phase r*cos(theta - phi) sweeps ~r radians per radian."""
    width = 2 * np.pi / ANGULAR_PANELS
    n = np.ceil(refine * (12 + 0.6 * r * width))
    return (4 * np.ceil(n / 4)).astype(int)


def _angular_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gl(n)
    width = 2 * np.pi / ANGULAR_PANELS
    starts = width * np.arange(ANGULAR_PANELS)
    theta = (starts[:, None] + 0.5 * width * (x + 1.0)[None, :]).ravel()
    weights = np.tile(0.5 * width * w, ANGULAR_PANELS)
    return theta, weights


def _radial_edges(R: float) -> np.ndarray:
    """Panel edges on [0, R]: a quarter wavelength far out, graded finer near the
    origin where the cutoffs for small N vary on short scales."""
    edges = [0.0]
    while edges[-1] < R:
        edges.append(edges[-1] + min(RADIAL_PANEL, 0.125 + edges[-1] / 16.0))
    edges[-1] = R
    return np.array(edges)


def _radial_rule(R: float, refine: float) -> tuple[np.ndarray, np.ndarray]:
    npts = int(math.ceil(20 * refine))
    x, w = _gl(npts)
    edges = _radial_edges(R)
    h = np.diff(edges)
    r = (edges[:-1, None] + 0.5 * h[:, None] * (x + 1.0)[None, :]).ravel()
    wr = (0.5 * h[:, None] * w[None, :]).ravel()
    return r, wr


def _angular_factor(pairs: Sequence[tuple[int, int]], theta: np.ndarray) -> np.ndarray:
    c = np.cos(theta)
    s = np.sin(theta)
    cols = [c ** (i - j + 1) * s**j / (math.factorial(i - j) * math.factorial(j)) for i, j in pairs]
    return np.stack(cols, axis=1)


def polar_T_table(
    pairs: Sequence[tuple[int, int]],
    a: float,
    b: float,
    N_values: Sequence[float],
    eps: float = DEFAULT_EPS,
    g: CutoffG = REFERENCE_CUTOFF,
    refine: float = 1.0,
    chunk: int = 4_000_000,
) -> np.ndarray:
    """T_N for several (i, j) pairs, both families and several N on one shared grid.

    Returns an array of shape (len(pairs), 2, len(N_values)); index 0 of the
    middle axis is the ``sin`` family, 1 the ``cos`` family.
    """
    _check_direction(a, b)
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    N_values = np.asarray(N_values, float)
    if np.any(N_values < 1.0):
        raise ValueError("N must be >= 1")
    radii = N_values ** (1.0 - eps)
    r, wr = _radial_rule(float(radii.max()), refine)
    powers = np.array([i for i, _ in pairs])
    # radial weights including the cutoff for each N: shape (nN, nr)
    W = wr[None, :] * g(r[None, :] / radii[:, None])
    counts = _angular_points(r, refine)
    out = np.zeros((len(pairs), 2, len(N_values)))
    for n in np.unique(counts):
        idx = np.nonzero(counts == n)[0]
        theta, wt = _angular_rule(int(n))
        Q = _angular_factor(pairs, theta) * wt[:, None]
        k = a * np.sin(theta) + b * np.cos(theta)
        step = max(1, chunk // theta.size)
        for s0 in range(0, idx.size, step):
            sel = idx[s0 : s0 + step]
            phase = r[sel, None] * k[None, :]
            mom_sin = np.cos(phase) @ Q  # (nsel, npairs)
            mom_cos = np.sin(phase) @ Q
            rp = r[sel, None] ** powers[None, :]
            Wsel = W[:, sel]
            out[:, 0, :] += ((mom_sin * rp).T @ Wsel.T)
            out[:, 1, :] += ((mom_cos * rp).T @ Wsel.T)
    return out


def oscillatory_T(
    i: int,
    j: int,
    kind: str,
    a: float,
    b: float,
    N: float,
    eps: float = DEFAULT_EPS,
    g: CutoffG = REFERENCE_CUTOFF,
    tol: float = 1e-8,
    max_refine: float = 4.0,
) -> float:
    """Polar quadrature of one cutoff integral, refined until two levels agree to tol."""
    _check_indices(i, j)
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    col = KINDS.index(kind)
    refine = 1.0
    prev = polar_T_table([(i, j)], a, b, [N], eps, g, refine)[0, col, 0]
    while refine < max_refine:
        refine *= 1.5
        cur = polar_T_table([(i, j)], a, b, [N], eps, g, refine)[0, col, 0]
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return float(cur)
        prev = cur
    raise QuadratureNonconvergence(f"T^{i},{j},{kind} at N={N} not converged at refinement {refine}")


# ---------------------------------------------------------------------------
# limits


@dataclass
class CauchyRecord:
    N: np.ndarray
    T: np.ndarray
    quad_error: np.ndarray
    value: float
    error: float
    exponent: float
    stop_index: int


def _fit_exponent(N: np.ndarray, d: np.ndarray, floor: float) -> float:
    """Decay exponent of Cauchy differences; differences at the noise floor are excluded."""
    keep = d > floor
    if keep.sum() < 2:
        return math.inf
    slope = np.polyfit(np.log(N[keep]), np.log(d[keep]), 1)[0]
    return float(-slope)


def cauchy_march(
    pairs: Sequence[tuple[int, int]],
    a: float,
    b: float,
    g: CutoffG = REFERENCE_CUTOFF,
    eps: float = DEFAULT_EPS,
    k_min: int = 4,
    k_max: int = 20,
    rel_tol: float = 1e-9,
    stages: Sequence[int] = (18, 20),
) -> dict[tuple[int, int, str], CauchyRecord]:
    """March N = 2^k and stop each entry once two consecutive Cauchy differences are small.

    Quadrature error is estimated by a second pass at 1.5x refinement.
    Computation proceeds in stages of growing k so that easy entries stop
    early; an entry still moving at k_max is returned with its smallest
    observed difference as the error.
    """
    _check_direction(a, b)
    todo = list(pairs)
    result: dict[tuple[int, int, str], CauchyRecord] = {}
    for stage in sorted(set(min(s, k_max) for s in stages) | {k_max}):
        if not todo:
            break
        N = 2.0 ** np.arange(k_min, stage + 1)
        base = polar_T_table(todo, a, b, N, eps, g, 1.0)
        fine = polar_T_table(todo, a, b, N, eps, g, 1.5)
        remaining = []
        for p, (i, j) in enumerate(todo):
            done_pair = True
            for col, kind in enumerate(KINDS):
                T = fine[p, col]
                qerr = np.abs(fine[p, col] - base[p, col])
                rec = _settle(N, T, qerr, rel_tol, parity_zero(i, kind))
                if rec is None and stage < k_max:
                    done_pair = False
                    break
                if rec is None:
                    rec = _best_effort(N, T, qerr)
                result[(i, j, kind)] = rec
            if not done_pair:
                for kind in KINDS:
                    result.pop((i, j, kind), None)
                remaining.append((i, j))
        todo = remaining
    return result


def _settle(N, T, qerr, rel_tol, is_zero) -> CauchyRecord | None:
    d = np.abs(np.diff(T))
    scale = max(1.0, float(np.max(np.abs(T[-3:]))))
    floor = 1e-13 * max(scale, float(np.max(np.abs(T))))
    tol = max(rel_tol * scale, 4.0 * float(np.max(qerr[-3:])))
    for k in range(len(d) - 1):
        if d[k] <= tol and d[k + 1] <= tol:
            stop = k + 2
            # differences on both sides of the chosen value; factor 2 sums a
            # geometric tail with contraction ratio 1/2
            err = 2.0 * max(float(np.max(d[k : k + 3])), float(qerr[stop]))
            lo = max(0, k - 2)
            expo = _fit_exponent(N[lo : k + 1], d[lo : k + 1], max(floor, tol))
            if is_zero:
                expo = math.inf if np.all(d <= 1e3 * floor) else expo
            return CauchyRecord(N, T, qerr, float(T[stop]), err, expo, stop)
    return None


def _best_effort(N, T, qerr) -> CauchyRecord:
    """Stop at the smallest Cauchy difference; beyond it roundoff (which grows
    like R^i) dominates.  The error bound takes the neighbouring differences too,
    since an isolated dip is partly luck."""
    d = np.abs(np.diff(T))
    k = int(np.argmin(d))
    near = d[max(0, k - 1) : k + 2]
    err = 2.0 * max(float(near.max()), float(qerr[k + 1]))
    expo = _fit_exponent(N[max(0, k - 2) : k + 1], d[max(0, k - 2) : k + 1], 0.0)
    return CauchyRecord(N, T, qerr, float(T[k + 1]), err, expo, k + 1)


def limit_constant(
    i: int,
    j: int,
    kind: str,
    a: float,
    b: float,
    g: CutoffG = REFERENCE_CUTOFF,
    eps: float = DEFAULT_EPS,
    min_exponent: float = 3.0,
) -> tuple[float, float]:
    """Large-N limit of T^{i,j,kind}_N with a last-difference error bound."""
    _check_indices(i, j)
    rec = cauchy_march([(i, j)], a, b, g, eps, k_max=march_limit(i), stages=(18, 20, 22))[(i, j, kind)]
    if rec.exponent < min_exponent:
        raise NoConvergence(
            f"Cauchy differences of T^{i},{j},{kind} decay with exponent {rec.exponent:.2f} < {min_exponent}"
        )
    return rec.value, rec.error


def cauchy_exponent(
    i: int,
    j: int,
    kind: str,
    a: float,
    b: float,
    N_values: Sequence[float] = tuple(2.0 ** np.arange(4, 10)),
    g: CutoffG = REFERENCE_CUTOFF,
    eps: float = DEFAULT_EPS,
    doublings: int = 3,
) -> tuple[float, np.ndarray]:
    """Fitted decay exponent of |T_{2N} - T_N| over the last few doublings of a fixed N sweep."""
    N = np.asarray(N_values, float)
    T = polar_T_table([(i, j)], a, b, N, eps, g, 1.5)[0, KINDS.index(kind)]
    d = np.abs(np.diff(T))
    floor = 1e-13 * max(1.0, float(np.max(np.abs(T))))
    expo = _fit_exponent(N[:-1][-doublings:], d[-doublings:], floor)
    return expo, d


# ---------------------------------------------------------------------------
# Cartesian cross-check for the leading constant


def cartesian_T00(
    R: float,
    g: CutoffG = REFERENCE_CUTOFF,
    tol: float = 1e-12,
    n_lo: int = 10,
    n_hi: int = 14,
    max_depth: int = 40,
    chunk: int = 20000,
) -> tuple[float, float]:
    """int h1/|h|^2 sin(h1) g(|h|/R) dh by adaptive tensor Gauss-Legendre on unit tiles.

    Tiles are aligned with the integer lattice so the kernel's direction-dependent
    value at the origin sits on tile corners; tiles whose two rules disagree are
    split into four.  Returns (value, accumulated disagreement).
    """
    xl, wl = _gl(n_lo)
    xh, wh = _gl(n_hi)

    def f(h1, h2):
        rr = h1 * h1 + h2 * h2
        return h1 * np.sin(h1) / rr * g(np.sqrt(rr) / R)

    def rule(corners, size, x, w):
        u = 0.5 * (x + 1.0)
        p1 = corners[:, 0, None, None] + size * u[None, :, None]
        p2 = corners[:, 1, None, None] + size * u[None, None, :]
        vals = f(p1, p2)
        return (vals * (w[:, None] * w[None, :])[None]).sum(axis=(1, 2)) * (0.5 * size) ** 2

    m = int(math.ceil(R))
    grid = np.arange(-m, m, dtype=float)
    c1, c2 = np.meshgrid(grid, grid, indexing="ij")
    corners = np.stack([c1.ravel(), c2.ravel()], axis=1)
    size = 1.0
    total = 0.0
    err = 0.0
    depth = 0
    while corners.size:
        split = []
        tile_tol = tol * size * size
        for s in range(0, len(corners), chunk):
            cs = corners[s : s + chunk]
            lo = rule(cs, size, xl, wl)
            hi = rule(cs, size, xh, wh)
            bad = np.abs(hi - lo) > tile_tol
            if depth >= max_depth:
                bad[:] = False
            total += float(hi[~bad].sum())
            err += float(np.abs(hi - lo)[~bad].sum())
            split.append(cs[bad])
        corners = np.concatenate(split) if split else np.zeros((0, 2))
        if corners.size:
            half = 0.5 * size
            offs = np.array([[0, 0], [half, 0], [0, half], [half, half]])
            corners = (corners[:, None, :] + offs[None]).reshape(-1, 2)
            size = half
            depth += 1
    return total, err


def compute_C0_cartesian(
    g: CutoffG = REFERENCE_CUTOFF, radii: Sequence[float] = (2.0**7.5, 2.0**8)
) -> tuple[float, float]:
    """Leading constant from the Cartesian rule; radii correspond to N = 2^15, 2^16 at eps = 1/2."""
    vals = [cartesian_T00(R, g) for R in radii]
    value, qerr = vals[-1]
    return value, max(abs(vals[-1][0] - vals[-2][0]), qerr)


@dataclass
class C0Report:
    value: float
    error: float
    ratios: dict[float, tuple[float, float]]


def compute_C0(g: CutoffG = REFERENCE_CUTOFF, eps: float = DEFAULT_EPS) -> C0Report:
    """The leading constant from direction (0, 1), with a linearity-in-b check."""
    rec = cauchy_march([(0, 0)], 0.0, 1.0, g, eps)[(0, 0, "cos")]
    C0, err0 = rec.value, rec.error
    ratios = {1.0: (C0, err0)}
    for bval in (math.sqrt(0.5), 0.5):
        aval = math.sqrt(1.0 - bval * bval)
        r = cauchy_march([(0, 0)], aval, bval, g, eps)[(0, 0, "cos")]
        ratio, rerr = r.value / bval, r.error / bval
        ratios[bval] = (ratio, rerr)
        if abs(ratio - C0) > 2.0 * (rerr + err0):
            raise LinearityViolation(f"value/b at b={bval} is {ratio!r}, at b=1 it is {C0!r}")
    if not C0 > 0:
        raise NonpositiveC0(f"C0 = {C0}")
    return C0Report(C0, err0, ratios)


# ---------------------------------------------------------------------------
# tables


def direction_angle(a: float, b: float) -> float:
    """Angle phi with (a, b) = (sin phi, cos phi)."""
    return math.atan2(a, b)


def table_directions(K_max: int) -> list[tuple[float, float]]:
    """2 K_max + 3 equispaced directions: enough to pin trig polynomials of degree K_max + 1."""
    m = 2 * K_max + 3
    phis = 2 * np.pi * np.arange(m) / m
    return [(float(np.sin(p)), float(np.cos(p))) for p in phis]


def _trig_fit(phis: np.ndarray, vals: np.ndarray, degree: int) -> np.ndarray:
    cols = [np.ones_like(phis)]
    for m in range(1, degree + 1):
        cols += [np.cos(m * phis), np.sin(m * phis)]
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    return coef


def _trig_eval(coef: np.ndarray, phi: float) -> float:
    out = coef[0]
    for m in range(1, (len(coef) - 1) // 2 + 1):
        out += coef[2 * m - 1] * math.cos(m * phi) + coef[2 * m] * math.sin(m * phi)
    return float(out)


@dataclass
class ConstantTable:
    """Limits c^{s,c}_{i,j} sampled over directions, evaluable at any direction.

    Each limit is a trigonometric polynomial of degree <= i + 1 in the direction
    angle, so samples at 2 K_max + 3 directions determine it exactly.
    """

    K_max: int
    directions: list[tuple[float, float]]
    values: dict[tuple[int, int, str], np.ndarray]
    errors: dict[tuple[int, int, str], np.ndarray]
    _coef: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        phis = np.array([direction_angle(a, b) for a, b in self.directions])
        for key, vals in self.values.items():
            i = key[0]
            if len(phis) < 2 * i + 3:
                raise ValueError(f"need >= {2 * i + 3} directions for order {i}")
            self._coef[key] = _trig_fit(phis, np.asarray(vals, float), i + 1)

    def value(self, i: int, j: int, kind: str, a: float, b: float) -> float:
        key = (i, j, kind)
        if key not in self._coef:
            raise MissingConstants(f"no constant for {key} (table order {self.K_max})")
        return _trig_eval(self._coef[key], direction_angle(a, b))

    def error(self, i: int, j: int, kind: str) -> float:
        return float(np.max(self.errors[(i, j, kind)]))

    def coefficients(self, a: float, b: float, K: int, structural: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Arrays cs[i, j], cc[i, j] for i <= K at direction (a, b).

        With ``structural`` the parity-mandated zeros are exact zeros and the
        leading cos entry is b * C0 (its linearity in b is checked separately
        by compute_C0), so low-order identities hold without interpolation noise.
        """
        if K > self.K_max:
            raise MissingConstants(f"order {K} requested, table has {self.K_max}")
        _check_direction(a, b)
        cs = np.zeros((K + 1, K + 1))
        cc = np.zeros((K + 1, K + 1))
        for i in range(K + 1):
            for j in range(i + 1):
                for kind, arr in (("sin", cs), ("cos", cc)):
                    if structural and parity_zero(i, kind):
                        continue
                    arr[i, j] = self.value(i, j, kind, a, b)
        if structural:
            cc[0, 0] = b * self.C0
        return cs, cc

    @property
    def C0(self) -> float:
        return self.value(0, 0, "cos", 0.0, 1.0)

    def parity_violations(self) -> list[tuple[int, int, str, float, float]]:
        bad = []
        for (i, j, kind), vals in self.values.items():
            if parity_zero(i, kind):
                err = self.error(i, j, kind)
                worst = float(np.max(np.abs(vals)))
                if worst > max(err, 1e-6):
                    bad.append((i, j, kind, worst, err))
        return bad

    def uniform_bounds(self, probe: Sequence[tuple[float, float]]) -> dict[int, float]:
        """Largest |c_{i,j}| over the probe directions, per order i."""
        out: dict[int, float] = {}
        for (i, j, kind) in self.values:
            m = max(abs(self.value(i, j, kind, a, b)) for a, b in probe)
            out[i] = max(out.get(i, 0.0), m)
        return out

    # CSV ----------------------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "kind", "a", "b", "value", "error"])
        for i in range(self.K_max + 1):
            for j in range(i + 1):
                for kind in KINDS:
                    vals = self.values[(i, j, kind)]
                    errs = self.errors[(i, j, kind)]
                    for (a, b), v, e in zip(self.directions, vals, errs):
                        w.writerow([i, j, kind, repr(a), repr(b), repr(float(v)), repr(float(e))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConstantTable":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("empty constants table")
        dirs: list[tuple[float, float]] = []
        vals: dict = {}
        errs: dict = {}
        for row in rows:
            key = (int(row["i"]), int(row["j"]), row["kind"])
            d = (float(row["a"]), float(row["b"]))
            if d not in dirs:
                dirs.append(d)
            vals.setdefault(key, {})[d] = float(row["value"])
            errs.setdefault(key, {})[d] = float(row["error"])
        K = max(k[0] for k in vals)
        values = {k: np.array([v[d] for d in dirs]) for k, v in vals.items()}
        errors = {k: np.array([v[d] for d in dirs]) for k, v in errs.items()}
        return cls(K, dirs, values, errors)

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "ConstantTable":
        return cls.from_csv(Path(path).read_text())


def march_limit(i: int) -> int:
    """Largest log2 N used when marching order-i integrals."""
    return 18 if i <= 2 else 20 if i <= 4 else 22


def build_table(
    K_max: int,
    directions: Sequence[tuple[float, float]] | None = None,
    g: CutoffG = REFERENCE_CUTOFF,
    eps: float = DEFAULT_EPS,
    k_max: int | None = None,
) -> ConstantTable:
    if not 0 <= K_max <= MAX_ORDER:
        raise ValueError(f"K_max must lie in 0..{MAX_ORDER}")
    directions = list(directions) if directions is not None else table_directions(K_max)
    pairs = [(i, j) for i in range(K_max + 1) for j in range(i + 1)]
    values = {(i, j, k): np.zeros(len(directions)) for i, j in pairs for k in KINDS}
    errors = {(i, j, k): np.zeros(len(directions)) for i, j in pairs for k in KINDS}
    # higher orders need larger N before the cutoff tail is negligible
    groups: dict[int, list[tuple[int, int]]] = {}
    for i, j in pairs:
        k_top = k_max if k_max is not None else march_limit(i)
        groups.setdefault(k_top, []).append((i, j))
    for d, (a, b) in enumerate(directions):
        for k_top, grp in groups.items():
            recs = cauchy_march(grp, a, b, g, eps, k_max=k_top, stages=(18, 20, 22))
            for key, rec in recs.items():
                values[key][d] = rec.value
                errors[key][d] = rec.error
    return ConstantTable(K_max, directions, values, errors)


@lru_cache(maxsize=1)
def default_table() -> ConstantTable:
    """The shipped reference table (regenerate with the ``constants`` CLI command)."""
    text = resources.files("ipml").joinpath("data/constants.csv").read_text()
    return ConstantTable.from_csv(text)
