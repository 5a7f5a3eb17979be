"""Numerical density by backprojection, residues and closed forms.

The density is recovered from the one-dimensional densities of ``H(theta)``:

    f(x + iy) = (1/4pi) int_{S^1} (H B'_theta)(x cos theta + y sin theta) dtheta,

where ``B_theta`` is the B-spline with knots ``lambda_1(theta), ..., lambda_n(theta)``.
Since ``H(theta + pi) = -H(theta)`` the integrand is pi-periodic and only the
half turn is summed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.special import roots_legendre

from ._io import write_csv, write_json
from .bspline import (
    KnotVector,
    bspline_build,
    bspline_derivative,
    hilbert_of_derivative_batch,
    hilbert_of_derivative_raw,
    near_knot_mask,
    pv_hilbert_subtracted,
)
from .errors import (
    AmbiguousCountError,
    DiracMeasureError,
    PreconditionError,
    QuasiHermitianError,
)
from .regions import (
    DEFAULT_TOL_CIRCLE,
    GridSpec,
    RegionMap,
    default_grid,
    delta_coeffs,
    delta_poly,
    in_numerical_range,
    poly_roots,
    poly_roots_batch,
)
from .linalg import h_theta, hermitian_eigen_batch
from .spectral import EigencurveTable, collinearity_residual, eigen_with_derivatives, sample_curves

QUASI_HERMITIAN_REL = 1e-9


def _check_planar(T: EigencurveTable):
    if T.diameter <= 1e-14 * max(T.scale, 1.0):
        raise DiracMeasureError("Dirac measure: scalar matrix has no density")
    if collinearity_residual(T) <= QUASI_HERMITIAN_REL * T.scale:
        raise QuasiHermitianError("numerical range is a segment; use hermitian_density instead")


def _table_for(A, T: EigencurveTable | None, N_theta: int | None) -> EigencurveTable:
    if T is None or (N_theta is not None and T.n_theta != N_theta):
        return sample_curves(np.asarray(A if T is None else T.pencil.matrix), N_theta or 1024)
    return T


@dataclass(frozen=True)
class PointDensity:
    """Backprojected values plus the number of near-knot quadrature fallbacks per point."""

    values: np.ndarray
    fallbacks: np.ndarray


def _tangent_angles(T: EigencurveTable, zs: np.ndarray, tol: float = 1e-6, band: float = 0.0):
    """Angles in ``[0, pi)`` of the tangent lines through each point.

    Returns ``(point, theta, real)``.  With ``band > 0`` complex tangent
    angles whose imaginary part is below ``band`` are included too (``real``
    False): they are poles of the integrand close to the real axis.
    """
    roots = poly_roots_batch(delta_coeffs(T.pencil.matrix, zs))
    mod = np.abs(roots)
    real = np.abs(mod - 1.0) <= tol
    with np.errstate(divide="ignore"):
        near = np.isfinite(mod) & (0.5 * np.abs(np.log(mod)) < band)
    pi_, ri = np.nonzero(real | near)
    theta = np.mod(0.5 * np.angle(roots[pi_, ri]), np.pi)
    return pi_, theta, real[pi_, ri]


def _jump_coefficients(T: EigencurveTable, zs: np.ndarray, pi_: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Coefficient of ``ln|theta - theta*|`` at each tangent angle.

    Only ``n = 3`` has a jump in ``B'`` at simple knots; its size at knot ``j``
    is ``2 / prod_{k != j} (l_k - l_j)``.  Larger ``n`` gives zeros.
    """
    if T.n != 3 or pi_.size == 0:
        return np.zeros(pi_.size)
    lam, _, _ = eigen_with_derivatives(T.pencil, th)
    s = zs[pi_].real * np.cos(th) + zs[pi_].imag * np.sin(th)
    j = np.argmin(np.abs(lam - s[:, None]), axis=1)
    lj = lam[np.arange(th.size), j]
    diff = lam - lj[:, None]
    diff[np.arange(th.size), j] = 1.0
    prod = np.prod(diff, axis=1)
    gap = np.min(np.where(np.eye(3, dtype=bool)[j], np.inf, np.abs(lam - lj[:, None])), axis=1)
    # a knot crossing unresolved by the grid: the caller puts a window there
    ok = gap > 8.0 * (2.0 * np.pi / T.n_theta) * T.scale
    return np.where(ok, 2.0 / np.where(ok, prod, 1.0), 0.0) / np.pi


def _tanh_sinh(level_h: float = 0.125, t_max: float = 3.0):
    """Nodes ``u`` in (0, 1) and weights for a unit interval; endpoint-singularity safe."""
    t = np.arange(-t_max, t_max + 0.5 * level_h, level_h)
    e = np.exp(np.pi * np.sinh(t))
    u = 1.0 / (1.0 + e)
    w = u * (1.0 - u) * np.pi * np.cosh(t) * level_h
    return u, w


_DE_U, _DE_W = _tanh_sinh()
WINDOW_STEPS = 16
POLE_BAND_STEPS = 3
_GREGORY = (3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0)
_MIN_GAP = 2 * len(_GREGORY)


@dataclass
class _Plan:
    """Per-point quadrature plan: trapezoid weights, subtracted logs and windows."""

    weights: np.ndarray
    iso_theta: list
    iso_coef: list
    panels: list  # (a, b) in radians, possibly outside [0, pi)


def _plan_point(angles: np.ndarray, coefs: np.ndarray, half: int, dtheta: float, window_singletons: bool) -> _Plan:
    """Trapezoid weights, subtracted logarithms and tanh-sinh panels for one point.

    Singular angles closer than ``WINDOW_STEPS`` grid steps are grouped
    (circularly, period pi); a group, or a lone angle whose coefficient is
    unknown, is covered by a window of whole grid steps.
    """
    weights = np.full(half, dtheta)
    m = angles.size
    if m == 0:
        return _Plan(weights, [], [], [])
    order = np.argsort(angles)
    a, c = angles[order], coefs[order]
    gaps = np.append(np.diff(a), a[0] + np.pi - a[-1])
    breaks = np.flatnonzero(gaps > WINDOW_STEPS * dtheta)
    if breaks.size == 0:
        return _full_period(a, half)
    start = (breaks[0] + 1) % m
    groups, cur = [], []
    for step in range(m):
        i = (start + step) % m
        t = a[i] + (np.pi if i < start else 0.0)
        cur.append((t, c[i]))
        if gaps[i] > WINDOW_STEPS * dtheta:
            groups.append(cur)
            cur = []
    iso_t, iso_c, windows = [], [], []
    for g in groups:
        if len(g) == 1 and (g[0][1] != 0 or not window_singletons):
            if g[0][1] != 0:
                iso_t.append(g[0][0])
                iso_c.append(g[0][1])
            continue
        ts = [t for t, _ in g]
        kL = int(np.floor(ts[0] / dtheta)) - WINDOW_STEPS
        kR = int(np.ceil(ts[-1] / dtheta)) + WINDOW_STEPS
        windows.append([kL, kR, ts])
    merged = []
    for w in windows:
        if merged and w[0] <= merged[-1][1] + _MIN_GAP:
            merged[-1][1] = max(merged[-1][1], w[1])
            merged[-1][2] = merged[-1][2] + w[2]
        else:
            merged.append(w)
    if len(merged) > 1 and merged[-1][1] + _MIN_GAP >= merged[0][0] + half:
        last = merged.pop()
        first = merged[0]
        merged[0] = [last[0], max(last[1], first[1] + half), last[2] + [t + np.pi for t in first[2]]]
    panels = []
    for kL, kR, ts in merged:
        if kR - kL >= half - _MIN_GAP:
            return _full_period(a, half)
        for k in range(kL + 1, kR):
            weights[k % half] = 0.0
        # fourth-order end corrections on the trapezoid left outside
        for i, g in enumerate(_GREGORY):
            weights[(kL - i) % half] += (g - 1.0) * dtheta
            weights[(kR + i) % half] += (g - 1.0) * dtheta
        edges = [kL * dtheta] + sorted(t for t in ts if kL * dtheta < t < kR * dtheta) + [kR * dtheta]
        panels.extend(zip(edges[:-1], edges[1:]))
    return _Plan(weights, iso_t, iso_c, panels)


def _full_period(a: np.ndarray, half: int) -> _Plan:
    pts = np.sort(a)
    edges = np.concatenate([[pts[0]], pts[1:], [pts[0] + np.pi]])
    return _Plan(np.zeros(half), [], [], list(zip(edges[:-1], edges[1:])))


def backproject(T: EigencurveTable, zs, correct: bool = True, chunk: int = 2048) -> PointDensity:
    """Trapezoidal backprojection over the sampled half turn.

    With ``correct`` the singular angles of each point (tangent lines through
    it) are treated explicitly: an isolated logarithmic singularity is
    subtracted as ``c ln|sin(theta - theta*)|`` and integrated exactly
    (``int_0^pi ln|sin| = -pi ln 2``), while clusters of singular angles that
    the grid cannot resolve get a window integrated by tanh-sinh panels
    split at the singular angles.
    """
    zs = np.asarray(zs, dtype=complex)
    flat = zs.ravel()
    half = T.n_theta // 2
    dtheta = np.pi / half
    thetas = T.thetas[:half]
    splines = []
    for k in range(half):
        knots = KnotVector.regularized(T.lambdas[k])
        splines.append((knots, bspline_derivative(bspline_build(knots))))
    vals = np.zeros(flat.size)
    fallbacks = np.zeros(flat.size, dtype=int)
    for c0 in range(0, flat.size, chunk):
        z = flat[c0 : c0 + chunk]
        F = np.empty((z.size, half))
        near_all = np.zeros((z.size, half), dtype=bool)
        for k, (knots, dB) in enumerate(splines):
            s = z.real * np.cos(thetas[k]) + z.imag * np.sin(thetas[k])
            F[:, k] = hilbert_of_derivative_raw(knots, s, dB)
            near_all[:, k] = near_knot_mask(knots, s)
        if correct:
            vals[c0 : c0 + z.size], fallbacks[c0 : c0 + z.size] = _corrected(T, z, F, near_all, thetas, dtheta)
        else:
            for p, k in zip(*np.nonzero(near_all)):
                s = z[p].real * np.cos(thetas[k]) + z[p].imag * np.sin(thetas[k])
                F[p, k] = pv_hilbert_subtracted(splines[k][1], float(s))
            fallbacks[c0 : c0 + z.size] = np.sum(near_all, axis=1)
            # (1/4pi) over [0, 2pi) equals (1/2pi) over [0, pi)
            vals[c0 : c0 + z.size] = F.sum(axis=1) * dtheta / (2.0 * np.pi)
    return PointDensity(vals.reshape(zs.shape), fallbacks.reshape(zs.shape))


def _corrected(T, z, F, near_all, thetas, dtheta):
    half = thetas.size
    pi_, th, real = _tangent_angles(T, z, band=POLE_BAND_STEPS * dtheta)
    coef = np.zeros(th.size)
    if np.any(real):
        coef[real] = _jump_coefficients(T, z, pi_[real], th[real])
    total = np.zeros(z.size)
    bad_count = np.zeros(z.size, dtype=int)
    node_t, node_w, node_p, node_g = [], [], [], []
    for p in range(z.size):
        sel = pi_ == p
        plan = _plan_point(th[sel], coef[sel], half, dtheta, True)
        G = np.zeros(half)
        exact = 0.0
        for t, c in zip(plan.iso_theta, plan.iso_coef):
            with np.errstate(divide="ignore"):
                G += c * np.log(np.abs(np.sin(thetas - t)))
            exact += -c * np.pi * np.log(2.0)
        with np.errstate(invalid="ignore"):
            R = F[p] - G
        bad = (~np.isfinite(R) | near_all[p]) & (plan.weights > 0)
        good = ~bad & np.isfinite(R)
        if np.any(bad) and np.any(good):
            idx = np.arange(half)
            R[bad] = np.interp(idx[bad], idx[good], R[good], period=half)
        bad_count[p] = int(np.sum(bad))
        R = np.where(plan.weights > 0, R, 0.0)
        total[p] = np.dot(plan.weights, R) + exact
        for a, b in plan.panels:
            if b <= a:
                continue
            t = a + (b - a) * _DE_U
            node_t.append(t)
            node_w.append((b - a) * _DE_W)
            node_p.append(np.full(t.size, p))
            g = np.zeros(t.size)
            for ti, ci in zip(plan.iso_theta, plan.iso_coef):
                g += ci * np.log(np.abs(np.sin(t - ti)))
            node_g.append(g)
    if node_t:
        t = np.concatenate(node_t)
        w = np.concatenate(node_w)
        p = np.concatenate(node_p)
        g = np.concatenate(node_g)
        lam = hermitian_eigen_batch(h_theta(T.pencil, t))[0]
        lam = np.array([KnotVector.regularized(row).knots for row in lam]) if _has_clusters(lam) else lam
        s = z[p].real * np.cos(t) + z[p].imag * np.sin(t)
        Fw = hilbert_of_derivative_batch(lam, s)
        Fw = np.where(np.isfinite(Fw), Fw, 0.0)
        # the window replaces F there; the subtracted logs were integrated over the full period
        np.add.at(total, p, w * (Fw - g))
    return total / (2.0 * np.pi), bad_count


def _has_clusters(lam: np.ndarray) -> bool:
    width = lam[:, -1] - lam[:, :1].ravel()
    return bool(np.any(np.diff(lam, axis=1) < 1e-9 * width[:, None]))


def density_points(A, zs, T: EigencurveTable | None = None, N_theta: int | None = None, clamp: bool = True) -> np.ndarray:
    T = _table_for(A, T, N_theta)
    _check_planar(T)
    zs = np.asarray(zs, dtype=complex)
    out = np.zeros(zs.shape)
    inside = in_numerical_range(T, zs) if clamp else np.ones(zs.shape, dtype=bool)
    if np.any(inside):
        out[inside] = backproject(T, zs[inside]).values
    return out


def density_at(A, T: EigencurveTable | None, z: complex, N_theta: int | None = None) -> float:
    """``f_A(z)`` by backprojection; exactly 0 outside the sampled support lines."""
    return float(density_points(A, np.array([z]), T, N_theta)[0])


def hermitian_density(knots, x):
    """B-spline density of a Hermitian matrix with eigenvalues ``knots``."""
    lam = np.sort(np.asarray(knots.knots if isinstance(knots, KnotVector) else knots, dtype=float))
    if lam.size < 2 or lam[-1] - lam[0] <= 0:
        raise DiracMeasureError("Dirac measure, no density")
    return bspline_build(KnotVector.regularized(lam))(x)


@dataclass(frozen=True)
class DensityGrid:
    grid: GridSpec
    values: np.ndarray
    mass: float
    n_theta: int
    mass_trapezoid: float = float("nan")
    nan_count: int = 0
    fallback_count: int = 0
    runtime: float = 0.0
    region: RegionMap | None = field(default=None)

    def meta(self) -> dict:
        v = self.values[np.isfinite(self.values)]
        return {
            "mass": self.mass,
            "mass_trapezoid": self.mass_trapezoid,
            "min": float(v.min()) if v.size else None,
            "max": float(v.max()) if v.size else None,
            "n_theta": self.n_theta,
            "nan_count": self.nan_count,
            "near_knot_fallbacks": self.fallback_count,
            "runtime": self.runtime,
            "grid": self.grid.to_json(),
        }

    def export_csv(self, path):
        Z = self.grid.points()
        return write_csv(path, ["x", "y", "f"], [Z.real, Z.imag, self.values])

    def export_json(self, path):
        return write_json(path, self.meta())

    def export_gnuplot(self, path, csv_name: str = "density.csv"):
        script = GNUPLOT_TEMPLATE.format(csv=csv_name, nx=self.grid.nx)
        with open(path, "w") as fh:
            fh.write(script)
        return path

    def line_integral(self, theta: float, x: float, samples: int = 2001) -> float:
        """``int f(e^{i theta}(x + i y)) dy`` by bilinear interpolation on the grid."""
        from scipy.ndimage import map_coordinates

        g = self.grid
        L = np.hypot(g.x1 - g.x0, g.y1 - g.y0)
        y = np.linspace(-L, L, samples)
        z = np.exp(1j * theta) * (x + 1j * y)
        cols = (z.real - g.x0) / g.dx
        rows = (z.imag - g.y0) / g.dy
        vals = map_coordinates(np.nan_to_num(self.values), [rows, cols], order=1, mode="constant", cval=0.0)
        return float(np.trapezoid(vals, y))


GNUPLOT_TEMPLATE = """\
set datafile separator ','
set key off
set xlabel 'Re z'
set ylabel 'Im z'
set dgrid3d {nx},{nx}
set contour base
set cntrparam levels 20
set view map
unset surface
set table 'density_contours.dat'
splot '{csv}' every ::1 using 1:2:3 with lines
unset table
set surface
set view 60,30
set terminal pngcairo size 1200,500
set output 'density.png'
set multiplot layout 1,2
plot 'density_contours.dat' with lines
splot '{csv}' every ::1 using 1:2:3 with pm3d
unset multiplot
"""


def density_grid(
    A,
    T: EigencurveTable | None = None,
    grid: GridSpec | None = None,
    N_theta: int | None = None,
    region: RegionMap | None = None,
    threads: int = 1,
) -> DensityGrid:
    """Backprojected density on a lattice; cells outside the support lines are exactly 0.

    ``mass`` integrates ``f_A`` over W(A) within the grid rectangle by
    :func:`polar_mass`; ``mass_trapezoid`` is the plain lattice sum.
    """
    t0 = time.perf_counter()
    T = _table_for(A, T, N_theta)
    _check_planar(T)
    grid = grid or default_grid(T)
    Z = grid.points()
    inside = in_numerical_range(T, Z)
    values = np.zeros(Z.shape)
    fallbacks = 0
    nan_count = 0
    if np.any(inside):
        try:
            pts = Z[inside]
            parts = np.array_split(pts, max(1, min(int(threads), pts.size)))
            if len(parts) > 1:
                with ThreadPoolExecutor(max_workers=len(parts)) as pool:
                    res = list(pool.map(lambda q: backproject(T, q), parts))
            else:
                res = [backproject(T, pts)]
            values[inside] = np.concatenate([r.values for r in res])
            fallbacks = int(sum(np.sum(r.fallbacks) for r in res))
        except (ArithmeticError, ValueError):
            values[inside] = np.nan
        nan_count = int(np.sum(~np.isfinite(values)))
    trap = float(np.trapezoid(np.trapezoid(np.nan_to_num(values), grid.x, axis=1), grid.y))
    mass = polar_mass(T, grid) if np.any(inside) else 0.0
    return DensityGrid(grid, values, mass, T.n_theta, trap, nan_count, fallbacks, time.perf_counter() - t0, region)


def boundary_radius(T: EigencurveTable, c: complex, phi, iters: int = 50) -> np.ndarray:
    """Distance from the interior point ``c`` to the boundary of W(A) along ``e^{i phi}``.

    ``R(phi) = min_theta (lambda_max(theta) - Re(c e^{-i theta})) / cos(theta - phi)``
    over ``cos(theta - phi) > 0``: the sampled minimum, then golden section
    with exact eigenvalues on the two steps around it.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    th = T.thetas
    h = T.lambdas[:, -1] - (c.real * np.cos(th) + c.imag * np.sin(th))
    cosd = np.cos(th[None] - phi[:, None])
    with np.errstate(divide="ignore"):
        ratio = np.where(cosd > 1e-3, h[None] / cosd, np.inf)
    k = np.argmin(ratio, axis=1)
    dtheta = 2.0 * np.pi / T.n_theta

    def g(t):
        lam = hermitian_eigen_batch(h_theta(T.pencil, t))[0][:, -1]
        return (lam - (c.real * np.cos(t) + c.imag * np.sin(t))) / np.cos(t - phi)

    lo, hi = th[k] - dtheta, th[k] + dtheta
    gr = 0.5 * (np.sqrt(5.0) - 1.0)
    x1, x2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
    f1, f2 = g(x1), g(x2)
    for _ in range(iters):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1n, x2n = hi - gr * (hi - lo), lo + gr * (hi - lo)
        x1, x2 = np.where(left, x1n, x2), np.where(left, x1, x2n)
        fn = g(np.where(left, x1, x2))
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
    return np.minimum(np.minimum(f1, f2), ratio[np.arange(phi.size), k])


def polar_mass(T: EigencurveTable, grid: GridSpec, n_phi: int = 256, n_u: int = 32) -> float:
    """Mass of ``f_A`` over W(A) intersected with the grid rectangle.

    Polar coordinates about the centroid ``tr(A)/n``.  Along each ray the
    radius is ``r = r_hi - (r_hi - r_lo) u^2``, which removes the inverse
    square root growth at the boundary (n = 2) that a lattice trapezoid
    cannot resolve; Gauss-Legendre in ``u`` and the periodic trapezoid in
    ``phi``.
    """
    c = complex(np.trace(T.pencil.matrix) / T.n)
    phi = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    e = np.exp(1j * phi)
    R = boundary_radius(T, c, phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.stack([(grid.x0 - c.real) / e.real, (grid.x1 - c.real) / e.real])
        ty = np.stack([(grid.y0 - c.imag) / e.imag, (grid.y1 - c.imag) / e.imag])
    # a ray parallel to an edge gives +-inf or nan; nan means the ray lies on the edge
    t_in = np.maximum(np.nan_to_num(tx.min(0), nan=-np.inf), np.nan_to_num(ty.min(0), nan=-np.inf))
    t_out = np.minimum(np.nan_to_num(tx.max(0), nan=np.inf), np.nan_to_num(ty.max(0), nan=np.inf))
    lo = np.maximum(t_in, 0.0)
    hi = np.minimum(t_out, R)
    L = np.clip(hi - lo, 0.0, None)
    keep = L > 0
    if not np.any(keep):
        return 0.0
    u, w = roots_legendre(n_u)
    u, w = 0.5 * (u + 1.0), 0.5 * w
    r = hi[keep, None] - L[keep, None] * u[None] ** 2
    f = backproject(T, (c + r * e[keep, None]).ravel()).values.reshape(r.shape)
    f = np.nan_to_num(f)
    return float(np.sum(f * r * 2.0 * L[keep, None] * u * w) * (2.0 * np.pi / n_phi))


# -- derivatives of order n - 2 ------------------------------------------------


@dataclass(frozen=True)
class DiffOperator:
    """``sum_k c_k d_x^{n-2-k} d_y^k``; ``coefficients[k]`` multiplies the ``k``-th term."""

    coefficients: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.coefficients)
        if not c or all(v == 0 for v in c):
            raise PreconditionError("operator needs a nonzero coefficient")
        object.__setattr__(self, "coefficients", c)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def symbol(self, w):
        """``P((w + 1)/2, (w - 1)/(2i))``."""
        w = np.asarray(w, dtype=complex)
        u = 0.5 * (w + 1.0)
        v = (w - 1.0) / 2j
        d = self.degree
        return sum(c * u ** (d - k) * v**k for k, c in enumerate(self.coefficients))

    @classmethod
    def monomial(cls, degree: int, k: int) -> "DiffOperator":
        c = [0.0] * (degree + 1)
        c[k] = 1.0
        return cls(tuple(c))


@dataclass(frozen=True)
class ResidueValue:
    value: float
    imag_residual: float
    n_circle: int


def derivative_residue_full(A, z: complex, P: DiffOperator, tol_circle: float = DEFAULT_TOL_CIRCLE) -> ResidueValue:
    a = np.asarray(A, dtype=complex)
    n = a.shape[0]
    if P.degree != n - 2:
        raise PreconditionError(f"operator degree {P.degree} does not match n - 2 = {n - 2}")
    dp = delta_poly(a, z)
    roots = poly_roots(dp.coeffs).roots
    dist = np.abs(np.abs(roots) - 1.0)
    if np.any((dist > tol_circle) & (dist <= 3.0 * tol_circle)):
        raise AmbiguousCountError("z too close to the singular set: root in the circle guard band")
    deriv = np.polynomial.polynomial.polyder(dp.coeffs)
    dvals = np.polynomial.polynomial.polyval(roots, deriv)
    coeff_scale = np.polynomial.polynomial.polyval(np.abs(roots), np.abs(deriv))
    if np.any(np.abs(dvals) <= 1e-8 * np.maximum(coeff_scale, 1e-300)):
        raise AmbiguousCountError("z too close to the singular set: multiple root")
    res = P.symbol(roots) / dvals
    on = dist <= tol_circle
    inner = np.abs(roots) < 1.0 - tol_circle
    total = 2.0 * np.sum(res[inner]) + np.sum(res[on])
    val = -factorial(n - 1) / (4.0 * np.pi) * total
    return ResidueValue(float(val.real), float(abs(val.imag)), int(np.sum(on)))


def derivative_residue(A, z: complex, P: DiffOperator, tol_circle: float = DEFAULT_TOL_CIRCLE) -> float:
    """``(P f_A)(z)`` for a homogeneous operator of degree ``n - 2``, by residues."""
    return derivative_residue_full(A, z, P, tol_circle).value


# -- closed forms ------------------------------------------------------------------


CLOSED_FORMS = ("ellipse2x2", "jordan2", "a3_radial", "reducible3")


def closed_form_density(case: str, params: dict | None, z):
    """Exact densities of the reference families, 0 outside their support.

    ``ellipse2x2``: ``A = [[-c, 2b], [0, c]]`` with ``b > 0, c >= 0``.
    ``jordan2``: ``[[0, 2], [0, 0]]``.  ``a3_radial``: the nilpotent shift
    with ``|a|^2 + |b|^2 = 4``.  ``reducible3``: the Jordan block plus the
    eigenvalue ``a >= 0``.
    """
    params = params or {}
    z = np.asarray(z, dtype=complex)
    x, y, r2 = z.real, z.imag, np.abs(z) ** 2
    out = np.zeros(z.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        if case == "ellipse2x2":
            b, c = float(params.get("b", 1.0)), float(params.get("c", 0.0))
            if b <= 0 or c < 0:
                raise PreconditionError("ellipse needs b > 0 and c >= 0")
            a2 = b * b + c * c
            q = a2 * b * b - b * b * x * x - a2 * y * y
            out = np.where(q > 0, 1.0 / (2 * np.pi * np.sqrt(np.where(q > 0, q, 1.0))), 0.0)
        elif case == "jordan2":
            out = np.where(r2 < 1, 1.0 / (2 * np.pi * np.sqrt(np.where(r2 < 1, 1 - r2, 1.0))), 0.0)
        elif case == "a3_radial":
            ok = (r2 < 1) & (r2 > 0)
            rr = np.where(ok, r2, 0.5)
            out = np.where(ok, np.log((1 + np.sqrt(1 - rr)) / np.sqrt(rr)) / np.pi, 0.0)
        elif case == "reducible3":
            a = float(params.get("a", 0.0))
            if a < 0:
                raise PreconditionError("reducible3 needs a >= 0")
            out = _reducible3(a, x, y, r2)
        else:
            raise PreconditionError(f"unknown closed form {case!r}; expected one of {CLOSED_FORMS}")
    return out if out.ndim else float(out)


def _reducible3(a, x, y, r2):
    disk = r2 < 1
    one_m = np.where(disk, 1 - r2, 0.0)
    u = 1 - a * x
    if abs(a - 1) <= 1e-12:
        return np.where(disk, np.sqrt(one_m) / (np.pi * np.where(disk, u, 1.0)), 0.0)
    if a < 1:
        arg = u / np.sqrt(u * u - one_m * (1 - a * a))
        return np.where(disk, np.arccosh(np.where(disk, arg, 1.0)) / (np.pi * np.sqrt(1 - a * a)), 0.0)
    k = 1.0 / np.sqrt(a * a - 1)
    arg = u / np.sqrt(u * u + one_m * (a * a - 1))
    inner = np.arccos(np.clip(np.where(disk, arg, 1.0), -1, 1)) * k / np.pi
    # triangle with vertices a and e^{+-i phi}, cos(phi) = 1/a, minus the disk
    c = 1.0 / a
    s = np.sqrt(1 - c * c)
    in_tri = (x >= c) & (np.abs(y) * (a - c) <= s * (a - x))
    return np.where(disk, inner, np.where(in_tri, k, 0.0))


# -- radial reconstruction -------------------------------------------------------


def radial_reconstruct(F_H, R2: float, s: float, nodes: int = 4001) -> float:
    """``F_A(s) = (1/pi) d/ds int_0^s F_H(s - t) t^{-1/2} dt``.

    ``F_H`` is a callable on ``[0, R2]``.  The inner integral uses ``t = u^2``
    and Simpson's rule; the outer derivative is a central difference with
    step ``1e-4 R2``.
    """
    hs = 1e-4 * R2
    if not (hs <= s <= R2 - hs):
        raise PreconditionError(f"s = {s} outside [{hs}, {R2 - hs}]")

    def G(sv):
        m = nodes + (nodes + 1) % 2
        u = np.linspace(0.0, np.sqrt(sv), m)
        f = 2.0 * np.asarray(F_H(sv - u * u), dtype=float) * np.ones_like(u)
        h = u[1] - u[0]
        return h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())

    return float((G(s + hs) - G(s - hs)) / (2.0 * hs) / np.pi)


def radial_density(f_H, R: float, z) -> float:
    """Density at ``z`` of a rotation-invariant measure from its 1-D projection ``f_H``."""
    R2 = R * R
    F_H = lambda t: f_H(np.sqrt(np.clip(R2 - np.asarray(t), 0.0, None)))
    return radial_reconstruct(F_H, R2, R2 - abs(z) ** 2)


# -- direct sums -----------------------------------------------------------------


def direct_sum_sample(samples_A, samples_B, p: int, q: int, rng) -> np.ndarray:
    """Draws of ``t z' + (1 - t) z''`` with ``t ~ Beta(p, q)`` from two Gamma draws."""
    if p < 1 or q < 1:
        raise PreconditionError("p, q must be >= 1")
    sa = np.asarray(samples_A, dtype=complex)
    sb = np.asarray(samples_B, dtype=complex)
    if sa.size == 0 or sb.size == 0:
        raise PreconditionError("sample sets must be nonempty")
    m = max(sa.size, sb.size)
    za = sa[rng.integers(0, sa.size, m)]
    zb = sb[rng.integers(0, sb.size, m)]
    g1 = rng.gamma(p, 1.0, m)
    g2 = rng.gamma(q, 1.0, m)
    t = g1 / (g1 + g2)
    return t * za + (1.0 - t) * zb


def _ecf(samples, xi):
    s = np.asarray(samples, dtype=complex)
    return np.mean(np.exp(1j * (xi[0] * s.real + xi[1] * s.imag)))


@dataclass(frozen=True)
class FourierCheck:
    residual: float
    standard_error: float


def direct_sum_fourier_check(samples_A, samples_B, samples_AB, p: int, q: int, xi) -> FourierCheck:
    """Compare the ECF of the direct sum with the Beta-weighted product of the parts."""
    for s in (samples_A, samples_B, samples_AB):
        if np.asarray(s).size < 10_000:
            raise PreconditionError("need at least 1e4 samples per set")
    from scipy.special import beta as beta_fn

    xi = np.asarray(xi, dtype=float)
    t, wt = roots_legendre(64)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    integrand = np.array([_ecf(samples_A, ti * xi) * _ecf(samples_B, (1 - ti) * xi) for ti in t])
    rhs = np.sum(wt * integrand * t ** (p - 1) * (1 - t) ** (q - 1)) / beta_fn(p, q)
    lhs = _ecf(samples_AB, xi)
    sab = np.asarray(samples_AB, dtype=complex)
    e = np.exp(1j * (xi[0] * sab.real + xi[1] * sab.imag))
    se_ab = np.sqrt(np.var(e.real) + np.var(e.imag)) / np.sqrt(sab.size)
    se_a = 1.0 / np.sqrt(np.asarray(samples_A).size)
    se_b = 1.0 / np.sqrt(np.asarray(samples_B).size)
    return FourierCheck(float(abs(lhs - rhs)), float(np.sqrt(se_ab**2 + se_a**2 + se_b**2)))
