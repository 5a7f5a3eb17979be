"""Tangent counts N(z) from the unit-circle roots of a degree-n polynomial in w.

For fixed ``z`` put

    D(w, z) = det((A - z I)/2 + w (A* - conj(z) I)/2).

On ``w = e^{2 i theta}`` this equals ``w^{n/2} det(H(theta) - Re(z e^{-i theta}) I)``,
so unit-circle roots are exactly the tangent lines to the critical curve
through ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._io import write_csv, write_json
from .errors import AmbiguousCountError, ConvergenceError, PreconditionError
from .linalg import SquareMatrix
from .spectral import EigencurveTable, support_function

NODE_RADIUS = 1.1
DEFAULT_TOL_CIRCLE = 1e-6
DEFAULT_TOL_ROOT = 1e-12
LEAD_REL = 1e-12
MAX_ABERTH = 200
RANGE_SLACK_REL = 1e-9


@dataclass(frozen=True)
class DeltaPoly:
    """Ascending coefficients of ``w -> D(w, z)``."""

    coeffs: np.ndarray
    z: complex

    @property
    def n(self) -> int:
        return self.coeffs.size - 1

    @property
    def leading_magnitude(self) -> float:
        return float(abs(self.coeffs[-1]))

    def __call__(self, w):
        return np.polynomial.polynomial.polyval(w, self.coeffs)


@dataclass(frozen=True)
class RootSet:
    """Finite roots plus the number of roots sent to infinity by a degree deficit."""

    roots: np.ndarray
    n_infinite: int = 0


@dataclass(frozen=True)
class GridSpec:
    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise PreconditionError("grid needs nx, ny >= 2")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise PreconditionError("grid ranges must be increasing")

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        parts = text.split(",")
        if len(parts) != 6:
            raise PreconditionError("grid spec is x0,x1,y0,y1,nx,ny")
        try:
            x0, x1, y0, y1 = (float(p) for p in parts[:4])
            nx, ny = int(parts[4]), int(parts[5])
        except ValueError as exc:
            raise PreconditionError(f"bad grid spec {text!r}") from exc
        return cls(x0, x1, y0, y1, nx, ny)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    def points(self) -> np.ndarray:
        """Complex lattice of shape ``(ny, nx)``; rows run along ``y``."""
        X, Y = np.meshgrid(self.x, self.y)
        return X + 1j * Y

    def to_json(self) -> dict:
        return {"x0": self.x0, "x1": self.x1, "y0": self.y0, "y1": self.y1, "nx": self.nx, "ny": self.ny}


def default_grid(T: EigencurveTable, nx: int = 200, ny: int = 200, pad: float = 0.1) -> GridSpec:
    """Support-function bounding box of the numerical range, padded by ``pad``."""
    right = float(support_function(T, 0.0))
    top = float(support_function(T, 0.5 * np.pi))
    left = -float(support_function(T, np.pi))
    bottom = -float(support_function(T, 1.5 * np.pi))
    w = max(right - left, top - bottom, 1e-12)
    return GridSpec(left - pad * w, right + pad * w, bottom - pad * w, top + pad * w, nx, ny)


def delta_coeffs(A, zs) -> np.ndarray:
    """Coefficients of ``D(., z)`` for every ``z`` in ``zs``; shape ``zs.shape + (n+1,)``.

    Determinants at ``n + 1`` nodes on the circle of radius 1.1 are
    interpolated by an inverse DFT.
    """
    a = np.asarray(A, dtype=complex)
    n = a.shape[0]
    zs = np.asarray(zs, dtype=complex)
    flat = zs.ravel()
    k = np.arange(n + 1)
    nodes = NODE_RADIUS * np.exp(2j * np.pi * k / (n + 1))
    eye = np.eye(n)
    out = np.empty((flat.size, n + 1), dtype=complex)
    chunk = max(1, 200000 // ((n + 1) * n * n))
    for s in range(0, flat.size, chunk):
        z = flat[s : s + chunk]
        left = 0.5 * (a[None] - z[:, None, None] * eye)
        right = 0.5 * (a.conj().T[None] - np.conj(z)[:, None, None] * eye)
        M = left[:, None] + nodes[None, :, None, None] * right[:, None]
        vals = np.linalg.det(M)
        out[s : s + chunk] = np.fft.fft(vals, axis=1) / (n + 1) / NODE_RADIUS**k
    return out.reshape(zs.shape + (n + 1,))


def delta_poly(A, z: complex) -> DeltaPoly:
    c = delta_coeffs(A, np.array([z]))[0]
    return DeltaPoly(c, complex(z))


def _horner(c: np.ndarray, w: np.ndarray):
    """Value and derivative of each row of ``c`` (ascending) at each root ``w``."""
    p = np.zeros_like(w)
    dp = np.zeros_like(w)
    for k in range(c.shape[-1] - 1, -1, -1):
        dp = dp * w + p
        p = p * w + c[..., k : k + 1]
    return p, dp


def _aberth(c: np.ndarray, tol: float, max_iter: int):
    """Simultaneous Aberth-Ehrlich iteration on rows of full-degree polynomials."""
    B, m1 = c.shape
    d = m1 - 1
    r = np.abs(c[:, :1] / c[:, -1:]) ** (1.0 / d)
    r = np.where(r > 0, r, 1.0)
    w = r * np.exp(1j * (2 * np.pi * np.arange(d) / d + 0.4))[None, :]
    absc = np.abs(c)
    active = np.ones(B, dtype=bool)
    for _ in range(max_iter):
        p, dp = _horner(c[active], w[active])
        scale = _horner(absc[active], np.abs(w[active]).astype(complex))[0].real
        done = np.abs(p) <= tol * scale
        ok = np.all(done, axis=1)
        idx = np.flatnonzero(active)
        active[idx[ok]] = False
        if not np.any(active):
            return w
        keep = ~ok
        p, dp, wa = p[keep], dp[keep], w[active]
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = p / dp
            diff = wa[:, :, None] - wa[:, None, :]
            diff[:, np.arange(d), np.arange(d)] = np.inf
            s = np.sum(1.0 / diff, axis=2)
            step = newton / (1.0 - newton * s)
        step = np.where(np.isfinite(step), step, 0.0)
        step = np.where(done[keep], 0.0, step)
        w[active] = wa - step
    p, _ = _horner(c[active], w[active])
    raise ConvergenceError(
        f"Aberth iteration did not converge in {max_iter} iterations",
        residual=np.abs(p),
    )


def _trim(c: np.ndarray):
    """Split off roots at infinity and at zero; return ``(core, n_inf, n_zero)``."""
    big = np.max(np.abs(c)) if c.size else 0.0
    if big == 0:
        raise PreconditionError("zero polynomial: every w is a root")
    small = np.abs(c) <= LEAD_REL * big
    hi = c.size - 1
    while small[hi]:
        hi -= 1
    lo = 0
    while small[lo]:
        lo += 1
    return c[lo : hi + 1], c.size - 1 - hi, lo


def poly_roots(coeffs, tol_root: float = DEFAULT_TOL_ROOT, max_iter: int = MAX_ABERTH) -> RootSet:
    """Roots of an ascending coefficient sequence by Aberth-Ehrlich iteration.

    Negligible leading coefficients become roots at infinity and negligible
    trailing ones become exact zeros.
    """
    c = np.asarray(coeffs, dtype=complex)
    core, n_inf, n_zero = _trim(c)
    zeros = np.zeros(n_zero, dtype=complex)
    if core.size <= 1:
        return RootSet(zeros, n_inf)
    if core.size == 2:
        return RootSet(np.concatenate([zeros, [-core[0] / core[1]]]), n_inf)
    w = _aberth(core[None], tol_root, max_iter)[0]
    return RootSet(np.concatenate([zeros, w]), n_inf)


def poly_roots_batch(C, tol_root: float = DEFAULT_TOL_ROOT, max_iter: int = MAX_ABERTH) -> np.ndarray:
    """Root moduli-ready batch: rows of ``C`` to ``(B, n)`` roots, ``inf`` for deficits."""
    C = np.asarray(C, dtype=complex)
    B, m1 = C.shape
    n = m1 - 1
    out = np.full((B, n), np.inf + 0j)
    big = np.max(np.abs(C), axis=1, keepdims=True)
    small = np.abs(C) <= LEAD_REL * big
    regular = ~small[:, 0] & ~small[:, -1] & (big[:, 0] > 0)
    if n == 1:
        out[regular, 0] = -C[regular, 0] / C[regular, 1]
    elif np.any(regular):
        out[regular] = _aberth(C[regular], tol_root, max_iter)
    for b in np.flatnonzero(~regular):
        rs = poly_roots(C[b], tol_root, max_iter)
        out[b, : rs.roots.size] = rs.roots
    return out


def count_circle_roots(roots: np.ndarray, tol_circle: float = DEFAULT_TOL_CIRCLE) -> np.ndarray:
    """Per row: unit-circle root count, or -1 if a root sits in the guard band."""
    dist = np.abs(np.abs(roots) - 1.0)
    count = np.sum(dist <= tol_circle, axis=-1)
    amb = np.any((dist > tol_circle) & (dist <= 3.0 * tol_circle), axis=-1)
    return np.where(amb, -1, count)


def tangent_count(A, z: complex, tol_circle: float = DEFAULT_TOL_CIRCLE) -> int:
    N = int(tangent_count_batch(A, np.array([z]), tol_circle)[0])
    if N < 0:
        raise AmbiguousCountError(f"ambiguous: z = {z} is too close to the singular set")
    return N


def tangent_count_batch(A, zs, tol_circle: float = DEFAULT_TOL_CIRCLE) -> np.ndarray:
    zs = np.asarray(zs, dtype=complex)
    a = np.asarray(A, dtype=complex)
    C = delta_coeffs(a, zs.ravel())
    # D(., z) vanishes identically when z is a normal eigenvalue: every line through z is tangent
    ref = (np.linalg.norm(a) + np.abs(zs.ravel())) ** a.shape[0]
    null = np.max(np.abs(C), axis=1) <= 1e-13 * np.maximum(ref, 1e-300)
    roots = np.full((C.shape[0], a.shape[0]), np.inf + 0j)
    if np.any(~null):
        roots[~null] = poly_roots_batch(C[~null])
    N = count_circle_roots(roots, tol_circle)
    N[null] = -1
    return N.reshape(zs.shape)


def in_numerical_range(T: EigencurveTable, z, slack_rel: float = RANGE_SLACK_REL, refine: bool = True):
    """Support-line test ``Re(z e^{-i theta}) <= lambda_max(theta)`` for all angles.

    The sampled angles give an outer polygon.  Points whose sampled margin is
    within one grid step of zero are re-tested by maximizing the excess
    ``Re(z e^{-i theta}) - lambda_max(theta)`` with exact eigenvalues on the
    two grid steps around the worst sample (golden section).
    """
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    c, s = np.cos(T.thetas), np.sin(T.thetas)
    h = T.lambdas[:, -1]
    slack = slack_rel * T.scale
    out = np.empty(flat.size, dtype=bool)
    worst = np.empty(flat.size, dtype=int)
    margin = np.empty(flat.size)
    chunk = max(1, 2_000_000 // T.n_theta)
    for i in range(0, flat.size, chunk):
        zz = flat[i : i + chunk]
        excess = zz.real[:, None] * c[None] + zz.imag[:, None] * s[None] - h[None]
        k = np.argmax(excess, axis=1)
        worst[i : i + chunk] = k
        margin[i : i + chunk] = excess[np.arange(zz.size), k]
    out = margin <= slack
    dtheta = 2.0 * np.pi / T.n_theta
    if refine:
        cand = np.flatnonzero(out & (margin > -dtheta * (np.abs(flat) + T.scale)))
        if cand.size:
            best = _golden_excess(T, flat[cand], T.thetas[worst[cand]] - dtheta, T.thetas[worst[cand]] + dtheta)
            out[cand] = best <= slack
    return out.reshape(z.shape) if z.ndim else bool(out[0])


def _golden_excess(T: EigencurveTable, z: np.ndarray, lo: np.ndarray, hi: np.ndarray, iters: int = 40) -> np.ndarray:
    from .linalg import h_theta, hermitian_eigen_batch

    def excess(t):
        lam = hermitian_eigen_batch(h_theta(T.pencil, t))[0][:, -1]
        return z.real * np.cos(t) + z.imag * np.sin(t) - lam

    g = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = lo.copy(), hi.copy()
    x1 = b - g * (b - a)
    x2 = a + g * (b - a)
    f1, f2 = excess(x1), excess(x2)
    best = np.maximum(f1, f2)
    for _ in range(iters):
        left = f1 > f2
        # keep [a, x2] where f1 is larger, else [x1, b]
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = b - g * (b - a)
        x2n = a + g * (b - a)
        f_new1 = excess(np.where(left, x1n, x2n))
        f1n = np.where(left, f_new1, f2)
        f2n = np.where(left, f1, f_new1)
        x1, x2 = np.where(left, x1n, x2), np.where(left, x1, x2n)
        f1, f2 = f1n, f2n
        best = np.maximum(best, np.maximum(f1, f2))
    return best


@dataclass(frozen=True)
class RegionMap:
    grid: GridSpec
    n_tangents: np.ndarray
    inside_range: np.ndarray
    pi_mask: np.ndarray
    n: int
    interior: np.ndarray | None = None

    def components(self):
        """Label connected components of constant ``N`` and constant ``inside_range``.

        Bitangent segments on the boundary of the numerical range leave ``N``
        unchanged, so the support-line flag is needed to split the exterior
        from regions such as a triangle between a disk and its hull.  The
        strict interior flag is used when present, so lattice points lying
        exactly on the boundary of W(A) join the exterior.
        Returns ``(labels, values)`` where ``labels`` is 0 on ambiguous cells
        and ``values[k - 1]`` is the ``N`` of component ``k``.
        """
        labels = np.zeros(self.n_tangents.shape, dtype=int)
        inside = self.inside_range if self.interior is None else self.interior
        values = []
        for v in sorted(set(np.unique(self.n_tangents).tolist()) - {-1}):
            for ins in (False, True):
                lab, k = ndimage.label((self.n_tangents == v) & (inside == ins))
                labels[lab > 0] = lab[lab > 0] + len(values)
                values.extend([v] * k)
        return labels, values

    def component_at(self, z: complex) -> tuple[int, int]:
        """``(label, N)`` of the grid node nearest to ``z``."""
        labels, values = self.components()
        i = int(round((z.imag - self.grid.y0) / self.grid.dy))
        j = int(round((z.real - self.grid.x0) / self.grid.dx))
        lab = labels[i, j]
        return lab, (values[lab - 1] if lab > 0 else -1)

    def summary(self) -> dict:
        labels, values = self.components()
        cell = self.grid.dx * self.grid.dy
        areas = {}
        for v in sorted(set(values)):
            areas[str(v)] = float(np.sum(self.n_tangents == v) * cell)
        return {
            "n": self.n,
            "components": len(values),
            "components_by_N": {str(v): values.count(v) for v in sorted(set(values))},
            "area_by_N": areas,
            "ambiguous_cells": int(np.sum(self.n_tangents < 0)),
            "grid": self.grid.to_json(),
        }

    def export_csv(self, path):
        Z = self.grid.points()
        return write_csv(
            path,
            ["x", "y", "N", "inside", "pi"],
            [Z.real, Z.imag, self.n_tangents, self.inside_range, self.pi_mask],
        )

    def export_json(self, path):
        return write_json(path, self.summary())


def classify_grid(A, T: EigencurveTable, grid: GridSpec, tol_circle: float = DEFAULT_TOL_CIRCLE) -> RegionMap:
    a = np.asarray(A, dtype=complex)
    Z = grid.points()
    N = tangent_count_batch(a, Z, tol_circle)
    inside = in_numerical_range(T, Z)
    interior = in_numerical_range(T, Z, slack_rel=-RANGE_SLACK_REL)
    pi = N == a.shape[0]
    return RegionMap(grid, N, inside, pi, a.shape[0], interior)
