"""Univariate normalized B-splines and the Hilbert transform of their derivative.

The spline with knots ``l_1 <= ... <= l_n`` is

    B(x) = (n - 1) * dd[l_1, ..., l_n] (. - x)_+^(n-2),

a probability density of degree ``n - 2`` supported on ``[l_1, l_n]``.  Pieces
are stored in local monomial form anchored at each interval's left knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import NearKnotError, PreconditionError

SEP_MIN_REL = 1e-9
KNOT_GUARD_REL = 1e-7
PV_HALF_WIDTH = 1e-4
_SERIES_TERMS = 48


@dataclass(frozen=True)
class KnotVector:
    """Sorted knots, separated by at least ``sep_min`` after regularization."""

    knots: np.ndarray
    sep_min: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 2:
            raise PreconditionError("a knot vector needs at least two knots")
        if not np.all(np.isfinite(k)):
            raise PreconditionError("knots must be finite")
        if np.any(np.diff(k) < 0):
            raise PreconditionError("knots must be sorted ascending")
        if k[-1] - k[0] <= 0:
            raise PreconditionError("knots are all equal (point mass, no density)")
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def n(self) -> int:
        return self.knots.size

    @property
    def width(self) -> float:
        return float(self.knots[-1] - self.knots[0])

    @property
    def guard(self) -> float:
        return KNOT_GUARD_REL * self.width

    @classmethod
    def regularized(cls, values, sep_min_rel: float = SEP_MIN_REL) -> "KnotVector":
        """Sort ``values`` and spread clusters closer than ``sep_min`` apart."""
        k = np.sort(np.asarray(values, dtype=float))
        width = k[-1] - k[0] if k.size else 0.0
        if k.size < 2 or width <= 0:
            raise PreconditionError("knots are all equal (point mass, no density)")
        sep = sep_min_rel * width
        k = _spread(k, sep)
        return cls(k, sep)


def _spread(k: np.ndarray, sep: float) -> np.ndarray:
    k = k.copy()
    for _ in range(k.size):
        gaps = np.diff(k)
        if np.all(gaps >= sep * (1 - 1e-12)):
            break
        i = 0
        while i < k.size - 1:
            if k[i + 1] - k[i] < sep * (1 - 1e-12):
                j = i + 1
                while j < k.size - 1 and k[j + 1] - k[j] < sep * (1 - 1e-12):
                    j += 1
                run = k[i : j + 1]
                r = run.size
                centre = run.mean()
                k[i : j + 1] = centre + sep * (np.arange(r) - (r - 1) / 2)
                i = j + 1
            else:
                i += 1
    return k


@dataclass(frozen=True)
class PiecewisePoly:
    """Piecewise polynomial in local monomials plus optional Dirac atoms.

    ``coefficients[i][m]`` multiplies ``(x - breakpoints[i])**m`` on
    ``[breakpoints[i], breakpoints[i + 1])``.
    """

    breakpoints: np.ndarray
    coefficients: tuple
    dirac_atoms: tuple = field(default=())

    @property
    def degree(self) -> int:
        if not self.coefficients:
            return -1
        return max(len(c) for c in self.coefficients) - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        bp = self.breakpoints
        idx = np.searchsorted(bp, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.coefficients))
        for i, c in enumerate(self.coefficients):
            sel = inside & (idx == i)
            if np.any(sel):
                out[sel] = np.polynomial.polynomial.polyval(x[sel] - bp[i], c)
        return out if out.ndim else float(out)

    def integral(self) -> float:
        total = 0.0
        for i, c in enumerate(self.coefficients):
            L = self.breakpoints[i + 1] - self.breakpoints[i]
            total += sum(cm * L ** (m + 1) / (m + 1) for m, cm in enumerate(c))
        return total + sum(w for _, w in self.dirac_atoms)


def divided_difference(knots, g_values) -> float:
    """``sum_j g(l_j) / prod_{k != j} (l_j - l_k)`` for pairwise distinct knots."""
    lam = np.asarray(knots.knots if isinstance(knots, KnotVector) else knots, dtype=float)
    g = np.asarray(g_values, dtype=float)
    if lam.shape != g.shape:
        raise PreconditionError("need one function value per knot")
    diff = lam[:, None] - lam[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0):
        raise PreconditionError("duplicate knots: regularize before taking divided differences")
    return float(np.sum(g / np.prod(diff, axis=1)))


def _weights(lam: np.ndarray) -> np.ndarray:
    diff = lam[:, None] - lam[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def bspline_build(knots: KnotVector) -> PiecewisePoly:
    lam = knots.knots
    n = lam.size
    if n == 2:
        h = 1.0 / (lam[1] - lam[0])
        return PiecewisePoly(lam.copy(), (np.array([h]),))
    d = n - 2
    c = _weights(lam)
    binom = np.array([comb(d, m) for m in range(d + 1)], dtype=float)
    signs = (-1.0) ** np.arange(d + 1)
    pieces = []
    for i in range(n - 1):
        # sum over j > i equals minus the sum over j <= i; take the shorter one
        js = range(i + 1, n) if n - 1 - i <= i + 1 else range(0, i + 1)
        sgn = 1.0 if n - 1 - i <= i + 1 else -1.0
        coef = np.zeros(d + 1)
        for j in js:
            D = lam[j] - lam[i]
            coef += c[j] * binom * D ** (d - np.arange(d + 1)) * signs
        pieces.append((n - 1) * sgn * coef)
    return PiecewisePoly(lam.copy(), tuple(pieces))


def bspline_derivative(B: PiecewisePoly) -> PiecewisePoly:
    if B.degree == 0 and len(B.coefficients) == 1:
        # indicator 1/(b - a) on [a, b]: jumps become atoms
        a, b = B.breakpoints[0], B.breakpoints[-1]
        h = float(B.coefficients[0][0])
        return PiecewisePoly(B.breakpoints, (), ((float(a), h), (float(b), -h)))
    pieces = tuple(np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1) for c in B.coefficients)
    return PiecewisePoly(B.breakpoints, pieces)


def _shift_moments(c: np.ndarray, L: float, terms: int) -> np.ndarray:
    """``M_r = int_{-L/2}^{L/2} v^r p(v + L/2) dv`` for ``r < terms``."""
    # re-centre p at the interval midpoint
    half = 0.5 * L
    m = len(c)
    centred = np.zeros(m)
    for k in range(m):
        for j in range(k, m):
            centred[k] += c[j] * comb(j, k) * half ** (j - k)
    M = np.zeros(terms)
    for r in range(terms):
        s = 0.0
        for k, ck in enumerate(centred):
            e = r + k + 1
            if e % 2 == 1:
                s += ck * 2.0 * half**e / e
        M[r] = s
    return M


def _piece_hilbert(c: np.ndarray, a: float, b: float, s: np.ndarray) -> np.ndarray:
    """``int_a^b p(t) / (s - t) dt`` for the local polynomial ``p``; no ``1/pi``."""
    L = b - a
    out = np.empty_like(s)
    rho = s - (a + 0.5 * L)
    far = np.abs(rho) >= 2.0 * L
    if np.any(far):
        M = _shift_moments(c, L, _SERIES_TERMS)
        r = rho[far]
        # sum_r M_r / rho^(r+1), Horner in 1/rho
        inv = 1.0 / r
        acc = np.zeros_like(r)
        for k in range(_SERIES_TERMS - 1, -1, -1):
            acc = acc * inv + M[k]
        out[far] = acc * inv
    near = ~far
    if np.any(near):
        sig = s[near] - a
        p_at = np.polynomial.polynomial.polyval(sig, c)
        with np.errstate(divide="ignore"):
            logs = np.log(np.abs(sig)) - np.log(np.abs(sig - L))
        # sum_m d_m sum_{k<m} sig^(m-1-k) L^(k+1)/(k+1)
        poly_part = np.zeros_like(sig)
        for m in range(1, len(c)):
            inner = np.zeros_like(sig)
            for k in range(m):
                inner += sig ** (m - 1 - k) * L ** (k + 1) / (k + 1)
            poly_part += c[m] * inner
        out[near] = p_at * logs - poly_part
    return out


def hilbert_of_derivative_raw(knots: KnotVector, s, dB: PiecewisePoly | None = None):
    """Closed-form ``(H B')(s)`` with no guard check; ``s`` may be an array."""
    if dB is None:
        dB = bspline_derivative(bspline_build(knots))
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s).astype(float)
    total = np.zeros_like(flat)
    for loc, w in dB.dirac_atoms:
        total += w / (flat - loc)
    bp = dB.breakpoints
    for i, c in enumerate(dB.coefficients):
        if np.any(c != 0):
            total += _piece_hilbert(np.asarray(c, float), bp[i], bp[i + 1], flat)
    total /= np.pi
    return total.reshape(s.shape) if s.ndim else float(total[0])


def near_knot_mask(knots: KnotVector, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    d = np.min(np.abs(s[..., None] - knots.knots), axis=-1)
    return d <= knots.guard


def hilbert_of_derivative(knots: KnotVector, s):
    """``(H B')(s) = (1/pi) p.v. int B'(t) / (s - t) dt`` off the knots.

    Raises ``NearKnotError`` when any ``s`` lies within ``knot_guard`` of a
    knot; use :func:`hilbert_of_derivative_guarded` to fall back to quadrature.
    """
    if np.any(near_knot_mask(knots, s)):
        raise NearKnotError("near-knot evaluation: closed form is unreliable inside the guard band")
    return hilbert_of_derivative_raw(knots, s)


def hilbert_of_derivative_guarded(knots: KnotVector, s, dB: PiecewisePoly | None = None):
    if dB is None:
        dB = bspline_derivative(bspline_build(knots))
    s = np.asarray(s, dtype=float)
    out = np.atleast_1d(hilbert_of_derivative_raw(knots, s, dB)).astype(float)
    flat_s = np.atleast_1d(s)
    near = near_knot_mask(knots, flat_s)
    for idx in np.flatnonzero(near.ravel()):
        out.flat[idx] = pv_hilbert_subtracted(dB, float(flat_s.flat[idx]))
    return out.reshape(s.shape) if s.ndim else float(out[0])


def _simpson(f, a: float, b: float, m: int) -> float:
    if b <= a:
        return 0.0
    m += m % 2
    t = np.linspace(a, b, m + 1)
    y = f(t)
    h = (b - a) / m
    return h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())


def pv_hilbert_quadrature(dB: PiecewisePoly, s: float, half_width: float = PV_HALF_WIDTH, panels: int = 400) -> float:
    """Principal value by symmetric exclusion of ``[s - h, s + h]`` and Simpson panels.

    Panels are graded geometrically towards the excluded window, and the
    first-order Taylor term of the excluded part is restored.
    """
    total = 0.0
    for loc, w in dB.dirac_atoms:
        total += w / (s - loc)
    bp = dB.breakpoints
    for i, c in enumerate(dB.coefficients):
        a, b = float(bp[i]), float(bp[i + 1])
        if b <= a or not np.any(c):
            continue

        def f(t, c=c, a=a):
            return np.polynomial.polynomial.polyval(t - a, c) / (s - t)

        for lo, hi in _excise(a, b, s - half_width, s + half_width):
            total += _graded_simpson(f, lo, hi, s, panels)
        if a < s < b:
            dc = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)
            lo, hi = max(a, s - half_width), min(b, s + half_width)
            # int_{lo}^{hi} p'(s)(t - s)/(s - t) dt for the part actually excluded
            total += -float(np.polynomial.polynomial.polyval(s - a, dc)) * (hi - lo)
    return total / np.pi


def _ts_rule(h: float = 1.0 / 16.0, t_max: float = 3.5):
    t = np.arange(-t_max, t_max + 0.5 * h, h)
    e = np.exp(np.pi * np.sinh(t))
    u = 1.0 / (1.0 + e)
    return u, u * (1.0 - u) * np.pi * np.cosh(t) * h


_TS_U, _TS_W = _ts_rule()


def pv_hilbert_subtracted(dB: PiecewisePoly, s: float) -> float:
    """Principal value with the value at ``s`` subtracted.

    ``p.v. int p(t)/(s - t) dt = int (p(t) - p(s))/(s - t) dt + p(s) log|(s - a)/(s - b)|``
    over the support ``[a, b]``; the remaining integrand is bounded except for
    a logarithm at a knot next to ``s``, which tanh-sinh nodes per piece absorb.
    Valid arbitrarily close to a knot, hence the near-knot fallback.
    """
    total = 0.0
    for loc, w in dB.dirac_atoms:
        total += w / (s - loc)
    bp = dB.breakpoints
    if not dB.coefficients:
        return total / np.pi
    ps = float(dB(np.array([s]))[0])
    a0, b0 = float(bp[0]), float(bp[len(dB.coefficients)])
    if ps != 0.0:
        total += ps * np.log(abs((s - a0) / (s - b0)))
    for i, c in enumerate(dB.coefficients):
        a, b = float(bp[i]), float(bp[i + 1])
        if b <= a:
            continue
        cuts = [a, s, b] if a < s < b else [a, b]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            t = lo + (hi - lo) * _TS_U
            with np.errstate(divide="ignore", invalid="ignore"):
                g = (np.polynomial.polynomial.polyval(t - a, c) - ps) / (s - t)
            total += (hi - lo) * float(np.sum(_TS_W * np.where(np.isfinite(g), g, 0.0)))
    return total / np.pi


def _excise(a, b, lo, hi):
    if hi <= a or lo >= b:
        return [(a, b)]
    out = []
    if lo > a:
        out.append((a, lo))
    if hi < b:
        out.append((hi, b))
    return out


def _graded_simpson(f, a, b, s, panels):
    # split into geometric sub-intervals measured from the singular point s
    d_near = min(abs(a - s), abs(b - s))
    d_far = max(abs(a - s), abs(b - s))
    if d_near <= 0 or d_far / d_near < 4:
        return _simpson(f, a, b, panels)
    edges = np.geomspace(d_near, d_far, 24)
    pts = s + edges if a >= s else s - edges[::-1]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += _simpson(f, lo, hi, max(panels // 24, 8))
    return total


def hilbert_of_derivative_batch(knots, s) -> np.ndarray:
    """``(H B')(s_m)`` for a stack of knot vectors ``knots[m]`` (pairwise distinct).

    Uses ``B'(t) = -(n-1)(n-2) sum_j c_j (l_j - t)_+^(n-3)`` on ``[l_1, l_n]``
    with ``c_j = 1 / prod_{k != j}(l_j - l_k)``, integrated from ``l_1`` in
    closed form.  Suited to small ``n``; the piecewise route is the
    well-conditioned one for many or clustered knots.
    """
    lam = np.asarray(knots, dtype=float)
    s = np.asarray(s, dtype=float)
    M, n = lam.shape
    if n == 2:
        h = 1.0 / (lam[:, 1] - lam[:, 0])
        with np.errstate(divide="ignore"):
            return h * (1.0 / (s - lam[:, 0]) - 1.0 / (s - lam[:, 1])) / np.pi
    m = n - 3
    diff = lam[:, :, None] - lam[:, None, :]
    diff[:, np.arange(n), np.arange(n)] = 1.0
    c = 1.0 / np.prod(diff, axis=2)
    d = s[:, None] - lam
    U = lam - lam[:, :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(np.abs(s - lam[:, 0]))[:, None] - np.log(np.abs(d))
        integral = (-d) ** m * logs
        for k in range(m):
            integral = integral + (-d) ** (m - 1 - k) * U ** (k + 1) / (k + 1)
        # the j = 1 term has zero length
        integral[:, 0] = 0.0
        # s on a knot gives inf - inf = nan; callers flag those nodes
        return -(n - 1) * (n - 2) * np.sum(c * integral, axis=1) / np.pi
