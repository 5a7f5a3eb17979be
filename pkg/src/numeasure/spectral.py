"""Eigenvalue curves of the pencil, the critical curve and crossing events.

Branches are labelled by ascending sort at every angle.  The antipodal
permutation needs analytic labels, so it is obtained by following the curves
through half a turn rather than read off at a single angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._io import write_csv
from .errors import CycleStructureError, PreconditionError
from .linalg import Pencil, h_theta, h_theta_prime, hermitian_eigen_batch, make_pencil

DEFAULT_N_THETA = 1024
TOL_CROSS_REL = 1e-7
CLUSTER_REL = 1e-10
TRACK_STEPS = 4096
POINT_COMPONENT_REL = 1e-8


@dataclass(frozen=True)
class Crossing:
    theta: float
    j: int
    p: int
    value: float


@dataclass(frozen=True)
class Segment:
    """Bitangent segment ``[z0, z1]`` created by the crossing at ``theta``."""

    theta: float
    z0: complex
    z1: complex

    @property
    def length(self) -> float:
        return abs(self.z1 - self.z0)


@dataclass(frozen=True)
class EigencurveTable:
    """Sorted eigenvalues and their angular derivatives on a uniform grid over ``[0, 2pi)``."""

    pencil: Pencil
    thetas: np.ndarray
    lambdas: np.ndarray
    dlambdas: np.ndarray
    crossings: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.lambdas.shape[1]

    @property
    def n_theta(self) -> int:
        return self.thetas.size

    @property
    def diameter(self) -> float:
        """Largest spread ``lambda_n - lambda_1`` over the sampled angles."""
        return float(np.max(self.lambdas[:, -1] - self.lambdas[:, 0]))

    @property
    def scale(self) -> float:
        return max(float(np.max(np.abs(self.lambdas))), 1e-300)

    def z(self) -> np.ndarray:
        """Critical points ``e^{i theta}(lambda_j + i lambda_j')``, shape ``(N_theta, n)``."""
        return np.exp(1j * self.thetas)[:, None] * (self.lambdas + 1j * self.dlambdas)


@dataclass(frozen=True)
class CriticalCloud:
    branch: np.ndarray
    theta: np.ndarray
    z: np.ndarray

    def __iter__(self):
        return iter(zip(self.branch.tolist(), self.theta.tolist(), self.z.tolist()))

    def __len__(self):
        return self.z.size


@dataclass(frozen=True)
class CycleStructure:
    tau: tuple
    cycles: tuple
    lengths: tuple
    multiplicities: tuple
    m: int
    theta0: float


def _as_pencil(P) -> Pencil:
    return P if isinstance(P, Pencil) else make_pencil(P)


def eigen_with_derivatives(P, thetas, cluster_rel: float = CLUSTER_REL):
    """Eigenvalues, Hellmann-Feynman derivatives and vectors at each angle.

    Inside a numerically degenerate cluster the eigenvectors are rotated to
    diagonalize the compressed derivative ``V* H'(theta) V``; the derivatives
    are then the one-sided ones, ascending inside the cluster.
    """
    P = _as_pencil(P)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    H = h_theta(P, thetas)
    w, v = hermitian_eigen_batch(H)
    Hp = h_theta_prime(P, thetas)
    M = np.conj(np.swapaxes(v, 1, 2)) @ Hp @ v
    dw = np.real(np.diagonal(M, axis1=1, axis2=2)).copy()
    scale = max(float(np.linalg.norm(P.a1) + np.linalg.norm(P.a2)), 1e-300)
    gaps = np.diff(w, axis=1)
    for b in np.flatnonzero(np.any(gaps <= cluster_rel * scale, axis=1)):
        start = 0
        for i in range(1, P.n + 1):
            if i < P.n and gaps[b, i - 1] <= cluster_rel * scale:
                continue
            if i - start > 1:
                sl = slice(start, i)
                sub = M[b, sl, sl]
                sub = 0.5 * (sub + sub.conj().T)
                mu, u = np.linalg.eigh(sub)
                dw[b, sl] = mu
                v[b, :, sl] = v[b, :, sl] @ u
                w[b, sl] = np.mean(w[b, sl])
            start = i
    return w, dw, v


def sample_curves(P, N_theta: int = DEFAULT_N_THETA, tol_cross: float | None = None) -> EigencurveTable:
    if N_theta < 64 or N_theta % 2:
        raise PreconditionError("N_theta must be even and at least 64")
    P = _as_pencil(P)
    thetas = 2.0 * np.pi * np.arange(N_theta) / N_theta
    w, dw, _ = eigen_with_derivatives(P, thetas)
    for a in (thetas, w, dw):
        a.setflags(write=False)
    T = EigencurveTable(P, thetas, w, dw)
    crossings, _ = detect_crossings(T, tol_cross)
    return EigencurveTable(P, thetas, w, dw, tuple(crossings))


def critical_points(T: EigencurveTable) -> CriticalCloud:
    z = T.z()
    N, n = z.shape
    branch = np.tile(np.arange(n), N)
    theta = np.repeat(T.thetas, n)
    return CriticalCloud(branch, theta, z.ravel())


def _identical_pairs(T: EigencurveTable, tol: float) -> np.ndarray:
    """Adjacent sorted pairs whose gap never exceeds ``tol`` (a repeated branch)."""
    return np.all(np.diff(T.lambdas, axis=1) <= tol, axis=0)


def detect_crossings(T: EigencurveTable, tol_cross: float | None = None):
    """Crossings of adjacent sorted branches and the bitangent segments they create.

    Returns ``(crossings, segments)``; segments are deduplicated modulo the
    antipodal symmetry, which maps each crossing at ``theta`` to one at
    ``theta + pi`` with the same endpoints.
    """
    diam = T.diameter
    if diam <= 0:
        return [], []
    tol = TOL_CROSS_REL * diam if tol_cross is None else float(tol_cross)
    gaps = np.diff(T.lambdas, axis=1)
    slopes = np.abs(np.diff(T.dlambdas, axis=1))
    same = _identical_pairs(T, tol)
    h = T.thetas[1] - T.thetas[0]
    N = T.n_theta
    cand = []
    for j in np.flatnonzero(~same):
        g = gaps[:, j]
        prev, nxt = np.roll(g, 1), np.roll(g, -1)
        mins = np.flatnonzero((g <= prev) & (g <= nxt) & (g <= 2.0 * h * (slopes[:, j] + np.roll(slopes[:, j], 1) + np.roll(slopes[:, j], -1)) + tol))
        cand.extend((int(k), int(j)) for k in mins)
    if not cand:
        return [], []
    ks = np.array([c[0] for c in cand])
    js = np.array([c[1] for c in cand])
    lo = T.thetas[0] + (ks - 1) * h
    hi = T.thetas[0] + (ks + 1) * h
    thetas = _bisect_gap_minimum(T.pencil, js, lo, hi)
    w, dw, _ = eigen_with_derivatives(T.pencil, thetas)
    crossings, segments = [], []
    for i, (th, j) in enumerate(zip(thetas, js)):
        gap = w[i, j + 1] - w[i, j]
        if gap > tol:
            continue
        th = float(np.mod(th, 2 * np.pi))
        crossings.append(Crossing(th, int(j), int(j + 1), float(0.5 * (w[i, j] + w[i, j + 1]))))
        e = np.exp(1j * thetas[i])
        z0 = complex(e * (w[i, j] + 1j * dw[i, j]))
        z1 = complex(e * (w[i, j + 1] + 1j * dw[i, j + 1]))
        segments.append(Segment(th, z0, z1))
    crossings = _dedupe_crossings(crossings, 1e-9)
    segments = _dedupe_segments(segments, 1e-8 * max(T.scale, 1.0))
    return crossings, segments


def _bisect_gap_minimum(P, js, lo, hi, tol_theta: float = 1e-12, max_iter: int = 80):
    """Locate the gap minimum of each adjacent pair ``(j, j+1)`` in ``[lo, hi]``.

    Bisects on the sign of the gap derivative ``lambda'_{j+1} - lambda'_j``;
    every candidate is refined in the same batched eigen solve.
    """
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    idx = np.arange(js.size)
    for _ in range(max_iter):
        if np.all(hi - lo <= tol_theta):
            break
        mid = 0.5 * (lo + hi)
        w, dw, _ = eigen_with_derivatives(P, mid)
        slope = dw[idx, js + 1] - dw[idx, js]
        gap = w[idx, js + 1] - w[idx, js]
        # at an exact crossing the one-sided slope is ambiguous; the gap is already ~0
        right = (slope > 0) | (gap <= 0)
        hi = np.where(right, mid, hi)
        lo = np.where(right, lo, mid)
    return 0.5 * (lo + hi)


def _dedupe_crossings(cr, tol):
    out = []
    for c in sorted(cr, key=lambda c: (c.theta, c.j)):
        if not any(abs(c.theta - o.theta) < tol and c.j == o.j for o in out):
            out.append(c)
    return out


def _dedupe_segments(segs, tol):
    out = []
    for s in sorted(segs, key=lambda s: s.theta):
        dup = False
        for o in out:
            if (abs(s.z0 - o.z0) < tol and abs(s.z1 - o.z1) < tol) or (abs(s.z0 - o.z1) < tol and abs(s.z1 - o.z0) < tol):
                dup = True
                break
        if not dup:
            out.append(s)
    return out


def _clusters(values: np.ndarray, same: np.ndarray):
    """Group sorted indices into runs joined by identical-branch pairs."""
    labels = np.zeros(values.size, dtype=int)
    for i in range(1, values.size):
        labels[i] = labels[i - 1] + (0 if same[i - 1] else 1)
    return labels


def cycle_structure(T: EigencurveTable, tol_match: float | None = None, track_steps: int = TRACK_STEPS) -> CycleStructure:
    """Permutation ``tau`` with ``lambda_{tau(j)}(theta) = -lambda_j(theta + pi)``.

    Branches are followed analytically from a crossing-free ``theta0`` to
    ``theta0 + pi``; each step matches predicted values ``lambda + h lambda'``
    against the new eigenvalues by a linear assignment.
    """
    diam = T.diameter
    if diam <= 0:
        raise CycleStructureError("cycle structure undetermined: scalar pencil")
    tol = TOL_CROSS_REL * diam if tol_match is None else float(tol_match)
    same = _identical_pairs(T, tol)
    gaps = np.diff(T.lambdas, axis=1)
    n = T.n
    if np.all(same):
        k0 = 0
    else:
        mingap = np.min(np.where(same[None, :], np.inf, gaps), axis=1)
        k0 = int(np.argmax(mingap))
        if mingap[k0] <= tol:
            raise CycleStructureError("cycle structure undetermined: no crossing-free angle")
    theta0 = float(T.thetas[k0])
    labels = _clusters(T.lambdas[k0], same)
    m = int(labels[-1]) + 1

    path = theta0 + np.pi * np.arange(track_steps + 1) / track_steps
    h = np.pi / track_steps
    w, dw, _ = eigen_with_derivatives(T.pencil, path)
    slot_val = w[0].copy()
    slot_der = dw[0].copy()
    where = np.arange(n)  # sorted index currently held by each slot
    for t in range(1, track_steps + 1):
        pred = slot_val + h * slot_der
        cost = np.abs(pred[:, None] - w[t][None, :]) + h * np.abs(slot_der[:, None] - dw[t][None, :])
        _, col = linear_sum_assignment(cost)
        where = col
        slot_val = w[t][col]
        slot_der = dw[t][col]

    # slot started at sorted index j; -lambda(theta0 + pi) reverses the sort
    tau_idx = n - 1 - where
    tau = {}
    for j in range(n):
        a, b = int(labels[j]), int(labels[tau_idx[j]])
        if tau.setdefault(a, b) != b:
            raise CycleStructureError("cycle structure undetermined: inconsistent tracking")
    if sorted(tau.values()) != list(range(m)):
        raise CycleStructureError("cycle structure undetermined: tracked map is not a bijection")
    mult = np.bincount(labels, minlength=m)
    seen, cycles = set(), []
    for s in range(m):
        if s in seen:
            continue
        cyc, c = [], s
        while c not in seen:
            seen.add(c)
            cyc.append(c)
            c = tau[c]
        cycles.append(tuple(cyc))
    lengths = tuple(len(c) for c in cycles)
    mults = tuple(int(mult[c[0]]) for c in cycles)
    if sum(lengths) != m or sum(l * mm for l, mm in zip(lengths, mults)) != n:
        raise CycleStructureError("cycle structure undetermined: multiplicities do not add up")
    return CycleStructure(tuple(tau[i] for i in range(m)), tuple(cycles), lengths, mults, m, theta0)


def support_function(T: EigencurveTable, theta):
    """Largest eigenvalue of ``H(theta)``, linearly interpolated between samples."""
    return np.interp(np.mod(theta, 2 * np.pi), T.thetas, T.lambdas[:, -1], period=2 * np.pi)


def cusp_points(T: EigencurveTable, j: int, theta_max: float = np.pi) -> np.ndarray:
    """Points of branch ``j`` where ``lambda_j + lambda_j''`` changes sign.

    ``lambda''`` is a central difference of the Hellmann-Feynman derivative;
    the crossing angle and the point itself are linearly interpolated.
    """
    h = T.thetas[1] - T.thetas[0]
    lam = T.lambdas[:, j]
    d2 = (np.roll(T.dlambdas[:, j], -1) - np.roll(T.dlambdas[:, j], 1)) / (2 * h)
    g = lam + d2
    z = T.z()[:, j]
    out = []
    for k in range(T.n_theta):
        k1 = (k + 1) % T.n_theta
        if T.thetas[k] >= theta_max:
            break
        if g[k] == 0 or g[k] * g[k1] < 0:
            t = g[k] / (g[k] - g[k1]) if g[k] != g[k1] else 0.0
            out.append(z[k] + t * (z[k1] - z[k]))
    return np.array(out, dtype=complex)


def point_components(T: EigencurveTable, rel: float = POINT_COMPONENT_REL, min_fraction: float = 0.25):
    """Critical points that recur at a positive fraction of the sampled angles.

    A normal eigenvalue ``mu`` gives ``e^{i theta}(lambda + i lambda') = mu``
    for every angle; which sorted branch carries it changes at crossings, so
    the points are clustered over all branches.  Returns ``(z, count)`` pairs.
    """
    z = T.z().ravel()
    q = max(T.scale, 1.0) * rel
    keys = np.round(z.real / q).astype(np.int64) + 1j * np.round(z.imag / q).astype(np.int64)
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    out = []
    for k in np.flatnonzero(counts >= min_fraction * T.n_theta):
        out.append((complex(z[inv == k].mean()), int(counts[k])))
    return sorted(out, key=lambda p: (p[0].real, p[0].imag))


def collinearity_residual(T: EigencurveTable) -> float:
    """Largest distance of the critical points from their best-fit line."""
    pts = T.z().ravel()
    xy = np.column_stack([pts.real, pts.imag])
    xy = xy - xy.mean(axis=0)
    _, _, vt = np.linalg.svd(xy, full_matrices=False)
    normal = vt[-1]
    return float(np.max(np.abs(xy @ normal)))


def export_curves_csv(T: EigencurveTable, path):
    n = T.n
    header = ["theta"] + [f"lambda{j + 1}" for j in range(n)] + [f"dlambda{j + 1}" for j in range(n)]
    cols = [T.thetas] + [T.lambdas[:, j] for j in range(n)] + [T.dlambdas[:, j] for j in range(n)]
    return write_csv(path, header, cols)


def export_critical_csv(cloud: CriticalCloud, path):
    return write_csv(path, ["x", "y", "branch"], [cloud.z.real, cloud.z.imag, cloud.branch])


def export_segments_csv(segments, path):
    return write_csv(
        path,
        ["theta", "x0", "y0", "x1", "y1"],
        [
            np.array([s.theta for s in segments]),
            np.array([s.z0.real for s in segments]),
            np.array([s.z0.imag for s in segments]),
            np.array([s.z1.real for s in segments]),
            np.array([s.z1.imag for s in segments]),
        ],
    )
