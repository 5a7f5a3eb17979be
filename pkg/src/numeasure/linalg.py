"""Dense complex matrices, the Hermitian pencil and a Jacobi eigensolver."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, PreconditionError

DEFAULT_TOL_EIG = 1e-12
MAX_SWEEPS = 60


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SquareMatrix:
    """An ``n x n`` complex matrix ``A`` whose numerical measure is studied."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise PreconditionError(f"expected a nonempty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise PreconditionError("matrix entries must be finite")
        object.__setattr__(self, "entries", _frozen(a))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def adjoint(self) -> np.ndarray:
        return self.entries.conj().T

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "entries": [[[float(v.real), float(v.imag)] for v in row] for row in self.entries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SquareMatrix":
        """Parse ``{"n", "entries"}`` (pairs) or ``{"n", "real_entries"}``."""
        if not isinstance(obj, dict) or "n" not in obj:
            raise PreconditionError("matrix JSON must be an object with an 'n' field")
        n = obj["n"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise PreconditionError("'n' must be a positive integer")
        if "entries" in obj:
            rows = obj["entries"]
            try:
                a = np.array([[complex(re, im) for re, im in row] for row in rows])
            except (TypeError, ValueError) as exc:
                raise PreconditionError(f"bad complex entry: {exc}") from exc
        elif "real_entries" in obj:
            try:
                a = np.array(obj["real_entries"], dtype=float).astype(complex)
            except (TypeError, ValueError) as exc:
                raise PreconditionError(f"bad real entry: {exc}") from exc
        else:
            raise PreconditionError("matrix JSON needs 'entries' or 'real_entries'")
        if a.shape != (n, n):
            raise PreconditionError(f"declared n={n} but entries have shape {a.shape}")
        return cls(a)

    @classmethod
    def load(cls, path: str | Path) -> "SquareMatrix":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise PreconditionError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_json(obj)


@dataclass(frozen=True)
class Pencil:
    """Hermitian parts ``a1 = (A + A*)/2`` and ``a2 = (A - A*)/(2i)``."""

    a1: np.ndarray
    a2: np.ndarray

    @property
    def n(self) -> int:
        return self.a1.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.a1 + 1j * self.a2


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray


def _hermitize(m: np.ndarray) -> np.ndarray:
    # average conjugate pairs, then force an exactly real diagonal
    h = 0.5 * (m + m.conj().T)
    upper = np.triu(h, 1)
    h = upper + upper.conj().T + np.diag(np.real(np.diag(h)))
    return h


def make_pencil(A: SquareMatrix | np.ndarray) -> Pencil:
    a = np.asarray(A, dtype=complex)
    a1 = _hermitize(0.5 * (a + a.conj().T))
    a2 = _hermitize((a - a.conj().T) / 2j)
    return Pencil(_frozen(a1), _frozen(a2))


def h_theta(P: Pencil, theta):
    """``H(theta) = a1 cos(theta) + a2 sin(theta)``; vectorized over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)[..., None, None]
    s = np.sin(theta)[..., None, None]
    return c * P.a1 + s * P.a2


def h_theta_prime(P: Pencil, theta):
    theta = np.asarray(theta, dtype=float)
    c = np.cos(theta)[..., None, None]
    s = np.sin(theta)[..., None, None]
    return -s * P.a1 + c * P.a2


def _jacobi_batch(H: np.ndarray, tol: float):
    """Cyclic complex Jacobi on a stack ``(B, n, n)`` of Hermitian matrices."""
    a = np.array(H, dtype=np.complex128, copy=True)
    nb, n, _ = a.shape
    v = np.broadcast_to(np.eye(n, dtype=complex), a.shape).copy()
    scale = np.linalg.norm(a, axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    iu = np.triu_indices(n, 1)

    def off(a):
        return np.sqrt(2.0 * np.sum(np.abs(a[:, iu[0], iu[1]]) ** 2, axis=1))

    polish = 1  # one extra sweep after the test passes; convergence is quadratic
    for _ in range(MAX_SWEEPS):
        if np.all(off(a) <= tol * scale):
            if polish == 0:
                break
            polish -= 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                mag = np.abs(apq)
                active = mag > 1e-300
                if not np.any(active):
                    continue
                app = a[:, p, p].real
                aqq = a[:, q, q].real
                safe = np.where(active, mag, 1.0)
                tau = (aqq - app) / (2.0 * safe)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                e = np.where(active, apq / safe, 1.0)
                c = np.where(active, c, 1.0)
                s = np.where(active, s, 0.0)
                cc = c[:, None]
                se = (s * e)[:, None]
                sec = (s * e.conj())[:, None]
                # A <- A J  (columns)
                colp = a[:, :, p].copy()
                colq = a[:, :, q]
                a[:, :, p] = cc * colp - sec * colq
                a[:, :, q] = se * colp + cc * colq
                # A <- J^H A  (rows)
                rowp = a[:, p, :].copy()
                rowq = a[:, q, :]
                a[:, p, :] = cc * rowp - se * rowq
                a[:, q, :] = sec * rowp + cc * rowq
                a[:, p, q] = np.where(active, 0.0, a[:, p, q])
                a[:, q, p] = np.where(active, 0.0, a[:, q, p])
                a[:, p, p] = a[:, p, p].real
                a[:, q, q] = a[:, q, q].real
                vp = v[:, :, p].copy()
                vq = v[:, :, q]
                v[:, :, p] = cc * vp - sec * vq
                v[:, :, q] = se * vp + cc * vq
    else:
        res = off(a) / scale
        if np.any(res > tol):
            raise ConvergenceError(
                f"Jacobi did not converge in {MAX_SWEEPS} sweeps (max rel. off-diagonal {res.max():.3e})",
                residual=float(res.max()),
            )
    w = np.real(np.diagonal(a, axis1=1, axis2=2))
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v


def hermitian_eigen_batch(H, tol_eig: float = DEFAULT_TOL_EIG):
    """Eigen-decompose a stack of Hermitian matrices; values ascending per matrix."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 3 or H.shape[1] != H.shape[2]:
        raise PreconditionError(f"expected a (B, n, n) stack, got {H.shape}")
    fro = np.linalg.norm(H, axis=(1, 2))
    skew = np.linalg.norm(H - np.conj(np.swapaxes(H, 1, 2)), axis=(1, 2))
    if np.any(skew > tol_eig * np.maximum(fro, 1e-300) + 1e-300):
        raise PreconditionError("matrix is not Hermitian within tolerance")
    return _jacobi_batch(H, tol_eig)


def hermitian_eigen(H, tol_eig: float = DEFAULT_TOL_EIG) -> EigenDecomposition:
    w, v = hermitian_eigen_batch(np.asarray(H, dtype=complex)[None], tol_eig)
    return EigenDecomposition(w[0], v[0])


def numerical_map(A: SquareMatrix | np.ndarray, x) -> complex:
    """``<Ax, x> = x* A x`` for a unit vector ``x``."""
    x = np.asarray(x, dtype=complex)
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise PreconditionError("numerical_map needs a unit vector")
    a = np.asarray(A, dtype=complex)
    return complex(np.vdot(x, a @ x))


def quadratic_forms(A: SquareMatrix | np.ndarray, X: np.ndarray) -> np.ndarray:
    """Row-wise ``<A x, x>`` for the rows ``x`` of ``X``; uses the sparsity of ``A``."""
    a = np.asarray(A, dtype=complex)
    n = a.shape[0]
    rows, cols = np.nonzero(a)
    if len(rows) <= n * n // 4:
        out = np.zeros(X.shape[0], dtype=complex)
        for i, j in zip(rows, cols):
            out += a[i, j] * X[:, i].conj() * X[:, j]
        return out
    return np.einsum("bi,bi->b", X.conj(), X @ a.T)


@dataclass(frozen=True)
class MatrixStats:
    trace: complex
    frobenius_sq: float
    trace_A_squared: complex
    is_normal: bool


def matrix_stats(A: SquareMatrix | np.ndarray) -> MatrixStats:
    a = np.asarray(A, dtype=complex)
    fro2 = float(np.sum(np.abs(a) ** 2))
    comm = a @ a.conj().T - a.conj().T @ a
    return MatrixStats(
        trace=complex(np.trace(a)),
        frobenius_sq=fro2,
        trace_A_squared=complex(np.trace(a @ a)),
        is_normal=bool(np.linalg.norm(comm) <= 1e-10 * fro2),
    )


def spectral_scale(A: SquareMatrix | np.ndarray) -> float:
    """A length scale for tolerances: Frobenius norm, floored at 1e-300."""
    return max(float(np.linalg.norm(np.asarray(A))), 1e-300)
