"""Monte Carlo sampling of the numerical measure, exact moments, CLT and concentration.

Random vectors are uniform on the unit sphere of C^n: ``2n`` standard normal
reals (Box-Muller on Philox uniforms) normalized.  Each batch of
``BATCH_ROWS`` draws has its own counter-based stream keyed by
``(seed, batch index)``, so the sample sequence does not depend on how the
batches are scheduled across threads.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from ._io import write_csv, write_json
from .errors import PreconditionError
from .linalg import hermitian_eigen, matrix_stats, quadratic_forms

BATCH_ROWS = 4096
DEGENERATE_REL = 1e-6


class DegenerateLimitWarning(UserWarning):
    """The Gaussian limit is supported on a line (``|b| = a``)."""


def stream(seed: int, index: int) -> np.random.Generator:
    """Philox generator for stream ``index`` of ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` standard normal reals from pairs of uniforms."""
    m = (size + 1) // 2
    u = rng.random((m, 2))
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))  # 1 - u in (0, 1]
    t = 2.0 * np.pi * u[:, 1]
    # pairs stay adjacent, so a shorter draw is a prefix of a longer one
    return np.column_stack([r * np.cos(t), r * np.sin(t)]).ravel()[:size]


def sphere_batch(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` uniform unit vectors of C^n as rows."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    g = box_muller(rng, 2 * n * m).reshape(m, 2 * n)
    x = g[:, :n] + 1j * g[:, n:]
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def sphere_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    return sphere_batch(n, 1, rng)[0]


@dataclass(frozen=True)
class SampleSummary:
    mean: complex
    variance: float
    m2: float
    m4: float
    se_mean: float
    se_variance: float


@dataclass(frozen=True)
class MeasureSamples:
    samples: np.ndarray
    seed: int
    n: int

    @property
    def summary(self) -> SampleSummary:
        z = self.samples
        N = z.size
        mean = complex(z.mean())
        d2 = np.abs(z - mean) ** 2
        a2 = np.abs(z) ** 2
        return SampleSummary(
            mean=mean,
            variance=float(d2.mean()),
            m2=float(a2.mean()),
            m4=float(np.mean(a2 * a2)),
            se_mean=float(np.sqrt(d2.mean() / N)),
            se_variance=float(d2.std() / np.sqrt(N)),
        )

    def export_csv(self, path):
        return write_csv(path, ["re", "im"], [self.samples.real, self.samples.imag])


def mc_measure(A, N: int, seed: int = 0, threads: int = 1) -> MeasureSamples:
    """``N`` draws of ``<A x, x>`` with ``x`` uniform on the unit sphere."""
    if N < 1:
        raise PreconditionError("N must be >= 1")
    a = np.asarray(A, dtype=complex)
    n = a.shape[0]
    if np.array_equal(a, a[0, 0] * np.eye(n)):
        # Dirac mass: skip the sphere so the samples are exactly c
        return MeasureSamples(np.full(N, a[0, 0]), int(seed), n)
    sizes = [min(BATCH_ROWS, N - s) for s in range(0, N, BATCH_ROWS)]

    def run(b):
        return quadratic_forms(a, sphere_batch(n, sizes[b], stream(seed, b)))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    return MeasureSamples(np.concatenate(parts), int(seed), n)


# -- exact moments -------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    mean: complex
    variance: float
    hermitian_moments: tuple = ()

    def to_json(self) -> dict:
        return {
            "mean": [self.mean.real, self.mean.imag],
            "variance": self.variance,
            "hermitian_moments": list(self.hermitian_moments),
        }

    def export_json(self, path):
        return write_json(path, self.to_json())


def exact_moments(A, k_max: int = 6) -> MomentReport:
    """Mean ``Tr(A)/n`` and variance ``(Tr(A*A)/n - |Tr(A)/n|^2)/(n+1)``.

    For Hermitian ``A`` the real moments of orders ``0..k_max`` are attached.
    """
    a = np.asarray(A, dtype=complex)
    n = a.shape[0]
    st = matrix_stats(a)
    mean = st.trace / n
    # ||A - mean I||_F^2 equals Tr(A*A) - n |mean|^2 without the cancellation
    var = float(np.sum(np.abs(a - mean * np.eye(n)) ** 2)) / (n * (n + 1))
    herm = ()
    if np.allclose(a, a.conj().T, rtol=0, atol=1e-14 * max(np.sqrt(st.frobenius_sq), 1e-300)):
        lam = hermitian_eigen(a).values
        herm = tuple(hermitian_moment(lam, k) for k in range(k_max + 1))
    return MomentReport(complex(mean), float(var), herm)


def complete_homogeneous(lam, k: int) -> float:
    """``h_k(lambda)`` from power sums: ``k h_k = sum_{i=1}^k p_i h_{k-i}``."""
    lam = np.asarray(lam, dtype=float)
    p = [float(np.sum(lam**i)) for i in range(k + 1)]
    h = [1.0]
    for m in range(1, k + 1):
        h.append(sum(p[i] * h[m - i] for i in range(1, m + 1)) / m)
    return h[k]


def hermitian_moment(knots, k: int) -> float:
    """``int x^k dmu`` for a Hermitian matrix with eigenvalues ``knots``."""
    if k < 0:
        raise PreconditionError("k must be >= 0")
    lam = np.asarray(knots, dtype=float)
    n = lam.size
    return complete_homogeneous(lam, k) / comb(n + k - 1, k)


# -- central limit and concentration ------------------------------------------------


def jordan(n: int) -> np.ndarray:
    """The nilpotent ``n x n`` Jordan block."""
    return np.eye(n, k=1, dtype=complex)


def balanced_hermitian(n: int) -> np.ndarray:
    """``diag(1, -1, 1, -1, ...)`` for even ``n``."""
    if n % 2:
        raise PreconditionError("balanced Hermitian family needs even n")
    return np.diag(np.where(np.arange(n) % 2 == 0, 1.0, -1.0)).astype(complex)


FAMILIES = {"jordan": jordan, "hermitian": balanced_hermitian}


def gaussian_targets(a: float, b: float) -> dict:
    """Moments of the limit law with ``E[x^2] = (a+b)/2``, ``E[y^2] = (a-b)/2``, ``b >= 0`` real."""
    sx, sy = 0.5 * (a + b), 0.5 * (a - b)
    return {"ex2": sx, "ey2": sy, "ez4": 3.0 * sx * sx + 3.0 * sy * sy + 2.0 * sx * sy}


@dataclass(frozen=True)
class CLTRow:
    n: int
    a: float
    b: complex
    ex2: float
    ey2: float
    ez4: float
    targets: dict
    variance_unscaled: float
    degenerate: bool

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "a_n": self.a,
            "b_n": [self.b.real, self.b.imag],
            "ex2": self.ex2,
            "ey2": self.ey2,
            "ez4": self.ez4,
            "targets": self.targets,
            "variance_unscaled": self.variance_unscaled,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class CLTReport:
    rows: list = field(default_factory=list)
    seed: int = 0
    n_samples: int = 0

    def to_json(self) -> dict:
        return {"seed": self.seed, "n_samples": self.n_samples, "rows": [r.to_json() for r in self.rows]}

    def export_json(self, path):
        return write_json(path, self.to_json())


def _family_matrices(family, n_list):
    if isinstance(family, str):
        if family not in FAMILIES:
            raise PreconditionError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
        if n_list is None:
            raise PreconditionError("a named family needs n_list")
        return [FAMILIES[family](int(n)) for n in n_list]
    return [np.asarray(m, dtype=complex) for m in family]


def clt_experiment(family="jordan", n_list=None, N_samples: int = 100_000, seed: int = 0, threads: int = 1) -> CLTReport:
    """Moments of ``sqrt(n) <A_n x, x>`` against the Gaussian limit.

    ``a_n = Tr(A*A)/n`` and ``b_n = Tr(A^2)/n``.  Samples are rotated by
    ``e^{-i arg(b)/2}`` so that the limit covariance is diagonal.
    """
    mats = _family_matrices(family, n_list)
    ns = [m.shape[0] for m in mats]
    if any(n2 < n1 for n1, n2 in zip(ns, ns[1:])):
        raise PreconditionError("n_list must be ascending")
    rows = []
    for a_mat in mats:
        n = a_mat.shape[0]
        st = matrix_stats(a_mat)
        if abs(st.trace) > 1e-12 * max(np.sqrt(st.frobenius_sq), 1.0):
            raise PreconditionError(f"Tr(A_n) = {st.trace} is not zero (n = {n})")
        a = st.frobenius_sq / n
        b = st.trace_A_squared / n
        degenerate = abs(abs(b) - a) <= DEGENERATE_REL * max(a, 1e-300)
        if degenerate:
            warnings.warn(f"degenerate limit at n = {n}: |b| = a, the Gaussian is supported on a line", DegenerateLimitWarning, stacklevel=2)
        z = mc_measure(a_mat, N_samples, seed, threads).samples
        var_unscaled = float(np.mean(np.abs(z) ** 2))
        w = np.sqrt(n) * z * np.exp(-0.5j * np.angle(b)) if abs(b) > 0 else np.sqrt(n) * z
        x, y = w.real, w.imag
        r2 = x * x + y * y
        rows.append(
            CLTRow(
                n=n,
                a=float(a),
                b=complex(b),
                ex2=float(np.mean(x * x)),
                ey2=float(np.mean(y * y)),
                ez4=float(np.mean(r2 * r2)),
                targets=gaussian_targets(float(a), float(abs(b))),
                variance_unscaled=var_unscaled,
                degenerate=bool(degenerate),
            )
        )
    return CLTReport(rows, int(seed), int(N_samples))


@dataclass(frozen=True)
class ConcentrationReport:
    ns: tuple
    quantiles: tuple
    q: float
    slack: float

    @property
    def non_increasing(self) -> bool:
        v = self.quantiles
        return all(b <= a * (1.0 + self.slack) for a, b in zip(v, v[1:]))


def concentration(family="jordan", n_list=(8, 32, 128, 512), N_samples: int = 10_000, seed: int = 0, q: float = 0.99, slack: float = 0.10) -> ConcentrationReport:
    """Empirical ``q``-quantile of ``|<A_n x, x>|`` without scaling."""
    mats = _family_matrices(family, n_list)
    qs = tuple(float(np.quantile(np.abs(mc_measure(m, N_samples, seed).samples), q)) for m in mats)
    return ConcentrationReport(tuple(m.shape[0] for m in mats), qs, q, slack)
