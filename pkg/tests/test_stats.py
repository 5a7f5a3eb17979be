import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from numeasure.density import hermitian_density
from numeasure.errors import PreconditionError
from numeasure.regions import in_numerical_range
from numeasure.spectral import sample_curves
from numeasure.stats import (
    BATCH_ROWS,
    DegenerateLimitWarning,
    box_muller,
    clt_experiment,
    complete_homogeneous,
    concentration,
    exact_moments,
    gaussian_targets,
    hermitian_moment,
    mc_measure,
    sphere_batch,
    stream,
)

from conftest import random_complex

A2 = np.array([[0, 2], [0, 0]], dtype=complex)


def _brute_moment(lam, k):
    n = len(lam)
    tot = 0.0
    count = 0
    for alpha in itertools.combinations_with_replacement(range(n), k):
        tot += np.prod([lam[i] for i in alpha])
        count += 1
    return tot / count


def test_box_muller_moments():
    g = box_muller(stream(1, 0), 400_001)
    assert g.size == 400_001
    se = 1 / np.sqrt(g.size)
    assert abs(g.mean()) < 4 * se
    assert abs(np.mean(g**2) - 1) < 4 * np.sqrt(2) * se


@pytest.mark.parametrize("n", [1, 2, 5])
def test_sphere_moments(n):
    X = sphere_batch(n, 100_000, stream(2, n))
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-14)
    a1 = np.abs(X[:, 0]) ** 2
    checks = [(a1, 1 / n), (a1**2, 2 / (n * (n + 1)))]
    if n > 1:
        checks.append((a1 * np.abs(X[:, 1]) ** 2, 1 / (n * (n + 1))))
    for v, want in checks:
        se = v.std() / np.sqrt(v.size)
        assert abs(v.mean() - want) <= 3 * max(se, 1e-15)


def test_mc_examples():
    s = mc_measure((2 - 1j) * np.eye(3), 1000, seed=0).samples
    assert np.all(s == 2 - 1j)
    s = mc_measure(np.diag([-1.0, 1.0]), 100_000, seed=1).samples
    assert np.all(np.abs(s.imag) < 1e-15) and np.all(np.abs(s.real) <= 1 + 1e-15)
    h, _ = np.histogram(s.real, bins=8, range=(-1, 1), density=True)
    assert np.allclose(h, 0.5, atol=4 * np.sqrt(0.5 / (100_000 * 0.25)))
    sm = mc_measure(A2, 100_000, seed=2).summary
    assert abs(sm.mean) <= 3 * sm.se_mean
    assert abs(sm.variance - 2 / 3) <= 3 * sm.se_variance


def test_mc_reproducible_and_thread_independent(tmp_path):
    A = random_complex(np.random.default_rng(0), 4)
    N = 3 * BATCH_ROWS + 17
    a = mc_measure(A, N, seed=5)
    b = mc_measure(A, N, seed=5, threads=3)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, mc_measure(A, N, seed=6).samples)
    a.export_csv(tmp_path / "a.csv")
    b.export_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    # a shorter run is a prefix of a longer one
    assert np.array_equal(mc_measure(A, 100, seed=5).samples, a.samples[:100])
    with pytest.raises(PreconditionError):
        mc_measure(A, 0)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_samples_lie_in_numerical_range(n, seed):
    A = random_complex(np.random.default_rng(seed), n)
    z = mc_measure(A, 2000, seed=seed % 1000).samples
    assert np.all(in_numerical_range(sample_curves(A, 256), z))


def test_exact_moment_examples():
    m = exact_moments(A2)
    assert m.mean == 0 and m.variance == pytest.approx(2 / 3, abs=1e-15)
    m = exact_moments(np.eye(4))
    assert m.mean == 1 and m.variance == 0
    m = exact_moments(np.diag([-1.0, 1.0]))
    assert m.variance == pytest.approx(1 / 3)
    x = np.linspace(-1, 1, 20001)
    assert m.variance == pytest.approx(np.trapezoid(x**2 * 0.5, x), abs=1e-8)
    assert m.hermitian_moments[2] == pytest.approx(1 / 3)
    assert exact_moments(A2).hermitian_moments == ()
    assert set(m.to_json()) == {"mean", "variance", "hermitian_moments"}


def test_hermitian_moment_examples():
    lam = [0.3, -1.2, 2.0]
    assert hermitian_moment(lam, 0) == 1
    assert hermitian_moment(lam, 1) == pytest.approx(np.mean(lam))
    assert hermitian_moment([-1, 1], 2) == pytest.approx(1 / 3)
    with pytest.raises(PreconditionError):
        hermitian_moment(lam, -1)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.integers(0, 4))
def test_hermitian_moment_brute_force(lam, k):
    assert hermitian_moment(lam, k) == pytest.approx(_brute_moment(lam, k), abs=1e-12, rel=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6, unique=True), st.integers(0, 6))
def test_hermitian_moment_quadrature(lam, k):
    lam = np.sort(lam)
    if np.min(np.diff(lam)) < 1e-2:
        return
    # trapezoid on each knot interval, where the B-spline is a polynomial
    tot = 0.0
    for a, b in zip(lam[:-1], lam[1:]):
        x = np.linspace(a, b, 20_001)
        f = hermitian_density(lam, np.clip(x, a + 1e-12 * (b - a), b - 1e-12 * (b - a)))
        tot += np.trapezoid(x**k * f, x)
    assert hermitian_moment(lam, k) == pytest.approx(tot, abs=1e-6 * max(1.0, np.max(np.abs(lam)) ** k))


def test_complete_homogeneous_small():
    assert complete_homogeneous([1.0, 2.0], 2) == pytest.approx(1 + 2 + 4)
    assert complete_homogeneous([1.0, 2.0, 3.0], 0) == 1


def test_exact_vs_mc_random():
    rng = np.random.default_rng(21)
    for trial in range(6):
        n = int(rng.integers(1, 9))
        A = random_complex(rng, n)
        ex = exact_moments(A)
        sm = mc_measure(A, 100_000, seed=trial).summary
        assert abs(sm.mean - ex.mean) <= 4 * sm.se_mean
        assert abs(sm.variance - ex.variance) <= 4 * sm.se_variance + 1e-15


def test_gaussian_targets():
    t = gaussian_targets(1.0, 0.0)
    assert t == {"ex2": 0.5, "ey2": 0.5, "ez4": 2.0}
    t = gaussian_targets(2.0, 2.0)
    assert t["ey2"] == 0 and t["ez4"] == pytest.approx(3 * 4)


def test_clt_jordan_rows():
    rep = clt_experiment("jordan", (16, 64, 256), N_samples=20_000, seed=1)
    for row, n in zip(rep.rows, (16, 64, 256)):
        assert row.a == pytest.approx((n - 1) / n)
        assert abs(row.b) == 0
        assert not row.degenerate
        assert row.targets == {"ex2": row.a / 2, "ey2": row.a / 2, "ez4": row.a**2 * 2}
    # unscaled variance is a_n / (n + 1), shrinking like 1/n
    v = [r.variance_unscaled * (r.n + 1) for r in rep.rows]
    assert np.allclose(v, [r.a for r in rep.rows], rtol=0.05)
    doc = json.loads(json.dumps(rep.to_json()))
    assert [r["n"] for r in doc["rows"]] == [16, 64, 256]


def test_clt_hermitian_degenerate():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rep = clt_experiment("hermitian", (8, 32), N_samples=20_000, seed=2)
    assert any(issubclass(x.category, DegenerateLimitWarning) for x in w)
    for row in rep.rows:
        assert row.degenerate
        assert row.ey2 < 1e-20
        # E[(sqrt(n) z)^2] = n Var(z) = a n / (n + 1) at finite n
        assert row.ex2 == pytest.approx(row.a * row.n / (row.n + 1), rel=0.05)


def test_clt_preconditions():
    with pytest.raises(PreconditionError):
        clt_experiment([np.eye(3)], N_samples=10)
    with pytest.raises(PreconditionError):
        clt_experiment("jordan", (32, 16), N_samples=10)
    with pytest.raises(PreconditionError):
        clt_experiment("nope", (4,), N_samples=10)
    with pytest.raises(PreconditionError):
        clt_experiment("hermitian", (3,), N_samples=10)


def test_concentration_small():
    rep = concentration("jordan", (8, 32, 128), N_samples=5000, seed=3)
    assert rep.ns == (8, 32, 128)
    assert rep.non_increasing
    assert rep.quantiles[-1] < rep.quantiles[0]
