from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.interpolate import BSpline

from numeasure.bspline import (
    KnotVector,
    NearKnotError,
    bspline_build,
    bspline_derivative,
    divided_difference,
    hilbert_of_derivative,
    hilbert_of_derivative_batch,
    hilbert_of_derivative_guarded,
    hilbert_of_derivative_raw,
    pv_hilbert_quadrature,
    pv_hilbert_subtracted,
)
from numeasure.errors import PreconditionError


def knots_strategy(nmin=2, nmax=8):
    return st.lists(st.floats(-5, 5, allow_nan=False), min_size=nmin, max_size=nmax).filter(
        lambda v: np.min(np.diff(np.sort(v))) > 1e-2 if len(v) > 1 else False
    )


def spline(k):
    return bspline_build(KnotVector(np.sort(np.asarray(k, float))))


def test_knot_vector_invariants():
    with pytest.raises(PreconditionError):
        KnotVector(np.array([1.0, 0.0]))
    with pytest.raises(PreconditionError):
        KnotVector(np.array([1.0, 1.0]))
    kv = KnotVector.regularized([0.0, 1.0, 1.0, 1.0, 2.0])
    assert np.all(np.diff(kv.knots) >= kv.sep_min * (1 - 1e-9))
    assert abs(kv.knots.mean() - 1.0) < 1e-12


def test_divided_difference_examples():
    assert divided_difference([0.0, 1.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert divided_difference([0.0, 1.0, 2.0], [0.0, 1.0, 4.0]) == pytest.approx(1.0)
    assert divided_difference([-1.0, 0.0, 1.0], [0.0, 0.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(PreconditionError):
        divided_difference([0.0, 0.0, 1.0], [0.0, 0.0, 1.0])


@given(knots_strategy(2, 6), st.integers(0, 2**32 - 1))
def test_divided_difference_symmetric(k, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(len(k))
    perm = rng.permutation(len(k))
    a = divided_difference(np.asarray(k), g)
    b = divided_difference(np.asarray(k)[perm], g[perm])
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_bspline_examples():
    B = spline([-1, 1])
    assert B(np.array([-0.5, 0.0, 0.9])) == pytest.approx([0.5, 0.5, 0.5])
    assert B(np.array([-1.5, 1.5])) == pytest.approx([0, 0])
    x = np.linspace(-1.5, 1.5, 31)
    assert spline([-1, 0, 1])(x) == pytest.approx(np.clip(1 - np.abs(x), 0, None), abs=1e-15)
    assert spline([0, 1, 2, 3])(1.5) == pytest.approx(0.75)


@given(knots_strategy(2, 8))
def test_bspline_matches_scipy_oracle(k):
    k = np.sort(np.asarray(k, float))
    n = k.size
    ref = BSpline.basis_element(k, extrapolate=False)
    x = np.linspace(k[0], k[-1], 257)[1:-1]
    # scipy's basis element integrates to (l_n - l_1)/(n - 1)
    expected = np.nan_to_num(ref(x)) * (n - 1) / (k[-1] - k[0])
    assert np.allclose(spline(k)(x), expected, atol=1e-9 * expected.max())


@given(knots_strategy(2, 8))
def test_normalization_and_positivity(k):
    B = spline(k)
    k = np.sort(k)
    x = np.linspace(k[0], k[-1], 10_000)
    y = B(x)
    assert np.trapezoid(y, x) == pytest.approx(1.0, abs=1e-6 if len(k) > 2 else 2e-4)
    assert B.integral() == pytest.approx(1.0, abs=1e-9)
    # away from the end knots, where B ~ (x - l_1)^(n-2) is below roundoff
    w = k[-1] - k[0]
    inner = (x > k[0] + 0.01 * w) & (x < k[-1] - 0.01 * w)
    assert np.all(y[inner] > 0)
    assert np.all(B(np.array([k[0] - 1, k[-1] + 1])) == 0)


@given(knots_strategy(4, 7))
def test_smoothness_across_interior_knots(k):
    k = np.sort(np.asarray(k, float))
    B = spline(k)
    d = B
    for _ in range(k.size - 3):
        d = bspline_derivative(d)
    # B^(n-3) is continuous; compare the pieces on both sides of each interior knot
    scale = max(np.abs(np.concatenate([np.atleast_1d(c) for c in d.coefficients])).max(), 1.0)
    for i in range(1, k.size - 1):
        left = np.polynomial.polynomial.polyval(k[i] - k[i - 1], d.coefficients[i - 1])
        right = np.polynomial.polynomial.polyval(0.0, d.coefficients[i])
        assert abs(left - right) <= 1e-6 * scale


def test_derivative_examples():
    d = bspline_derivative(spline([-1, 1]))
    assert d.dirac_atoms == ((-1.0, 0.5), (1.0, -0.5))
    d = bspline_derivative(spline([-1, 0, 1]))
    assert d(np.array([-0.5, 0.5])) == pytest.approx([1.0, -1.0])


@given(knots_strategy(2, 8))
def test_derivative_total_mass_zero(k):
    assert bspline_derivative(spline(k)).integral() == pytest.approx(0.0, abs=1e-8)


def test_hilbert_examples():
    kv = KnotVector(np.array([-1.0, 1.0]))
    assert hilbert_of_derivative(kv, 0.0) == pytest.approx(1 / np.pi)
    assert hilbert_of_derivative(kv, 2.0) == pytest.approx(-1 / (3 * np.pi))
    kv3 = KnotVector(np.array([-1.0, 0.0, 1.0]))
    far = hilbert_of_derivative(kv3, np.array([1e3, -1e3, 1e6]))
    assert np.all(np.abs(far) < 1e-5)
    with pytest.raises(NearKnotError):
        hilbert_of_derivative(kv3, 1e-9)


def _cauchy_oracle(k, s):
    """(1/pi) p.v. int B'(t)/(s - t) dt with QUADPACK's Cauchy weight, piece by piece."""
    kv = KnotVector(k)
    dB = bspline_derivative(bspline_build(kv))
    total = 0.0
    for a, b in zip(k[:-1], k[1:]):
        if a < s < b:
            v, _ = quad(dB, a, b, weight="cauchy", wvar=s, epsabs=1e-13, epsrel=1e-13, limit=200)
            total -= v
        else:
            v, _ = quad(lambda t: dB(t) / (s - t), a, b, epsabs=1e-13, epsrel=1e-13, limit=200)
            total += v
    return total / np.pi


@given(knots_strategy(3, 6), st.floats(-6, 6))
def test_hilbert_closed_form_vs_cauchy_quadrature(k, s):
    k = np.sort(np.asarray(k, float))
    kv = KnotVector(k)
    if np.min(np.abs(s - k)) < 1e-3:
        return
    ref = _cauchy_oracle(k, s)
    assert hilbert_of_derivative(kv, s) == pytest.approx(ref, abs=1e-8 * max(1, abs(ref)))


def test_hilbert_vs_pv_simpson_oracle(rng):
    for _ in range(100):
        n = rng.integers(3, 7)
        k = np.sort(rng.uniform(-2, 2, n))
        if np.min(np.diff(k)) < 1e-2:
            continue
        kv = KnotVector(k)
        s = rng.uniform(-2.5, 2.5)
        if np.min(np.abs(s - k)) < 1e-2:
            continue
        dB = bspline_derivative(bspline_build(kv))
        assert hilbert_of_derivative(kv, s) == pytest.approx(pv_hilbert_quadrature(dB, s), abs=1e-5)


def test_guarded_fallback_near_knot():
    for k in ([-1.0, 0.0, 0.5, 1.0], [-1.0, 0.5, 1.0], [-1.0, 0.2, 0.5, 0.7, 1.0]):
        k = np.asarray(k)
        for s in (0.5 + 1e-9, 0.5 - 3e-8):
            val = hilbert_of_derivative_guarded(KnotVector(k), s)
            assert val == pytest.approx(_cauchy_oracle(k, s), rel=1e-6, abs=1e-6)


@given(knots_strategy(2, 7), st.floats(-6, 6))
def test_subtracted_quadrature_off_knot(k, s):
    k = np.sort(np.asarray(k, float))
    kv = KnotVector(k)
    if np.min(np.abs(s - k)) < 1e-6:
        return
    dB = bspline_derivative(bspline_build(kv))
    ref = hilbert_of_derivative_raw(kv, s)
    assert pv_hilbert_subtracted(dB, s) == pytest.approx(ref, abs=1e-7 * max(1, abs(ref)))


@given(knots_strategy(2, 6), st.floats(-6, 6))
def test_batch_kernel_agrees(k, s):
    k = np.sort(np.asarray(k, float))
    if np.min(np.abs(s - k)) < 1e-3:
        return
    ref = hilbert_of_derivative_raw(KnotVector(k), s)
    got = hilbert_of_derivative_batch(k[None], np.array([s]))[0]
    assert got == pytest.approx(ref, abs=1e-7 * max(1, abs(ref)))


def test_simplex_representation(rng):
    """int phi B equals the mean of phi over the simplex image sum t_j l_j."""
    for n in (3, 4, 5):
        k = np.sort(rng.uniform(-1, 1, n))
        B = spline(k)
        phi = lambda x: np.cos(2 * x) + x**3
        x = np.linspace(k[0], k[-1], 20001)
        lhs = np.trapezoid(phi(x) * B(x), x)
        t = rng.dirichlet(np.ones(n), 200_000)
        v = phi(t @ k)
        assert abs(lhs - v.mean()) <= 3 * v.std() / np.sqrt(v.size)
    assert factorial(3) == 6
