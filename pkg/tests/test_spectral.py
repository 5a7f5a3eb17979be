import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from numeasure.errors import CycleStructureError, PreconditionError
from numeasure.fixtures import GENERIC3, get_fixture
from numeasure.spectral import (
    critical_points,
    cusp_points,
    cycle_structure,
    detect_crossings,
    eigen_with_derivatives,
    point_components,
    sample_curves,
    support_function,
)

from conftest import random_complex

A2 = np.array([[0, 2], [0, 0]], dtype=complex)
CARDIOID = np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]], dtype=complex)


def test_sample_curves_rejects_bad_grid():
    with pytest.raises(PreconditionError):
        sample_curves(A2, 63)
    with pytest.raises(PreconditionError):
        sample_curves(A2, 101)


def test_cardioid_branches():
    T = sample_curves(CARDIOID, 512)
    th = T.thetas
    # sorted branches are a relabelling of cos((theta + 2 pi k)/3)
    want = np.sort(np.cos((th[:, None] + 2 * np.pi * np.arange(3)) / 3.0), axis=1)
    assert np.max(np.abs(T.lambdas - want)) < 1e-12
    top = np.cos(th / 3.0)
    half = th <= np.pi
    assert np.max(np.abs(T.lambdas[half, -1] - top[half])) < 1e-12


def test_hermitian_and_normal_branches():
    T = sample_curves(np.diag([-1.0, 1.0]).astype(complex), 256)
    c = np.cos(T.thetas)
    assert np.allclose(T.lambdas, np.sort(np.column_stack([-c, c]), axis=1), atol=1e-13)
    mu = np.array([0.3 + 0.1j, -1 + 2j, 0.5 - 1j])
    T = sample_curves(np.diag(mu), 256)
    want = np.sort(np.real(mu[None] * np.exp(-1j * T.thetas)[:, None]), axis=1)
    assert np.allclose(T.lambdas, want, atol=1e-12)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_antipodal_multiset(n, seed):
    A = random_complex(np.random.default_rng(seed), n)
    T = sample_curves(A, 128)
    half = T.n_theta // 2
    shifted = np.roll(T.lambdas, -half, axis=0)
    assert np.max(np.abs(shifted + T.lambdas[:, ::-1])) < 1e-9 * max(T.scale, 1.0)


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_hellmann_feynman_vs_finite_difference(n, seed):
    A = random_complex(np.random.default_rng(seed), n)
    T = sample_curves(A, 1024)
    th = T.thetas[::8]
    a1, a2 = T.pencil.a1, T.pencil.a2
    eps = 1e-6

    def eig(t):
        return np.linalg.eigvalsh(a1[None] * np.cos(t)[:, None, None] + a2[None] * np.sin(t)[:, None, None])

    cd = (eig(th + eps) - eig(th - eps)) / (2 * eps)
    # sorted branches have a kink at a crossing; exempt a band around small gaps
    gaps = np.diff(T.lambdas[::8], axis=1)
    mingap = np.minimum(np.pad(gaps, ((0, 0), (1, 0)), constant_values=np.inf), np.pad(gaps, ((0, 0), (0, 1)), constant_values=np.inf))
    ok = mingap > 1e-3 * T.scale
    assert np.max(np.abs(T.dlambdas[::8] - cd)[ok]) <= 1e-4 * T.scale


def test_critical_points_of_cardioid_on_curve():
    T = sample_curves(CARDIOID, 2048)
    z = critical_points(T).z
    phi = np.linspace(0, 2 * np.pi, 200001)
    curve = (2 * np.exp(1j * phi) + np.exp(2j * phi)) / 3
    # nearest parametric sample, then Newton polish on |z - c(phi)|^2
    idx = np.argmin(np.abs(z[:, None] - curve[None, ::50]), axis=1) * 50
    p = phi[idx]
    for _ in range(30):
        c = (2 * np.exp(1j * p) + np.exp(2j * p)) / 3
        d1 = (2j * np.exp(1j * p) + 2j * np.exp(2j * p)) / 3
        d2 = (-2 * np.exp(1j * p) - 4 * np.exp(2j * p)) / 3
        g = np.real(np.conj(c - z) * d1)
        gp = np.abs(d1) ** 2 + np.real(np.conj(c - z) * d2)
        p = p - g / np.where(np.abs(gp) > 1e-12, gp, 1.0)
    dist = np.abs((2 * np.exp(1j * p) + np.exp(2j * p)) / 3 - z)
    assert dist.max() < 1e-6


def test_critical_points_normal_and_disk():
    mu = np.array([0, 1, 1j])
    T = sample_curves(np.diag(mu), 256)
    z = T.z()
    assert np.min(np.abs(z[:, :, None] - mu[None, None]), axis=2).max() < 1e-12
    T = sample_curves(A2, 256)
    top = T.z()[:, -1]
    assert np.allclose(top, np.exp(1j * T.thetas), atol=1e-12)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_hermitian_critical_points_real(n, seed):
    X = random_complex(np.random.default_rng(seed), n)
    H = X + X.conj().T
    T = sample_curves(H, 128)
    assert np.max(np.abs(critical_points(T).z.imag)) <= 1e-9 * max(T.scale, 1.0)


def test_cardioid_single_crossing():
    T = sample_curves(CARDIOID, 1024)
    crossings, segments = detect_crossings(T)
    assert len(segments) == 1
    s = segments[0]
    assert min(abs(s.theta), abs(s.theta - 2 * np.pi)) < 1e-9 or abs(s.theta - np.pi) < 1e-9
    want = sorted([-0.5 - 0.5j / np.sqrt(3), -0.5 + 0.5j / np.sqrt(3)], key=lambda w: w.imag)
    got = sorted([s.z0, s.z1], key=lambda w: w.imag)
    assert np.allclose(got, want, atol=1e-9)


def test_generic3_has_no_crossings():
    T = sample_curves(GENERIC3, 1024)
    assert T.crossings == ()
    assert np.min(np.diff(T.lambdas, axis=1)) > 0


def test_reducible_two_segments():
    T = sample_curves(get_fixture("reducible(2)").matrix.entries, 1024)
    _, segments = detect_crossings(T)
    assert len(segments) == 2
    for s in segments:
        # tangent from a = 2 to the unit circle
        ends = sorted([s.z0, s.z1], key=lambda w: w.real)
        assert abs(ends[1] - 2) < 1e-9
        assert abs(abs(ends[0]) - 1) < 1e-9
        assert abs(ends[0].real - 0.5) < 1e-9


def test_cycle_structures():
    cs = cycle_structure(sample_curves(CARDIOID, 512))
    assert cs.lengths == (3,)
    cs = cycle_structure(sample_curves(np.diag([0, 1, 1j]), 512))
    assert sorted(cs.lengths) == [1, 1, 1]
    assert cs.tau == tuple(range(cs.m))
    cs = cycle_structure(sample_curves(GENERIC3, 512))
    assert sorted(cs.lengths) == [1, 2]


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_cycle_structure_counts(n, seed):
    T = sample_curves(random_complex(np.random.default_rng(seed), n), 256)
    try:
        cs = cycle_structure(T)
    except CycleStructureError:
        return
    assert sum(cs.lengths) == cs.m
    assert sum(l * m for l, m in zip(cs.lengths, cs.multiplicities)) == n
    assert sorted(cs.tau) == list(range(cs.m))


def test_cycle_structure_scalar_fails():
    with pytest.raises(CycleStructureError):
        cycle_structure(sample_curves(2 * np.eye(2, dtype=complex), 64))


def test_support_function_examples():
    th = np.linspace(0, 2 * np.pi, 37)
    assert np.allclose(support_function(sample_curves(A2, 256), th), 1.0, atol=1e-12)
    T = sample_curves(np.diag([0.0, 1.0]).astype(complex), 4096)
    assert np.allclose(support_function(T, th), np.maximum(0, np.cos(th)), atol=1e-5)
    b, c = 1.0, 0.7
    T = sample_curves(np.array([[-c, 2 * b], [0, c]], dtype=complex), 512)
    assert np.allclose(support_function(T, T.thetas), np.sqrt(b * b + c * c * np.cos(T.thetas) ** 2), atol=1e-12)


def test_generic3_outer_branch_convex():
    T = sample_curves(GENERIC3, 1024)
    z = T.z()[:, -1]
    a, b, c = z, np.roll(z, -1), np.roll(z, -2)
    cross = np.imag(np.conj(b - a) * (c - b))
    assert np.all(cross >= -1e-12)


def test_generic3_middle_branch_has_three_cusps():
    T = sample_curves(GENERIC3, 2048)
    cusps = cusp_points(T, 1, theta_max=np.pi)
    assert len(cusps) == 3


def test_point_components():
    mu = np.array([0, 1, 1j])
    pts = point_components(sample_curves(np.diag(mu), 256))
    assert len(pts) == 3
    key = lambda w: (w.real, w.imag)
    assert np.allclose(sorted((p[0] for p in pts), key=key), sorted(mu, key=key), atol=1e-10)
    # a3_shift: the middle branch collapses to the origin
    pts = point_components(sample_curves(get_fixture("a3_shift").matrix.entries, 256))
    assert len(pts) == 1 and abs(pts[0][0]) < 1e-10
    assert point_components(sample_curves(GENERIC3, 256)) == []


def test_eigen_with_derivatives_cluster_split():
    # H(theta) = diag(cos, cos) + sin * sigma_x at theta = 0 is degenerate
    A = np.array([[1, 1j], [1j, 1]], dtype=complex)
    w, dw, _ = eigen_with_derivatives(A, [0.0])
    assert np.allclose(w[0], [1, 1])
    assert np.allclose(dw[0], [-1, 1])
