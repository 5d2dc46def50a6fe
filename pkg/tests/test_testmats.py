import numpy as np
import pytest

from mprp.linalg import unfold
from mprp.mpgemm import shgemm, split
from mprp.randgen import gaussian_matrix
from mprp.testmats import (
    SpectrumSpec,
    cauchy_matrix,
    eckart_young_floor,
    haar_orthogonal,
    hosvd_test_tensor,
    matrix_type1,
    matrix_type2,
    matrix_with_spectrum,
)


def test_haar_orthogonal():
    q = haar_orthogonal(64, seed=1)
    np.testing.assert_allclose(q.T @ q, np.eye(64), atol=1e-12)
    assert abs(abs(np.linalg.det(q)) - 1.0) < 1e-10
    np.testing.assert_array_equal(q, haar_orthogonal(64, seed=1))
    with pytest.raises(ValueError):
        haar_orthogonal(0)


def test_haar_first_column_uniform():
    # E[q_11^2] = 1/n for a Haar matrix
    n, trials = 8, 2000
    vals = np.array([haar_orthogonal(n, seed=s)[0, 0] ** 2 for s in range(trials)])
    var_est = vals.var() / trials
    assert abs(vals.mean() - 1 / n) < 5 * np.sqrt(var_est)


@pytest.mark.parametrize("kind,s_p", [("linear", 1e-2), ("exp", 1e-3)])
def test_spectrum_matrix(kind, s_p):
    spec = SpectrumSpec(kind, s_p, n=128, p=16)
    s = spec.values()
    assert s[0] == 1.0 and np.all(np.diff(s) <= 0)
    assert s[spec.p] == pytest.approx(s_p, rel=1e-6)
    a = matrix_with_spectrum(spec, seed=2)
    assert a.dtype == np.float32
    np.testing.assert_allclose(np.linalg.svd(a.astype(np.float64), compute_uv=False), s, rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(a, matrix_with_spectrum(spec, seed=2))


@pytest.mark.parametrize("kind,s_p", [("linear", 1e-1), ("linear", 1e-3), ("exp", 1e-2), ("exp", 1e-3)])
def test_floor_closed_form(kind, s_p):
    spec = SpectrumSpec(kind, s_p, n=512, p=32)
    assert eckart_young_floor(spec, closed_form=True) == pytest.approx(eckart_young_floor(spec), rel=1e-5)


def test_floor_against_truncated_svd():
    spec = SpectrumSpec("exp", 1e-2, n=96, p=8)
    a = matrix_with_spectrum(spec, seed=3).astype(np.float64)
    u, s, vt = np.linalg.svd(a)
    best = a - (u[:, :8] * s[:8]) @ vt[:8]
    assert eckart_young_floor(spec, a) == pytest.approx(np.linalg.norm(best) / np.linalg.norm(a), rel=1e-5)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        SpectrumSpec("poly", 0.1, 10, 2)
    with pytest.raises(ValueError):
        SpectrumSpec("exp", 1.5, 10, 2)
    with pytest.raises(ValueError):
        SpectrumSpec("exp", 0.1, 10, 10)


def test_type1_rank_plus_noise():
    s = np.linalg.svd(matrix_type1(64, r=5, xi=0.0, seed=0).astype(np.float64), compute_uv=False)
    np.testing.assert_allclose(s[:5], 1.0)
    np.testing.assert_allclose(s[5:], 0.0, atol=1e-12)
    noisy = matrix_type1(64, r=5, xi=1e-4, seed=0)
    a = noisy.astype(np.float64)
    np.testing.assert_allclose(a, a.T)
    assert np.linalg.svd(a, compute_uv=False)[5] > 0


def test_type2_spectrum():
    s = np.linalg.svd(matrix_type2(64, r=4, alpha=2.0, phi=1e3, seed=1).astype(np.float64), compute_uv=False)
    np.testing.assert_allclose(s[:4], 1e3, rtol=1e-5)
    np.testing.assert_allclose(s[4:8], np.arange(2, 6.0) ** -2.0, rtol=1e-3)


def test_cauchy_overflows_fp16():
    a = cauchy_matrix(128, seed=0)
    assert a.dtype == np.float32 and np.all(np.isfinite(a))
    assert np.max(np.abs(a)) > 65504.0
    assert split(a, "fp16").has_overflow
    assert not split(a, "tf32").has_overflow
    omega = gaussian_matrix(128, 8, "fp16", seed=1)
    assert shgemm(a, omega, "fp16").failed
    c = shgemm(a, omega, "tf32")
    assert not c.failed and np.all(np.isfinite(c))
    raw = cauchy_matrix(128, seed=0, iterate=False)
    assert np.max(raw) <= 1e3 + 1e-3 and np.min(raw) > 0


def test_hosvd_tensor_multilinear_rank():
    dims, ranks, pad = (20, 18, 16), (8, 7, 6), 2
    t = hosvd_test_tensor(dims, ranks, padding=pad, seed=4)
    assert t.shape == dims and t.dtype == np.float32
    for mode, j in enumerate(ranks):
        s = np.linalg.svd(unfold(t.astype(np.float64), mode), compute_uv=False)
        assert s[j - pad - 1] / s[0] > 1e-4
        assert s[j - pad] / s[0] < 1e-5
    np.testing.assert_array_equal(t, hosvd_test_tensor(dims, ranks, padding=pad, seed=4))
    with pytest.raises(ValueError):
        hosvd_test_tensor(dims, ranks, padding=6)
