import numpy as np
import pytest

from mprp.floatfmt import FP16, FP32
from mprp.randgen import gaussian_matrix
from mprp.randnla import ProjectionConfig, make_omega, projection_error, random_project, rp_hosvd, rsvd
from mprp.testmats import SpectrumSpec, cauchy_matrix, eckart_young_floor, hosvd_test_tensor, matrix_with_spectrum


def low_rank(n, r, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, r)) @ rng.standard_normal((r, n)) / np.sqrt(n)).astype(np.float32)


def test_config_validation():
    assert ProjectionConfig(omega_format="fp16").omega_format is FP16
    with pytest.raises(ValueError):
        ProjectionConfig(backend="cublas")
    with pytest.raises(ValueError):
        ProjectionConfig(backend="shgemm_fp16", omega_format=FP32)
    with pytest.raises(ValueError):
        ProjectionConfig(oversampling=1)
    with pytest.raises(ValueError):
        ProjectionConfig(power=-1)
    with pytest.raises(ValueError):
        ProjectionConfig(omega_kind="uniform")
    # sparse-sign entries are FP16-exact, so any storage format is allowed
    ProjectionConfig(backend="shgemm_fp16", omega_kind="sparse_sign")


def test_identity_omega_selects_columns():
    a = np.random.default_rng(1).standard_normal((40, 30)).astype(np.float32)
    omega = np.eye(30, 6, dtype=np.float32)
    for backend in ("ref32", "shgemm_fp16", "shgemm_tf32", "tcec_tf32"):
        cfg = ProjectionConfig(backend=backend, omega_format="fp16")
        y, failed = random_project(a, cfg, 6, omega)
        assert not failed
        if backend == "ref32":
            np.testing.assert_array_equal(y, a[:, :6])
        else:
            np.testing.assert_allclose(y, a[:, :6], rtol=2.0**-21)


def test_projection_backends_agree():
    a = np.random.default_rng(2).standard_normal((64, 256)).astype(np.float32)
    omega = gaussian_matrix(256, 12, FP16, seed=3)
    ref, _ = random_project(a, ProjectionConfig(), 12, omega)
    ref64, _ = random_project(a, ProjectionConfig(backend="ref64"), 12, omega)
    norm = np.linalg.norm(ref64)
    assert np.linalg.norm(ref - ref64) / norm < 1e-6
    for backend in ("shgemm_tf32", "shgemm_fp16", "tcec_fp16"):
        y, _ = random_project(a, ProjectionConfig(backend=backend, omega_format="fp16"), 12, omega)
        assert np.linalg.norm(y - ref) / norm < 1e-6


def test_random_project_errors():
    a = np.ones((8, 8), dtype=np.float32)
    with pytest.raises(ValueError):
        random_project(a, ProjectionConfig(), 9)
    with pytest.raises(ValueError):
        random_project(a, ProjectionConfig(), 4, np.ones((8, 3)))


def test_make_omega_reproducible():
    cfg = ProjectionConfig(seed=5, omega_format="fp16")
    np.testing.assert_array_equal(make_omega(50, 4, cfg), make_omega(50, 4, cfg))
    assert not np.array_equal(make_omega(50, 4, cfg), make_omega(50, 4, ProjectionConfig(seed=6)))


@pytest.mark.parametrize("backend", ["ref32", "shgemm_tf32", "shgemm_fp16"])
def test_rsvd_exact_rank(backend):
    a = low_rank(96, 6, seed=4)
    res = rsvd(a, 6, ProjectionConfig(backend=backend, omega_format="fp16", oversampling=4, seed=1))
    assert not res.failed and res.residual < 1e-5
    assert res.U.shape == (96, 6) and res.V.shape == (96, 6)
    np.testing.assert_allclose(res.U.T.astype(np.float64) @ res.U, np.eye(6), atol=1e-4)
    np.testing.assert_allclose(res.V.T.astype(np.float64) @ res.V, np.eye(6), atol=1e-4)
    np.testing.assert_allclose(res.S, np.linalg.svd(a.astype(np.float64), compute_uv=False)[:6], rtol=1e-4)


def test_rsvd_never_beats_floor():
    spec = SpectrumSpec("exp", 1e-2, n=128, p=12)
    a = matrix_with_spectrum(spec, seed=7)
    floor = eckart_young_floor(spec, a)
    for seed in range(5):
        res = rsvd(a, 12, ProjectionConfig(seed=seed, oversampling=6))
        assert res.residual >= floor * (1 - 1e-5)


def test_rsvd_linear_close_to_floor():
    spec = SpectrumSpec("linear", 1e-1, n=256, p=16)
    a = matrix_with_spectrum(spec, seed=8)
    floor = eckart_young_floor(spec, a)
    res = rsvd(a, 16, ProjectionConfig(seed=0))
    assert floor <= res.residual <= 1.5 * floor


def test_power_iteration_helps():
    spec = SpectrumSpec("linear", 1e-2, n=128, p=12)
    a = matrix_with_spectrum(spec, seed=9)
    r0 = np.mean([rsvd(a, 12, ProjectionConfig(seed=s)).residual for s in range(3)])
    r1 = np.mean([rsvd(a, 12, ProjectionConfig(seed=s, power=1)).residual for s in range(3)])
    assert r1 < r0


def test_sparse_sign_comparable_to_gaussian():
    spec = SpectrumSpec("exp", 1e-2, n=128, p=12)
    a = matrix_with_spectrum(spec, seed=10)
    gauss = np.mean([rsvd(a, 12, ProjectionConfig(seed=s)).residual for s in range(5)])
    sparse = np.mean([rsvd(a, 12, ProjectionConfig(seed=s, omega_kind="sparse_sign")).residual for s in range(5)])
    assert sparse < 2 * gauss


def test_fp16_omega_matches_fp32_omega():
    spec = SpectrumSpec("exp", 1e-2, n=128, p=12)
    a = matrix_with_spectrum(spec, seed=11)
    r32 = np.mean([rsvd(a, 12, ProjectionConfig(seed=s)).residual for s in range(10)])
    r16 = np.mean([rsvd(a, 12, ProjectionConfig(seed=s, omega_format="fp16")).residual for s in range(10)])
    assert abs(r16 - r32) / r32 < 0.05


def test_projection_error():
    a = np.random.default_rng(12).standard_normal((20, 10))
    q, _ = np.linalg.qr(a)
    assert projection_error(a, q) < 1e-12
    assert projection_error(a, np.zeros((20, 3))) == pytest.approx(np.linalg.norm(a))


def test_rsvd_cauchy_failure_flag():
    a = cauchy_matrix(128, seed=0)
    bad = rsvd(a, 8, ProjectionConfig(backend="shgemm_fp16", omega_format="fp16"))
    assert bad.failed and np.isnan(bad.residual) and np.all(np.isnan(bad.S))
    ok = rsvd(a, 8, ProjectionConfig(backend="shgemm_tf32", omega_format="fp16"))
    assert not ok.failed and np.isfinite(ok.residual)
    with pytest.raises(ValueError):
        rsvd(a, 125, ProjectionConfig())


@pytest.mark.parametrize("backend", ["ref32", "shgemm_tf32", "shgemm_fp16"])
def test_rp_hosvd_exact_multilinear_rank(backend):
    t = hosvd_test_tensor((24, 20, 16), (6, 5, 4), padding=0, seed=13)
    res = rp_hosvd(t, (6, 5, 4), ProjectionConfig(backend=backend, omega_format="fp16", seed=2))
    assert not res.failed and res.residual < 1e-4
    assert res.core.shape == (6, 5, 4)
    for q, (i, j) in zip(res.factors, [(24, 6), (20, 5), (16, 4)]):
        assert q.shape == (i, j)
        np.testing.assert_allclose(q.T.astype(np.float64) @ q, np.eye(j), atol=1e-5)


def test_rp_hosvd_padding_and_errors():
    t = hosvd_test_tensor((24, 20, 16), (6, 5, 4), padding=2, seed=14)
    res = rp_hosvd(t, (6, 5, 4), ProjectionConfig(seed=3))
    assert res.residual < 1e-4
    with pytest.raises(ValueError):
        rp_hosvd(t, (6, 5))
    with pytest.raises(ValueError):
        rp_hosvd(t, (30, 5, 4))
