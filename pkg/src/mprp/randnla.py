"""Randomized SVD and random-projection HOSVD over a selectable GEMM backend."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .floatfmt import FP16, FP32, FloatFormat, get_format
from .linalg import fold, multi_mode_contract, power_scheme, qr, svd_small, unfold
from .mpgemm import gemm_ref, lowprec_gemm, shgemm, tcec_sgemm
from .randgen import derive_seed, gaussian_matrix, sparse_sign_matrix

__all__ = [
    "BACKENDS",
    "ProjectionConfig",
    "RsvdResult",
    "HosvdResult",
    "random_project",
    "make_omega",
    "rsvd",
    "rp_hosvd",
    "projection_error",
]

# ref64 is the binary64 path used by the mantissa sweep; the rest operate
# on binary32 inputs.
BACKENDS = ("ref32", "ref64", "tcec_fp16", "tcec_tf32", "shgemm_fp16", "shgemm_tf32", "lowprec_direct")


@dataclass(frozen=True)
class ProjectionConfig:
    backend: str = "ref32"
    omega_format: FloatFormat = FP32
    oversampling: int = 10
    power: int = 0
    seed: int = 0
    omega_kind: str = "gaussian"  # or "sparse_sign"
    sparsity: float = 3.0

    def __post_init__(self):
        if isinstance(self.omega_format, str):
            object.__setattr__(self, "omega_format", get_format(self.omega_format))
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.backend.startswith("shgemm") and self.omega_format != FP16 and self.omega_kind == "gaussian":
            raise ValueError("shgemm backends need omega_format = fp16")
        if self.oversampling < 2:
            raise ValueError("oversampling must be >= 2")
        if self.power < 0:
            raise ValueError("power must be >= 0")
        if self.omega_kind not in ("gaussian", "sparse_sign"):
            raise ValueError(f"unknown omega kind {self.omega_kind!r}")


@dataclass
class RsvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    residual: float
    failed: bool = False


@dataclass
class HosvdResult:
    core: np.ndarray
    factors: list = field(default_factory=list)
    residual: float = float("nan")
    failed: bool = False


def make_omega(n: int, cols: int, cfg: ProjectionConfig, seed=None) -> np.ndarray:
    """The n x cols random matrix for ``cfg`` (float32 storage)."""
    seed = derive_seed(cfg.seed, 0) if seed is None else seed
    if cfg.omega_kind == "sparse_sign":
        return sparse_sign_matrix(n, cols, cfg.sparsity, seed)
    return gaussian_matrix(n, cols, cfg.omega_format, seed)


def _backend_gemm(a, b, backend: str) -> np.ndarray:
    if backend == "ref64":
        return gemm_ref(a, b, "binary64")
    if backend == "ref32":
        return gemm_ref(a, b, "binary32")
    if backend == "lowprec_direct":
        return np.asarray(lowprec_gemm(a, b, "tf32"))
    kind, prec = backend.split("_")
    if kind == "shgemm":
        return np.asarray(shgemm(a, b, prec))
    return np.asarray(tcec_sgemm(a, b, prec))


def random_project(a, cfg: ProjectionConfig, p_hat: int, omega=None) -> tuple[np.ndarray, bool]:
    """Y = A Omega through ``cfg.backend``; returns (Y, failed).

    ``omega`` overrides the generated random matrix (test hook). With
    ``cfg.power > 0`` A is first replaced by (A A^T)^q A. ``failed`` is set
    when Y holds non-finite values (FP16 range overflow in the split).
    """
    dt = np.float64 if cfg.backend == "ref64" else np.float32
    a = np.asarray(a, dtype=dt)
    if a.ndim != 2:
        raise ValueError("random_project expects a matrix")
    m, n = a.shape
    if not 1 <= p_hat <= min(m, n):
        raise ValueError(f"p_hat={p_hat} must lie in [1, min(m, n)={min(m, n)}]")
    if omega is None:
        omega = make_omega(n, p_hat, cfg)
    omega = np.asarray(omega, dtype=dt)
    if omega.shape != (n, p_hat):
        raise ValueError(f"omega has shape {omega.shape}, expected {(n, p_hat)}")
    if cfg.power:
        a = power_scheme(a, cfg.power)
    with np.errstate(invalid="ignore", over="ignore"):
        y = _backend_gemm(a, omega, cfg.backend)
    return y, not bool(np.all(np.isfinite(y)))


def projection_error(a, q) -> float:
    """||A - Q Q^T A||_F in binary64."""
    a64 = np.asarray(a, dtype=np.float64)
    q64 = np.asarray(q, dtype=np.float64)
    return float(np.linalg.norm(a64 - q64 @ (q64.T @ a64)))


def _nan_result(m: int, n: int, p: int) -> RsvdResult:
    nan = np.float32(np.nan)
    return RsvdResult(
        U=np.full((m, p), nan), S=np.full(p, nan), V=np.full((n, p), nan), residual=float("nan"), failed=True
    )


def rsvd(a, p: int, cfg: ProjectionConfig = ProjectionConfig(), omega=None) -> RsvdResult:
    """Rank-``p`` randomized SVD with p + s projection columns.

    Only the projection uses the configured backend; Q^T A always goes
    through the binary32 reference GEMM.
    """
    a32 = np.asarray(a, dtype=np.float32)
    m, n = a32.shape
    p_hat = p + cfg.oversampling
    if p < 1 or p_hat > min(m, n):
        raise ValueError(f"need 1 <= p and p + s <= min(m, n); got p={p}, s={cfg.oversampling}, shape={a32.shape}")
    y, failed = random_project(a32, cfg, p_hat, omega)
    if failed:
        return _nan_result(m, n, p)
    q, _ = qr(np.asarray(y, dtype=np.float32))
    b = gemm_ref(np.ascontiguousarray(q.T), a32, "binary32")
    ub, s, v = svd_small(b)
    u = gemm_ref(q, ub[:, :p].astype(np.float32), "binary32")
    s, v = s[:p], v[:, :p]
    a64 = a32.astype(np.float64)
    approx = (u.astype(np.float64) * s.astype(np.float64)) @ v.astype(np.float64).T
    residual = float(np.linalg.norm(a64 - approx) / np.linalg.norm(a64))
    return RsvdResult(U=u, S=s, V=v, residual=residual)


def rp_hosvd(t, ranks, cfg: ProjectionConfig = ProjectionConfig()) -> HosvdResult:
    """Random-projection HOSVD: Q_i = qr(unfold_i(T) Omega_i), then the core.

    Each mode draws its own Omega from a seed derived from ``cfg.seed`` and
    the mode index. No oversampling: W has exactly J_i columns.
    """
    t32 = np.asarray(t, dtype=np.float32)
    ranks = tuple(int(j) for j in ranks)
    if len(ranks) != t32.ndim:
        raise ValueError("one rank per mode is required")
    factors = []
    for i, j in enumerate(ranks):
        if not 1 <= j <= t32.shape[i]:
            raise ValueError(f"rank {j} invalid for mode {i} of extent {t32.shape[i]}")
        mat = np.ascontiguousarray(unfold(t32, i))
        omega = make_omega(mat.shape[1], j, cfg, derive_seed(cfg.seed, 1, i))
        w, failed = random_project(mat, cfg, j, omega)
        if failed:
            return HosvdResult(core=np.full(ranks, np.nan, dtype=np.float32), factors=[], failed=True)
        q, _ = qr(np.asarray(w, dtype=np.float32))
        factors.append(q)
    core = multi_mode_contract(t32, factors)
    t64 = t32.astype(np.float64)
    recon = core.astype(np.float64)
    for i, q in enumerate(factors):
        dims = list(recon.shape)
        dims[i] = q.shape[0]
        recon = fold(q.astype(np.float64) @ unfold(recon, i), i, dims)
    residual = float(np.linalg.norm(t64 - recon) / np.linalg.norm(t64))
    return HosvdResult(core=core, factors=factors, residual=residual)
