"""Desk-scale accuracy experiments; each returns a list of flat row dicts."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .floatfmt import (
    FP16,
    RN,
    FloatFormat,
    count_in_sigma,
    gaussian_variance,
    get_format,
    not_normalized_probability,
    overflow_probability,
    round_to,
    underflow_probability,
)
from .linalg import qr
from .mpgemm import gemm_ref, lowprec_gemm, relative_error, shgemm, tcec_sgemm
from .randgen import _rng, derive_seed, gaussian_matrix
from .randnla import ProjectionConfig, projection_error, random_project, rp_hosvd, rsvd
from .testmats import (
    SpectrumSpec,
    cauchy_matrix,
    eckart_young_floor,
    hosvd_test_tensor,
    matrix_type1,
    matrix_type2,
    matrix_with_spectrum,
)

STANDARD_FORMATS = ("fp8_e4m3", "fp8_e5m2", "fp16", "bf16", "tf32", "fp32")
RSVD_BACKENDS = ("ref32", "shgemm_tf32", "shgemm_fp16", "lowprec_direct")
HOSVD_BACKENDS = ("ref32", "shgemm_tf32", "shgemm_fp16")
GEMM_BACKENDS = ("ref32", "shgemm_fp16", "shgemm_tf32", "lowprec_tf32")


def _map(fn, items, jobs: int):
    """Order-preserving map; a process pool when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _flatten(chunks):
    return [row for chunk in chunks for row in chunk]


# --- format statistics ---------------------------------------------------------


def sigma_label(s: int) -> str:
    return f"n_{2**s}sigma" if s >= 0 else f"n_2^{s}sigma"


def fmt_stats(formats=STANDARD_FORMATS, s_range=(0, 1, 2), variance: bool = True) -> list[dict]:
    rows = []
    for name in formats:
        fmt = get_format(name)
        row = {
            "format": fmt.name,
            "exp_bits": fmt.exp_bits,
            "man_bits": fmt.man_bits,
            "p_overflow": overflow_probability(fmt),
            "p_not_normalized": not_normalized_probability(fmt),
            "p_underflow": underflow_probability(fmt),
        }
        for s in s_range:
            row[sigma_label(s)] = count_in_sigma(fmt, s)
        if variance:
            row["variance"] = gaussian_variance(fmt)
        rows.append(row)
    return rows


# --- mantissa sweep ------------------------------------------------------------


def _sweep_matrix(matrix: str, n: int, seed) -> np.ndarray:
    if matrix == "type1":
        return matrix_type1(n, seed=seed)
    if matrix == "type2":
        return matrix_type2(n, seed=seed)
    raise ValueError(f"unknown sweep matrix {matrix!r}")


def _sweep_one(args):
    a64, p_hat, mantissas, exp_bits, seed = args
    out = []
    for y in mantissas:
        fmt = FloatFormat(exp_bits, y)
        omega = gaussian_matrix(a64.shape[1], p_hat, fmt, derive_seed(seed, 0))
        q, _ = qr(a64 @ omega.astype(np.float64))
        out.append(projection_error(a64, q))
    return out


def mantissa_sweep(
    matrix: str = "type2",
    n: int = 512,
    p: int = 20,
    s: int = 10,
    mantissas=range(1, 24),
    seeds=range(10),
    exp_bits: int = 8,
    matrix_seed: int = 0,
    jobs: int = 1,
) -> list[dict]:
    """||A - Q Q^T A||_F per omega mantissa length, projection in binary64.

    The input is fixed by ``matrix_seed``; seeds vary the Gaussian draw
    (the same draw is rounded to each mantissa length).
    """
    mantissas = list(mantissas)
    seeds = list(seeds)
    a64 = _sweep_matrix(matrix, n, matrix_seed).astype(np.float64)
    errs = np.array(_map(_sweep_one, [(a64, p + s, mantissas, exp_bits, sd) for sd in seeds], jobs))
    rows = []
    for j, y in enumerate(mantissas):
        col = errs[:, j]
        rows.append(
            {
                "matrix": matrix,
                "n": n,
                "p": p,
                "s": s,
                "mantissa": y,
                "mean_error": float(col.mean()),
                "std_error": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                "seeds": col.size,
            }
        )
    return rows


# --- GEMM accuracy -------------------------------------------------------------


def gemm_inputs(m: int, n: int, k: int, dist: str, seed):
    """binary32 A (m x k) and FP16-valued B (k x n)."""
    rng = _rng(seed)
    if dist == "normal":
        a = rng.standard_normal((m, k), dtype=np.float32)
        b = rng.standard_normal((k, n), dtype=np.float32)
    elif dist == "uniform":
        a = rng.random((m, k), dtype=np.float32)
        b = rng.random((k, n), dtype=np.float32)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    b = round_to(b.astype(np.float64), FP16, RN).astype(np.float32)
    return a, b


def run_gemm_backend(a, b, backend: str) -> np.ndarray:
    if backend == "ref32":
        return gemm_ref(a, b, "binary32")
    if backend == "lowprec_tf32":
        return lowprec_gemm(a, b, "tf32")
    if backend == "shgemm_tf32_rz":
        return shgemm(a, b, "tf32", rz_avoidance=False)
    if backend == "shgemm_fp16_rz":
        return shgemm(a, b, "fp16", rz_avoidance=False)
    kind, _, prec = backend.partition("_")
    if kind == "shgemm":
        return shgemm(a, b, prec)
    if kind == "tcec":
        return tcec_sgemm(a, b, prec)
    raise ValueError(f"unknown gemm backend {backend!r}")


def _gemm_one(args):
    m, n, k, dist, seed, backends = args
    a, b = gemm_inputs(m, n, k, dist, derive_seed(seed, k))
    ref = gemm_ref(a, b, "binary64")
    return [
        {"dist": dist, "m": m, "n": n, "k": k, "seed": seed, "backend": be,
         "rel_error": relative_error(run_gemm_backend(a, b, be), ref)}
        for be in backends
    ]


def gemm_accuracy(
    m: int = 64,
    n: int = 64,
    ks=(64, 256, 1024, 4096),
    backends=GEMM_BACKENDS,
    dists=("normal", "uniform"),
    seeds=range(3),
    jobs: int = 1,
) -> list[dict]:
    tasks = [(m, n, k, d, sd, tuple(backends)) for d in dists for k in ks for sd in seeds]
    return _flatten(_map(_gemm_one, tasks, jobs))


def elementwise_bound_ratio(a, b, c, coeff: float, u: float = 2.0**-24) -> float:
    """max |C - AB| / (coeff k u |A||B|), exact product in binary64."""
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    err = np.abs(np.asarray(c, dtype=np.float64) - a64 @ b64)
    bound = coeff * a64.shape[1] * u * (np.abs(a64) @ np.abs(b64))
    return float(np.max(err / bound))


# --- RSVD ----------------------------------------------------------------------


def omega_format_for(backend: str) -> str:
    return "fp16" if backend.startswith("shgemm") else "fp32"


def rsvd_matrix(matrix: str, n: int, p: int, s_p: float, seed):
    """(A, Eckart-Young floor or nan) for a named test family."""
    if matrix in ("linear", "exp"):
        spec = SpectrumSpec(matrix, s_p, n, p)
        a = matrix_with_spectrum(spec, seed)
        return a, eckart_young_floor(spec, a)
    if matrix == "poly":
        a = matrix_type2(n, seed=seed)
        d = np.concatenate([np.full(20, 1e6), np.arange(2, n - 18, dtype=np.float64) ** -3.0])
        return a, float(np.linalg.norm(d[p:]) / np.linalg.norm(a.astype(np.float64)))
    if matrix == "cauchy":
        return cauchy_matrix(n, seed=seed), float("nan")
    raise ValueError(f"unknown RSVD matrix {matrix!r}")


def _rsvd_one(args):
    matrix, n, p, s, s_p, seed, backends, power = args
    a, floor = rsvd_matrix(matrix, n, p, s_p, derive_seed(seed, 7))
    rows = []
    for be in backends:
        cfg = ProjectionConfig(be, omega_format_for(be), oversampling=s, power=power, seed=seed)
        res = rsvd(a, p, cfg)
        rows.append(
            {"matrix": matrix, "s_p": s_p if matrix in ("linear", "exp") else "", "n": n, "p": p, "s": s,
             "backend": be, "seed": seed, "residual": res.residual, "floor": floor,
             "status": "FAILED(non-finite)" if res.failed else "ok"}
        )
    return rows


def rsvd_experiment(
    matrices=("linear", "exp", "cauchy"),
    backends=RSVD_BACKENDS,
    n: int = 512,
    p: int = 32,
    s: int = 10,
    s_p_values=(1e-1, 1e-2, 1e-3),
    seeds=range(10),
    power: int = 0,
    jobs: int = 1,
) -> list[dict]:
    tasks = []
    for mat in matrices:
        sps = s_p_values if mat in ("linear", "exp") else (float("nan"),)
        for sp in sps:
            tasks += [(mat, n, p, s, sp, sd, tuple(backends), power) for sd in seeds]
    return _flatten(_map(_rsvd_one, tasks, jobs))


def eq4_trial(a, p: int, s: int, omega_format, seed) -> float:
    """Projection error of one p + s column Gaussian sketch (binary32 path)."""
    cfg = ProjectionConfig("ref32", omega_format, oversampling=s, seed=seed)
    y, _ = random_project(a, cfg, p + s)
    q, _ = qr(y)
    return projection_error(a, q)


def eq4_bound(spec: SpectrumSpec, s: int) -> float:
    """sqrt(1 + p/(s-1)) ||Sigma_2||_F for a known spectrum."""
    tail = float(np.linalg.norm(spec.values()[spec.p :]))
    return math.sqrt(1.0 + spec.p / (s - 1)) * tail


# --- RP-HOSVD ------------------------------------------------------------------


def _hosvd_one(args):
    dims, ranks, padding, seed, backends = args
    t = hosvd_test_tensor(dims, ranks, padding, derive_seed(seed, 11))
    rows = []
    for be in backends:
        res = rp_hosvd(t, ranks, ProjectionConfig(be, omega_format_for(be), seed=seed))
        rows.append(
            {"dims": "x".join(map(str, dims)), "ranks": "x".join(map(str, ranks)), "padding": padding,
             "backend": be, "seed": seed, "residual": res.residual,
             "status": "FAILED(non-finite)" if res.failed else "ok"}
        )
    return rows


def rphosvd_experiment(
    dims=(64, 64, 64),
    ranks=(16, 16, 16),
    padding: int = 4,
    backends=HOSVD_BACKENDS,
    seeds=range(10),
    jobs: int = 1,
) -> list[dict]:
    tasks = [(tuple(dims), tuple(ranks), padding, sd, tuple(backends)) for sd in seeds]
    return _flatten(_map(_hosvd_one, tasks, jobs))


def median_by(rows, key: str, value: str = "residual", where=None) -> dict:
    """Median of ``value`` grouped by ``key`` over rows passing ``where``."""
    groups: dict = {}
    for r in rows:
        if where is None or where(r):
            groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.median(v)) for k, v in groups.items()}


__all__ = [
    "STANDARD_FORMATS",
    "RSVD_BACKENDS",
    "HOSVD_BACKENDS",
    "GEMM_BACKENDS",
    "fmt_stats",
    "mantissa_sweep",
    "gemm_inputs",
    "run_gemm_backend",
    "gemm_accuracy",
    "elementwise_bound_ratio",
    "rsvd_matrix",
    "rsvd_experiment",
    "eq4_trial",
    "eq4_bound",
    "rphosvd_experiment",
    "median_by",
]
