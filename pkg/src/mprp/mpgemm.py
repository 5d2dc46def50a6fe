"""Split-precision GEMM on the emulated Tensor Cores.

A binary32 matrix is split into a leading low-precision part and a scaled
residual (``split``). SHGEMM multiplies a binary32 A by a half-precision B
using two emulated products; TCEC-SGEMM splits both operands and uses
three. The leading product is accumulated with RN on the binary32 side,
the correction products ride the truncating accumulator chain.

Matrices are numpy arrays; results are float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .floatfmt import FP16, RN, round_to
from .tcemu import FragmentPrecision, tc_gemm, tc_gemm_chained

__all__ = [
    "SPLIT_SCALE",
    "SplitPair",
    "GemmResult",
    "split",
    "shgemm",
    "tcec_sgemm",
    "lowprec_gemm",
    "gemm_ref",
    "relative_error",
    "save_matrix",
    "load_matrix",
]

SPLIT_SCALE = 2.0**11


@dataclass
class SplitPair:
    """``low + delta_low / 2**11`` approximates the original binary32 matrix."""

    low: np.ndarray
    delta_low: np.ndarray
    precision: FragmentPrecision
    overflow: np.ndarray = field(repr=False)

    @property
    def has_overflow(self) -> bool:
        return bool(np.any(self.overflow))

    def reconstruct(self) -> np.ndarray:
        return self.low + self.delta_low / SPLIT_SCALE


class GemmResult(np.ndarray):
    """float32 product that records whether any element is non-finite."""

    @property
    def failed(self) -> bool:
        return not bool(np.all(np.isfinite(self)))


def _as_result(c: np.ndarray) -> GemmResult:
    return np.asarray(c, dtype=np.float32).view(GemmResult)


def split(a, target: FragmentPrecision | str = FragmentPrecision.FP16) -> SplitPair:
    """Split a binary32 matrix into low-precision high and residual parts.

    Entries beyond the target's range become inf in ``low``; the
    per-element ``overflow`` mask records where.
    """
    target = FragmentPrecision(target)
    a32 = np.asarray(a, dtype=np.float32)
    if not np.all(np.isfinite(a32)):
        raise ValueError("split needs finite input")
    low = round_to(a32.astype(np.float64), target.fmt, RN)
    with np.errstate(invalid="ignore", over="ignore"):
        resid = (a32 - low.astype(np.float32)).astype(np.float64)
        delta = round_to(resid * SPLIT_SCALE, target.fmt, RN)
    return SplitPair(low=low, delta_low=delta, precision=target, overflow=~np.isfinite(low))


def _check_conform(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"shapes do not conform: {a.shape} @ {b.shape}")


def shgemm(a, b, tc: FragmentPrecision | str = FragmentPrecision.TF32, rz_avoidance: bool = True) -> GemmResult:
    """binary32 A (m x k) times FP16 B (k x n).

    With ``tc = TF32`` the FP16 B is widened to TF32 (exact) before it
    enters the fragments, and A is split into TF32 parts, which covers the
    full binary32 exponent range. ``rz_avoidance=False`` keeps the leading
    product in the truncating chain too (plain Tensor-Core accumulation).
    """
    tc = FragmentPrecision(tc)
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float64)
    _check_conform(a, b)
    if not np.array_equal(round_to(b, FP16, RN), b):
        raise ValueError("B must hold FP16 values")
    sp = split(a, tc)
    if rz_avoidance:
        main = tc_gemm(sp.low, b)
    else:
        main = tc_gemm_chained((sp.low, b))
    corr = tc_gemm_chained((sp.delta_low, b))
    with np.errstate(invalid="ignore", over="ignore"):
        c = main + corr / np.float32(SPLIT_SCALE)
    return _as_result(c)


def tcec_sgemm(a, b, tc: FragmentPrecision | str = FragmentPrecision.TF32) -> GemmResult:
    """binary32 A @ binary32 B with both operands split (three products)."""
    tc = FragmentPrecision(tc)
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    _check_conform(a, b)
    sa, sb = split(a, tc), split(b, tc)
    main = tc_gemm(sa.low, sb.low)
    corr = tc_gemm_chained((sa.delta_low, sb.low), (sa.low, sb.delta_low))
    with np.errstate(invalid="ignore", over="ignore"):
        c = main + corr / np.float32(SPLIT_SCALE)
    return _as_result(c)


def lowprec_gemm(a, b, tc: FragmentPrecision | str = FragmentPrecision.TF32) -> GemmResult:
    """Plain low-precision GEMM: both operands rounded to ``tc``, no correction."""
    tc = FragmentPrecision(tc)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_conform(a, b)
    return _as_result(tc_gemm(round_to(a, tc.fmt, RN), round_to(b, tc.fmt, RN)))


def gemm_ref(a, b, precision: str = "binary64", block: int | None = 8) -> np.ndarray:
    """Reference GEMM entirely in one precision.

    ``binary64`` converts the inputs and multiplies in double (the accuracy
    oracle). ``binary32`` mirrors a blocked SIMT kernel: within each run of
    ``block`` k-indices a partial sum takes fused multiply-adds rounded to
    binary32, and each partial is then added to C with RN. ``block=None``
    is the plain k-loop. The order is fixed, so results do not depend on
    BLAS threading.
    """
    if precision in ("binary64", "fp64", "float64"):
        a64 = np.asarray(a, dtype=np.float64)
        b64 = np.asarray(b, dtype=np.float64)
        _check_conform(a64, b64)
        return a64 @ b64
    if precision not in ("binary32", "fp32", "float32"):
        raise ValueError(f"unknown precision {precision!r}")
    a64 = np.asarray(a, dtype=np.float32).astype(np.float64)
    b64 = np.asarray(b, dtype=np.float32).astype(np.float64)
    _check_conform(a64, b64)
    k = a64.shape[1]
    step = k if block is None else int(block)
    if step < 1:
        raise ValueError("block must be positive")
    shape = (a64.shape[0], b64.shape[1])
    c = np.zeros(shape, dtype=np.float32)
    with np.errstate(invalid="ignore", over="ignore"):
        for l0 in range(0, k, step):
            # binary32 products are exact in binary64, so each update is one FMA
            part = c if block is None else np.zeros(shape, dtype=np.float32)
            for l in range(l0, min(l0 + step, k)):
                part = (part + np.multiply.outer(a64[:, l], b64[l])).astype(np.float32)
            c = part if block is None else c + part
    return c


def relative_error(c_test, c_ref) -> float:
    """Frobenius-norm relative error, accumulated in binary64."""
    t = np.asarray(c_test, dtype=np.float64)
    r = np.asarray(c_ref, dtype=np.float64)
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {r.shape}")
    denom = np.linalg.norm(r)
    if denom == 0.0:
        raise ZeroDivisionError("reference matrix has zero norm")
    return float(np.linalg.norm(t - r) / denom)


# --- matrix/tensor container ---------------------------------------------------
#
# Layout (little endian):
#   magic  b"MPRPMAT1"
#   u8     storage tag: 0 = binary32, 1 = binary64
#   u8     order: 0 = column-major (first index fastest), 1 = row-major
#   u16    ndim
#   u64    extent, ndim times
#   payload

_MAGIC = b"MPRPMAT1"
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {v: k for k, v in _TAGS.items()}


def save_matrix(path, arr, order: str = "F") -> None:
    """Write an array to the binary container; ``order`` is 'F' or 'C'."""
    arr = np.asarray(arr)
    dt = np.dtype(arr.dtype).newbyteorder("<")
    if dt not in _TAGS:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if order not in ("F", "C"):
        raise ValueError("order must be 'F' or 'C'")
    head = _MAGIC + struct.pack("<BBH", _TAGS[dt], 0 if order == "F" else 1, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(head + arr.astype(dt).tobytes(order=order))


def load_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a matrix container")
    tag, order, ndim = struct.unpack_from("<BBH", raw, 8)
    if tag not in _DTYPES or order not in (0, 1):
        raise ValueError("corrupt container header")
    off = 12
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    dt = _DTYPES[tag]
    count = int(np.prod(shape)) if ndim else 1
    if len(raw) - off != count * dt.itemsize:
        raise ValueError("payload size does not match header")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=off)
    return data.reshape(shape, order="F" if order == 0 else "C").copy()
