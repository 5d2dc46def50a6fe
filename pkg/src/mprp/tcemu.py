"""Software model of the Tensor-Core m16n8k8 multiply-accumulate.

Arithmetic contract being modelled:

* inputs are FP16 (e5m10) or TF32 (e8m10); both carry 11-bit significands,
  so every pairwise product is exact (at most 22 bits);
* one instruction folds eight products into an accumulator whose
  significand is 25 bits wide, truncating toward zero after every add;
* the accumulator is emitted as binary32, again truncated toward zero.

Within a dot-8 the products are added left to right by index. An optional
binary32 C operand enters the accumulator before the products.

Values travel as float64 arrays holding exactly-representable numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .floatfmt import FP16, FP32, RN, RZ, TF32, FloatFormat, round_to

__all__ = [
    "ACC_BITS",
    "FragmentPrecision",
    "EmuAccumulator",
    "rz_add",
    "emu_dot8",
    "emu_mma",
    "rn_accumulate",
    "tc_gemm",
    "tc_gemm_chained",
]

ACC_BITS = 25
K_STEP = 8
_MMA_M, _MMA_N, _MMA_K = 16, 8, 8


class FragmentPrecision(str, Enum):
    FP16 = "fp16"
    TF32 = "tf32"

    @property
    def fmt(self) -> FloatFormat:
        return FP16 if self is FragmentPrecision.FP16 else TF32


@dataclass
class EmuAccumulator:
    """Scalar accumulator: (-1)**negative * significand * 2**exponent.

    ``significand`` never exceeds ``bits`` bits after an add. Python ints
    make every step exact, so this is the reference the vectorised
    :func:`rz_add` is checked against.
    """

    negative: bool = False
    exponent: int = 0
    significand: int = 0
    bits: int = ACC_BITS

    @classmethod
    def from_float(cls, x: float, bits: int = ACC_BITS) -> "EmuAccumulator":
        acc = cls(bits=bits)
        acc.add(x)
        return acc

    @staticmethod
    def _decompose(x: float) -> tuple[bool, int, int]:
        if x == 0.0:
            return False, 0, 0
        m, e = math.frexp(abs(x))
        sig = int(m * 2.0**53)
        return x < 0.0, e - 53, sig

    def add(self, x: float) -> None:
        if not math.isfinite(x):
            raise OverflowError("non-finite value entered the accumulator")
        neg_b, exp_b, sig_b = self._decompose(x)
        if sig_b == 0:
            return
        if self.significand == 0:
            neg, exp, sig = neg_b, exp_b, sig_b
        else:
            lo = min(self.exponent, exp_b)
            a = self.significand << (self.exponent - lo)
            b = sig_b << (exp_b - lo)
            a = -a if self.negative else a
            b = -b if neg_b else b
            total = a + b
            neg, exp, sig = total < 0, lo, abs(total)
        drop = max(sig.bit_length() - self.bits, 0)
        self.negative = neg
        self.exponent = exp + drop
        self.significand = sig >> drop
        if self.significand == 0:
            self.negative, self.exponent = False, 0

    @property
    def value(self) -> float:
        return math.ldexp(-self.significand if self.negative else self.significand, self.exponent)


# --- vectorised truncating add ----------------------------------------------

_ZERO_EXP = -(1 << 20)


def _bit_length(m: np.ndarray) -> np.ndarray:
    _, e = np.frexp(m.astype(np.float64))
    e = e.astype(np.int64)
    # float conversion may round up to the next power of two
    over = (e > 0) & ((m >> np.maximum(e - 1, 0)) == 0)
    return e - over


def _rz_add_exact(a: np.ndarray, b: np.ndarray, bits: int) -> np.ndarray:
    """Integer align/add/truncate; handles any finite a, b."""
    ma, ea = np.frexp(a)
    mb, eb = np.frexp(b)
    ia = np.abs(np.ldexp(ma, 53)).astype(np.int64)
    ib = np.abs(np.ldexp(mb, 53)).astype(np.int64)
    ea = np.where(ia == 0, _ZERO_EXP, ea.astype(np.int64))
    eb = np.where(ib == 0, _ZERO_EXP, eb.astype(np.int64))
    top = np.maximum(ea, eb)
    lsb = top - 62  # window: 62-bit magnitudes, sums stay below 2**63

    def align(m, e):
        s = e - top + 9
        left = np.left_shift(m, np.clip(s, 0, 9))
        k = np.clip(-s, 0, 63)
        right = np.right_shift(m, k)
        sticky = (s < 0) & (np.left_shift(right, k) != m)
        return np.where(s >= 0, left, right), sticky

    A, sa = align(ia, ea)
    B, sb = align(ib, eb)
    neg_a, neg_b = np.signbit(a), np.signbit(b)
    same = neg_a == neg_b
    diff = A - B
    # a floored (sticky) operand is always the smaller one: borrow one unit
    mag = np.where(same, A + B, np.abs(diff) - (sa | sb))
    neg = np.where(same, neg_a, np.where(diff > 0, neg_a, neg_b))
    neg &= mag != 0
    drop = np.maximum(_bit_length(mag) - bits, 0)
    mag = np.left_shift(np.right_shift(mag, drop), drop)
    out = np.ldexp(mag.astype(np.float64), lsb)
    return np.where(neg, -out, out)


def rz_add(a, b, bits: int = ACC_BITS) -> np.ndarray:
    """Exact a + b truncated toward zero to ``bits`` significant bits.

    ``a`` and ``b`` are float64 arrays (broadcastable). Non-finite operands
    propagate through plain float addition. Exponent range is unbounded
    within binary64.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    with np.errstate(invalid="ignore", over="ignore"):
        s = a + b
        bb = s - a
        err = (a - (s - bb)) + (b - bb)
    # s exact: clear the low mantissa bits (sign-magnitude, so this truncates)
    mask = np.int64(~((1 << (53 - bits)) - 1))
    out = (s.view(np.int64) & mask).view(np.float64)
    slow = (err != 0) & np.isfinite(err)
    if np.any(slow):
        out = np.atleast_1d(out).copy()
        flat = np.atleast_1d(slow)
        out[flat] = _rz_add_exact(np.atleast_1d(a)[flat], np.atleast_1d(b)[flat], bits)
        out = out.reshape(s.shape)
    # subnormal binary64 sums are out of scope for binary32-range data
    return out


def _to_fp32_rz(acc: np.ndarray) -> np.ndarray:
    return round_to(acc, FP32, RZ)


def _check_fragment(x: np.ndarray, prec: FragmentPrecision) -> None:
    x = np.asarray(x, dtype=np.float64)
    finite = np.isfinite(x)
    if not np.array_equal(round_to(x[finite], prec.fmt, RN), x[finite]):
        raise ValueError(f"fragment values not representable in {prec.value}")


def emu_dot8(x, y, prec: FragmentPrecision | str = FragmentPrecision.FP16, c: float = 0.0) -> float:
    """One dot-8 through the accumulator, result emitted in binary32 (RZ).

    ``x`` and ``y`` must already be representable in ``prec``.
    """
    prec = FragmentPrecision(prec)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (K_STEP,) or y.shape != (K_STEP,):
        raise ValueError("emu_dot8 takes two length-8 vectors")
    _check_fragment(x, prec)
    _check_fragment(y, prec)
    acc = np.asarray(float(np.float32(c)))
    for j in range(K_STEP):
        acc = rz_add(acc, x[j] * y[j])
    return float(_to_fp32_rz(acc))


def emu_mma(a_frag, b_frag, c_frag=None, prec: FragmentPrecision | str = FragmentPrecision.FP16) -> np.ndarray:
    """D = A @ B + C for one m16n8k8 fragment, returned as float32."""
    prec = FragmentPrecision(prec)
    a = np.asarray(a_frag, dtype=np.float64)
    b = np.asarray(b_frag, dtype=np.float64)
    if a.shape != (_MMA_M, _MMA_K) or b.shape != (_MMA_K, _MMA_N):
        raise ValueError(f"expected 16x8 and 8x8 fragments, got {a.shape} and {b.shape}")
    if c_frag is None:
        c = np.zeros((_MMA_M, _MMA_N))
    else:
        c = np.asarray(c_frag, dtype=np.float32).astype(np.float64)
        if c.shape != (_MMA_M, _MMA_N):
            raise ValueError(f"expected a 16x8 C fragment, got {c.shape}")
    _check_fragment(a, prec)
    _check_fragment(b, prec)
    acc = c
    for j in range(_MMA_K):
        acc = rz_add(acc, a[:, j, None] * b[None, j, :])
    return _to_fp32_rz(acc).astype(np.float32)


def rn_accumulate(tiles) -> np.ndarray:
    """Left-to-right binary32 sum (RN) of equally shaped partial results."""
    tiles = [np.asarray(t, dtype=np.float32) for t in tiles]
    if not tiles:
        raise ValueError("no tiles to accumulate")
    shape = tiles[0].shape
    out = tiles[0].copy()
    for t in tiles[1:]:
        if t.shape != shape:
            raise ValueError("tiles differ in shape")
        out += t
    return out


def _pad_k(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = a.shape[1]
    if b.shape[0] != k:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    pad = (-k) % K_STEP
    if k == 0 or pad:
        a = np.concatenate([a, np.zeros((a.shape[0], pad or K_STEP))], axis=1)
        b = np.concatenate([b, np.zeros((pad or K_STEP, b.shape[1]))], axis=0)
    return a, b


# products held in memory at once by tc_gemm
_CHUNK_ELEMS = 1 << 22


def tc_gemm(a, b) -> np.ndarray:
    """A @ B with every dot-8 emulated and RN binary32 outer accumulation.

    This is the RZ-avoiding path: each k-block of eight is reduced in the
    truncating accumulator (C = 0), emitted to binary32 with RZ, and the
    block results are summed on the binary32 side with RN in k order.
    """
    a, b = _pad_k(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    m, k = a.shape
    n = b.shape[1]
    nblk = k // K_STEP
    out = np.empty((m, n), dtype=np.float32)
    rows = max(1, _CHUNK_ELEMS // max(1, n * k))
    bt = b.T.reshape(n, nblk, K_STEP)
    for r0 in range(0, m, rows):
        ar = a[r0 : r0 + rows].reshape(-1, 1, nblk, K_STEP)
        with np.errstate(invalid="ignore"):
            prods = ar * bt[None]  # (rows, n, nblk, 8)
        acc = prods[..., 0]
        for j in range(1, K_STEP):
            acc = rz_add(acc, prods[..., j])
        tiles = _to_fp32_rz(acc).astype(np.float32)
        blk = tiles[..., 0].copy()
        with np.errstate(invalid="ignore", over="ignore"):
            for i in range(1, nblk):
                blk += tiles[..., i]
        out[r0 : r0 + rows] = blk
    return out


def tc_gemm_chained(*pairs, c=None) -> np.ndarray:
    """Sum of A_i @ B_i with the result chained through the C operand.

    Every m16n8k8 step takes the previous binary32 output as C, so all
    additions, including the running total, truncate toward zero. With
    several pairs the products of each pair are issued in turn for every
    k-block, sharing one accumulator chain.
    """
    padded = []
    for a, b in pairs:
        padded.append(_pad_k(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    m, k = padded[0][0].shape
    n = padded[0][1].shape[1]
    for a, b in padded:
        if a.shape != (m, k) or b.shape != (k, n):
            raise ValueError("chained GEMM operands must agree in shape")
    acc32 = np.zeros((m, n)) if c is None else np.asarray(c, dtype=np.float32).astype(np.float64)
    with np.errstate(invalid="ignore"):
        for k0 in range(0, k, K_STEP):
            for a, b in padded:
                acc = acc32
                for j in range(k0, k0 + K_STEP):
                    acc = rz_add(acc, a[:, j, None] * b[None, j, :])
                acc32 = _to_fp32_rz(acc)
    return acc32.astype(np.float32)
