"""Arbitrary eXmY binary floating-point formats.

A format has X exponent bits and Y explicit mantissa bits, IEEE-754 style:
the all-ones exponent is reserved for inf/NaN, the all-zeros exponent holds
zero and subnormals. Values are carried around as binary64 numbers, which
represent every eXmY value exactly for the supported sizes.

Besides rounding, the module answers questions about a standard Gaussian
sample after it has been rounded into a format: how likely it is to
overflow or underflow, how many distinct values it can take near the
origin, and what its variance becomes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "FloatFormat",
    "RoundingMode",
    "RN",
    "RZ",
    "FP8_E4M3",
    "FP8_E5M2",
    "FP16",
    "BF16",
    "TF32",
    "FP32",
    "NAMED_FORMATS",
    "get_format",
    "round_to",
    "enumerate_values",
    "overflow_probability",
    "underflow_probability",
    "not_normalized_probability",
    "count_in_sigma",
    "count_in_sigma_bruteforce",
    "gaussian_variance",
    "gaussian_variance_enumerated",
    "MAX_ENUM_EXP_BITS",
    "MAX_ENUM_MAN_BITS",
]

MAX_ENUM_EXP_BITS = 8
MAX_ENUM_MAN_BITS = 12

# binary64 holds every value exactly up to these sizes
_MAX_EXP_BITS = 10
_MAX_MAN_BITS = 40


class RoundingMode(str, Enum):
    RN = "RN"  # nearest, ties to even
    RZ = "RZ"  # toward zero


RN = RoundingMode.RN
RZ = RoundingMode.RZ


@dataclass(frozen=True)
class FloatFormat:
    """An eXmY format descriptor.

    ``man_bits`` excludes the implicit leading bit.
    """

    exp_bits: int
    man_bits: int
    name: str = ""

    def __post_init__(self):
        if not 2 <= self.exp_bits <= _MAX_EXP_BITS:
            raise ValueError(f"exp_bits must be in [2, {_MAX_EXP_BITS}], got {self.exp_bits}")
        if not 0 <= self.man_bits <= _MAX_MAN_BITS:
            raise ValueError(f"man_bits must be in [0, {_MAX_MAN_BITS}], got {self.man_bits}")
        if not self.name:
            object.__setattr__(self, "name", f"e{self.exp_bits}m{self.man_bits}")

    @property
    def bias(self) -> int:
        return 2 ** (self.exp_bits - 1) - 1

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def max_value(self) -> float:
        return math.ldexp(2.0 - 2.0 ** -self.man_bits, self.emax)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, self.emin)

    @property
    def min_subnormal(self) -> float:
        return math.ldexp(1.0, self.emin - self.man_bits)

    @property
    def unit_roundoff(self) -> float:
        return 2.0 ** -(self.man_bits + 1)

    @property
    def significand_bits(self) -> int:
        return self.man_bits + 1

    def __str__(self) -> str:
        return self.name


FP8_E4M3 = FloatFormat(4, 3, "fp8_e4m3")
FP8_E5M2 = FloatFormat(5, 2, "fp8_e5m2")
FP16 = FloatFormat(5, 10, "fp16")
BF16 = FloatFormat(8, 7, "bf16")
TF32 = FloatFormat(8, 10, "tf32")
FP32 = FloatFormat(8, 23, "fp32")

NAMED_FORMATS = {f.name: f for f in (FP8_E4M3, FP8_E5M2, FP16, BF16, TF32, FP32)}
_ALIASES = {"e4m3": FP8_E4M3, "e5m2": FP8_E5M2, "half": FP16, "bfloat16": BF16, "single": FP32}
_EXMY = re.compile(r"^e(\d+)m(\d+)$")


def get_format(name: str | FloatFormat) -> FloatFormat:
    """Look up a format by name (``fp16``, ``tf32``...) or parse ``eXmY``."""
    if isinstance(name, FloatFormat):
        return name
    key = name.strip().lower()
    if key in NAMED_FORMATS:
        return NAMED_FORMATS[key]
    if key in _ALIASES:
        return _ALIASES[key]
    m = _EXMY.match(key)
    if m:
        x, y = int(m.group(1)), int(m.group(2))
        for f in NAMED_FORMATS.values():
            if (f.exp_bits, f.man_bits) == (x, y):
                return f
        return FloatFormat(x, y)
    raise ValueError(f"unknown float format {name!r}")


def round_to(x, fmt: FloatFormat, mode: RoundingMode | str = RN):
    """Round binary64 value(s) into ``fmt``.

    Subnormals and signed zero are honoured. Magnitudes beyond the largest
    finite value become inf in both modes; NaN propagates. Returns a float
    for scalar input, otherwise a float64 array.
    """
    mode = RoundingMode(mode)
    arr = np.asarray(x, dtype=np.float64)
    a = np.abs(arr)
    finite = np.isfinite(a)
    with np.errstate(invalid="ignore", over="ignore"):
        _, e = np.frexp(np.where(finite, a, 1.0))
        # exponent of the leading bit, clamped into the subnormal range
        lead = np.maximum(e.astype(np.int64) - 1, fmt.emin)
        quantum_exp = lead - fmt.man_bits
        scaled = np.ldexp(a, -quantum_exp)
        q = np.rint(scaled) if mode is RN else np.trunc(scaled)
        r = np.ldexp(q, quantum_exp)
        r = np.where(r > fmt.max_value, np.inf, r)
        r = np.where(finite, r, a)
        out = np.copysign(r, arr)
    if out.ndim == 0:
        return float(out)
    return out


def enumerate_values(fmt: FloatFormat) -> np.ndarray:
    """All finite values of ``fmt`` in ascending order, zero listed once."""
    if fmt.exp_bits > MAX_ENUM_EXP_BITS or fmt.man_bits > MAX_ENUM_MAN_BITS:
        raise ValueError(
            f"{fmt} too large to enumerate (limit e{MAX_ENUM_EXP_BITS}m{MAX_ENUM_MAN_BITS})"
        )
    mant = np.arange(2**fmt.man_bits, dtype=np.float64)
    sub = np.ldexp(mant, fmt.emin - fmt.man_bits)
    exps = np.arange(fmt.emin, fmt.emax + 1)
    normal = np.ldexp((1.0 + mant[None, :] * 2.0**-fmt.man_bits), exps[:, None]).ravel()
    pos = np.concatenate([sub[1:], normal])
    return np.concatenate([-pos[::-1], [0.0], pos])


def _two_sided(t: float) -> float:
    """P(|g| < t) for standard normal g, without cancellation near zero."""
    return math.erf(t / math.sqrt(2.0))


def overflow_probability(fmt: FloatFormat) -> float:
    """P(|g| > max_value), evaluated through erfc so far tails stay accurate."""
    return math.erfc(fmt.max_value / math.sqrt(2.0))


def underflow_probability(fmt: FloatFormat) -> float:
    """P(g rounds to zero under RN).

    Magnitudes up to half the smallest subnormal flush to zero.
    """
    return _two_sided(fmt.min_subnormal / 2.0)


def not_normalized_probability(fmt: FloatFormat) -> float:
    """Probability that a sample lands below the normal range.

    The threshold is half the smallest normal, the same halving convention
    as :func:`underflow_probability`. The physically exact RN event
    (|g| < min_normal - min_subnormal/2) is about twice as likely.
    """
    return _two_sided(fmt.min_normal / 2.0)


def count_in_sigma(fmt: FloatFormat, s: int) -> int:
    """Number of finite values v with |v| < 2**s (zero and subnormals included).

    Valid for emin <= s <= emax + 1; s = 0, 1, 2 give the 1, 2 and 4 sigma
    ranges of a standard Gaussian.
    """
    if not fmt.emin <= s <= fmt.emax + 1:
        raise ValueError(f"s={s} outside [{fmt.emin}, {fmt.emax + 1}] for {fmt}")
    return 2 * (s + fmt.bias) * 2**fmt.man_bits - 1


def count_in_sigma_bruteforce(fmt: FloatFormat, s: int) -> int:
    vals = enumerate_values(fmt)
    return int(np.count_nonzero(np.abs(vals) < 2.0**s))


# --- variance of a rounded standard Gaussian ---------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def _cell_excess(v, lo_w, hi_w, pieces=4):
    """Integral of (v^2 - g^2) phi(g) over [v - lo_w, v + hi_w].

    Integrated in the offset t = g - v (integrand -2vt - t^2) with
    composite Gauss-Legendre; ``v`` may be an array.
    """
    v = np.asarray(v, dtype=np.float64)[..., None]
    edges = np.linspace(-lo_w, hi_w, pieces + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half, mid = (b - a) / 2.0, (b + a) / 2.0
        t = mid + half * _GL_NODES
        total = total + half * np.sum((-2.0 * v * t - t * t) * _phi(v + t) * _GL_WEIGHTS, axis=-1)
    return total if np.ndim(total) else float(total)


def _tail_excess(v, lo):
    """Integral of (v^2 - g^2) phi(g) over [lo, inf)."""
    upper = float(ndtr(-lo))
    return v * v * upper - (upper + lo * float(_phi(lo)))


_SERIES_TERMS = 12


def _sym_cell_excess(v, h):
    """Excess of symmetric cells [v - h, v + h], via the Hermite expansion of
    phi(v + t); free of the cancellation a direct quadrature suffers.
    Needs v*h << 1.
    """
    v = np.asarray(v, dtype=np.float64)
    he_prev, he = np.ones_like(v), v.copy()
    acc = -2.0 * h**3 / 3.0 * he_prev  # n = 0 term
    fact = 1.0
    for n in range(1, _SERIES_TERMS):
        fact *= n
        if n % 2:
            acc = acc + 4.0 * v * he * h ** (n + 2) / (fact * (n + 2))
        else:
            acc = acc - 2.0 * he * h ** (n + 3) / (fact * (n + 3))
        he_prev, he = he, v * he - n * he_prev
    return _phi(v) * acc


_DIRECT_SEGMENT = 4096
_SEGMENT_PIECES = 16


def _segment_excess(start, spacing, count):
    """Sum of symmetric cell excesses for values start + j*spacing, j < count."""
    h = spacing / 2.0
    if count <= 0:
        return 0.0
    if count <= _DIRECT_SEGMENT or start * h > 1e-3:
        if count > 1 << 22:
            raise ValueError("segment too long for direct summation")
        v = start + spacing * np.arange(count)
        if start * h > 1e-3 or h > 1e-2:
            return float(np.sum(_cell_excess(v, h, h)))
        return float(np.sum(_sym_cell_excess(v, h)))
    end = start + spacing * (count - 1)
    # Euler-Maclaurin with composite Gauss-Legendre for the integral
    edges = np.linspace(start, end, _SEGMENT_PIECES + 1)
    mids = (edges[1:] + edges[:-1]) / 2.0
    halves = (edges[1:] - edges[:-1]) / 2.0
    nodes = mids[:, None] + halves[:, None] * _GL_NODES[None, :]
    integral = float(np.sum(halves[:, None] * _GL_WEIGHTS[None, :] * _sym_cell_excess(nodes, h)))
    ends = _sym_cell_excess(np.array([start, end]), h)
    eps = spacing * 1e-3
    deriv = (_sym_cell_excess(np.array([start + eps, end + eps]), h) - _sym_cell_excess(np.array([start - eps, end - eps]), h)) / (2 * eps)
    return integral / spacing + 0.5 * float(ends[0] + ends[1]) + spacing / 12.0 * float(deriv[1] - deriv[0])


# Binades outside this window carry no measurable mass or excess.
_LOWEST_BINADE = -200
_HIGHEST_BINADE = 6


def gaussian_variance(fmt: FloatFormat) -> float:
    """Variance of N(0,1) samples rounded into ``fmt`` with RN.

    Computes 1 + E[round(g)^2 - g^2] cell by cell, binade by binade. Long
    uniform runs of cells are summed by Euler-Maclaurin quadrature so that
    wide-mantissa formats (fp32) are as cheap as narrow ones. Values that
    would round to inf are attributed to the largest finite value.
    """
    y = fmt.man_bits
    n = 2**y
    sub_sp = fmt.min_subnormal
    excess = 0.0
    # zero's cell, positive half
    zero_w = sub_sp / 2.0 if y > 0 else fmt.min_normal / 2.0
    excess += _cell_excess(0.0, 0.0, zero_w)
    if y > 0 and fmt.emin >= _LOWEST_BINADE:
        excess += _segment_excess(sub_sp, sub_sp, n - 1)
    for k in range(max(fmt.emin, _LOWEST_BINADE), min(fmt.emax, _HIGHEST_BINADE) + 1):
        sp = math.ldexp(1.0, k - y)
        first = math.ldexp(1.0, k)
        lo_w = sp / 2.0 if k == fmt.emin else sp / 4.0
        if k != fmt.emax:
            excess += _cell_excess(first, lo_w, sp / 2.0)
            if n > 1:
                excess += _segment_excess(first + sp, sp, n - 1)
        elif n == 1:
            excess += _tail_excess(first, first - lo_w)
        else:
            excess += _cell_excess(first, lo_w, sp / 2.0)
            if n > 2:
                excess += _segment_excess(first + sp, sp, n - 2)
            excess += _tail_excess(fmt.max_value, fmt.max_value - sp / 2.0)
    return 1.0 + 2.0 * excess


def gaussian_variance_enumerated(fmt: FloatFormat) -> float:
    """Exhaustive version of :func:`gaussian_variance` for enumerable formats.

    Sums v^2 times the N(0,1) mass of each value's RN cell, cells bounded by
    midpoints between neighbours. Independent of the quadrature path.
    """
    vals = enumerate_values(fmt)
    pos = vals[vals.size // 2 + 1 :]
    full = np.concatenate([[0.0], pos])
    mids = (full[1:] + full[:-1]) / 2.0
    lo = mids
    hi = np.concatenate([mids[1:], [np.inf]])
    mass = ndtr(-lo) - ndtr(-hi)
    return float(2.0 * np.sum(pos * pos * mass))
