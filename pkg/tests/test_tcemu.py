import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mprp.floatfmt import FP16, FP32, RN, RZ, TF32, round_to
from mprp.tcemu import (
    ACC_BITS,
    EmuAccumulator,
    FragmentPrecision,
    emu_dot8,
    emu_mma,
    rn_accumulate,
    rz_add,
    tc_gemm,
    tc_gemm_chained,
)


def trunc_fraction(x: Fraction, bits: int) -> Fraction:
    """Oracle: x truncated toward zero to ``bits`` significant bits."""
    if x == 0:
        return Fraction(0)
    sign = -1 if x < 0 else 1
    x = abs(x)
    e = math.floor(math.log2(x.numerator)) - math.floor(math.log2(x.denominator))
    # fix e so 2**e <= x < 2**(e+1)
    while Fraction(2) ** e > x:
        e -= 1
    while Fraction(2) ** (e + 1) <= x:
        e += 1
    q = Fraction(2) ** (e - bits + 1)
    return sign * (x // q) * q


def scaled_floats():
    # binary32-range magnitudes (the accumulator never sees binary64 subnormals)
    mant = st.floats(-2.0, 2.0, allow_nan=False).filter(lambda m: m == 0.0 or abs(m) >= 2.0**-40)
    return st.builds(lambda m, e: math.ldexp(m, e), mant, st.integers(-60, 60))


@settings(max_examples=500)
@given(scaled_floats(), scaled_floats())
def test_rz_add_matches_fraction_oracle(a, b):
    got = float(rz_add(a, b))
    assert Fraction(got) == trunc_fraction(Fraction(a) + Fraction(b), ACC_BITS)


@settings(max_examples=300)
@given(st.lists(scaled_floats(), min_size=1, max_size=12))
def test_rz_add_matches_python_accumulator(xs):
    acc = EmuAccumulator()
    vec = np.asarray(0.0)
    for x in xs:
        acc.add(x)
        vec = rz_add(vec, x)
    assert float(vec) == acc.value


def test_rz_add_vectorised_bulk():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(20000) * np.exp2(rng.integers(-30, 30, 20000))
    b = rng.standard_normal(20000) * np.exp2(rng.integers(-30, 30, 20000))
    got = rz_add(a, b)
    for i in range(0, 20000, 97):
        assert Fraction(float(got[i])) == trunc_fraction(Fraction(a[i]) + Fraction(b[i]), ACC_BITS)


def test_accumulator_rejects_inf():
    with pytest.raises(OverflowError):
        EmuAccumulator().add(float("inf"))


def test_accumulator_keeps_25_bits():
    # 1 + 2**-24 needs 25 significant bits: kept in the accumulator,
    # truncated on output; two of them reach 1 + 2**-23.
    one_ulp = 2.0**-24
    x = np.array([1.0, one_ulp, 0, 0, 0, 0, 0, 0])
    y = np.array([1.0, 1.0, 0, 0, 0, 0, 0, 0])
    assert emu_dot8(x, y, "tf32") == 1.0
    x[2] = one_ulp
    y[2] = 1.0
    assert emu_dot8(x, y, "tf32") == 1.0 + 2.0**-23
    # binary32 RN would lose both (ties to even)
    assert np.float32(np.float32(1.0) + np.float32(one_ulp)) + np.float32(one_ulp) == np.float32(1.0)


def test_accumulator_truncates_small_addends():
    x = np.array([1.0] + [2.0**-13] * 7)
    y = np.array([1.0] + [2.0**-13] * 7)  # each product 2**-26 is below the 25-bit window
    assert emu_dot8(x, y, "fp16") == 1.0
    # negative values truncate toward zero as well
    assert emu_dot8(-x, y, "fp16") == -1.0


def test_products_are_exact():
    # two 11-bit significands give a 22-bit product, which must not be rounded
    a = 1.0 + 2.0**-10
    x = np.array([a] + [0.0] * 7)
    assert emu_dot8(x, x, "fp16") == a * a


def test_emu_dot8_against_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = round_to(rng.standard_normal(8), FP16)
        y = round_to(rng.standard_normal(8), FP16)
        c = float(np.float32(rng.standard_normal()))
        acc = Fraction(c)
        for xi, yi in zip(x, y):
            acc = trunc_fraction(acc + Fraction(xi) * Fraction(yi), ACC_BITS)
        want = round_to(float(acc), FP32, RZ)
        assert emu_dot8(x, y, "fp16", c) == want


def test_fragment_validation():
    with pytest.raises(ValueError):
        emu_dot8(np.full(8, 0.1), np.ones(8), "fp16")
    with pytest.raises(ValueError):
        emu_dot8(np.ones(7), np.ones(7))
    with pytest.raises(ValueError):
        emu_mma(np.ones((8, 8)), np.ones((8, 8)))
    assert FragmentPrecision("tf32").fmt is TF32


def test_emu_mma_matches_dot8():
    rng = np.random.default_rng(2)
    a = round_to(rng.standard_normal((16, 8)), TF32)
    b = round_to(rng.standard_normal((8, 8)), TF32)
    c = rng.standard_normal((16, 8)).astype(np.float32)
    d = emu_mma(a, b, c, "tf32")
    assert d.dtype == np.float32
    for i in range(16):
        for j in range(8):
            assert d[i, j] == emu_dot8(a[i], b[:, j], "tf32", float(c[i, j]))


def test_rn_accumulate_order():
    tiles = [np.float32([1.0]), np.float32([2.0**-24]), np.float32([2.0**-24])]
    assert rn_accumulate(tiles)[0] == 1.0
    with pytest.raises(ValueError):
        rn_accumulate([])


def test_tc_gemm_exact_on_integers():
    rng = np.random.default_rng(3)
    a = rng.integers(-8, 8, (19, 37)).astype(np.float64)
    b = rng.integers(-8, 8, (37, 11)).astype(np.float64)
    np.testing.assert_array_equal(tc_gemm(a, b), a @ b)
    np.testing.assert_array_equal(tc_gemm_chained((a, b)), a @ b)


def test_tc_gemm_tile_semantics():
    """Each k-block of 8 is reduced by RZ and the blocks are summed with RN."""
    rng = np.random.default_rng(4)
    a = round_to(rng.standard_normal((16, 24)), FP16)
    b = round_to(rng.standard_normal((24, 8)), FP16)
    tiles = [emu_mma(a[:, k : k + 8], b[k : k + 8], None, "fp16") for k in range(0, 24, 8)]
    np.testing.assert_array_equal(tc_gemm(a, b), rn_accumulate(tiles))
    c = None
    for k in range(0, 24, 8):
        c = emu_mma(a[:, k : k + 8], b[k : k + 8], c, "fp16")
    np.testing.assert_array_equal(tc_gemm_chained((a, b)), c)


def test_chained_is_truncating():
    rng = np.random.default_rng(5)
    a = round_to(rng.random((8, 256)), FP16)
    b = round_to(rng.random((256, 8)), FP16)
    exact = a @ b
    chained = tc_gemm_chained((a, b)).astype(np.float64)
    assert np.all(chained <= exact)
    assert np.all(tc_gemm_chained((a, b), c=np.full((8, 8), 1.0)) >= chained)


def test_tc_gemm_overflow_gives_inf():
    big = round_to(1e20, TF32)  # product 1e40 is beyond binary32
    a = np.full((2, 8), big)
    b = np.full((8, 2), big)
    assert np.all(np.isinf(tc_gemm(a, b)))
    assert np.all(np.isinf(tc_gemm_chained((a, b))))
    assert np.all(np.isinf(tc_gemm(a, np.full((8, 2), np.inf))))


def test_tc_gemm_pads_k():
    a = np.ones((3, 5))
    b = np.ones((5, 2))
    np.testing.assert_array_equal(tc_gemm(a, b), np.full((3, 2), 5.0))
    np.testing.assert_array_equal(round_to(tc_gemm(a, b), FP32, RN), np.full((3, 2), 5.0))
