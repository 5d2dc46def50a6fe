"""Random matrices for projections: rounded Gaussians and sparse signs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .floatfmt import FP32, RN, FloatFormat, get_format, round_to

__all__ = ["RandomMatrixSpec", "gaussian_matrix", "sparse_sign_matrix", "make_random_matrix", "derive_seed"]


def derive_seed(seed, *keys: int) -> np.random.SeedSequence:
    """Child seed for a sub-stream (per mode, per row block...).

    ``seed`` is an int or a SeedSequence; keys extend its spawn key.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, *map(int, keys)))
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, keys)])


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def gaussian_matrix(rows: int, cols: int, fmt: FloatFormat = FP32, seed=0) -> np.ndarray:
    """i.i.d. N(0,1) drawn in binary32, then rounded into ``fmt`` with RN.

    Returned as float32 when ``fmt`` fits in binary32 (always, for the
    formats used here) so it can feed binary32 code directly.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    fmt = get_format(fmt)
    g = _rng(seed).standard_normal((rows, cols), dtype=np.float32)
    if fmt == FP32:
        return g
    return round_to(g.astype(np.float64), fmt, RN).astype(np.float32)


def sparse_sign_matrix(rows: int, cols: int, s: float = 3.0, seed=0) -> np.ndarray:
    """Entries +1/-1 with probability 1/(2s) each, else 0; no sqrt(s) scale.

    Only the range of the projection is used downstream, so the scale
    factor is dropped.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    if s < 1.0:
        raise ValueError("sparsity s must be >= 1")
    u = _rng(seed).random((rows, cols))
    p = 1.0 / (2.0 * s)
    out = np.zeros((rows, cols), dtype=np.float32)
    out[u < p] = -1.0
    out[(u >= p) & (u < 2.0 * p)] = 1.0
    return out


@dataclass(frozen=True)
class RandomMatrixSpec:
    kind: str = "gaussian"  # or "sparse_sign"
    storage: FloatFormat = FP32
    sparsity: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "sparse_sign"):
            raise ValueError(f"unknown random matrix kind {self.kind!r}")

    @staticmethod
    def very_sparse(n: int, seed: int = 0) -> "RandomMatrixSpec":
        return RandomMatrixSpec("sparse_sign", sparsity=math.sqrt(n), seed=seed)


def make_random_matrix(spec: RandomMatrixSpec, rows: int, cols: int, seed=None) -> np.ndarray:
    seed = spec.seed if seed is None else seed
    if spec.kind == "gaussian":
        return gaussian_matrix(rows, cols, spec.storage, seed)
    return sparse_sign_matrix(rows, cols, spec.sparsity, seed)
