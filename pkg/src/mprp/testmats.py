"""Input generators with known spectra for the accuracy experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import mode_contract, qr
from .randgen import _rng, derive_seed

__all__ = [
    "SpectrumSpec",
    "haar_orthogonal",
    "matrix_with_spectrum",
    "eckart_young_floor",
    "matrix_type1",
    "matrix_type2",
    "a_poly",
    "cauchy_matrix",
    "orthogonal_iteration_step",
    "hosvd_test_tensor",
]


def haar_orthogonal(n: int, seed=0) -> np.ndarray:
    """Haar-distributed n x n orthogonal matrix (float64).

    Sign-fixed QR of a Gaussian matrix: R's diagonal is made non-negative.
    """
    if n < 1:
        raise ValueError("n must be positive")
    g = _rng(seed).standard_normal((n, n))
    q, _ = qr(g)
    return q


@dataclass(frozen=True)
class SpectrumSpec:
    """Singular values s_1..s_N decaying to ``s_p`` at index ``p``.

    ``linear``: s_i = max(1 - i (1 - s_p)/p, s_p)
    ``exp``:    s_i = 2**(-i log2(1/s_p)/p)
    Indices start at 0, so s_0 = 1.
    """

    kind: str
    s_p: float
    n: int
    p: int

    def __post_init__(self):
        if self.kind not in ("linear", "exp"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if not 0.0 < self.s_p < 1.0:
            raise ValueError("s_p must lie in (0, 1)")
        if not 0 < self.p < self.n:
            raise ValueError("need 0 < p < n")

    def values(self) -> np.ndarray:
        i = np.arange(self.n, dtype=np.float64)
        if self.kind == "linear":
            alpha = (1.0 - self.s_p) / self.p
            s = np.maximum(1.0 - alpha * i, self.s_p)
        else:
            alpha = math.log2(1.0 / self.s_p) / self.p
            s = np.exp2(-alpha * i)
        return s.astype(np.float32).astype(np.float64)


def matrix_with_spectrum(spec: SpectrumSpec, seed=0) -> np.ndarray:
    """N x N binary32 matrix U diag(s) V^T with Haar U, V."""
    u = haar_orthogonal(spec.n, derive_seed(seed, 1))
    v = haar_orthogonal(spec.n, derive_seed(seed, 2))
    return ((u * spec.values()[None, :]) @ v.T).astype(np.float32)


def eckart_young_floor(spec: SpectrumSpec, a=None, closed_form: bool = False) -> float:
    """Best rank-p relative residual ||Sigma_2||_F / ||A||_F.

    With ``closed_form`` the tail norm uses the analytic expressions
    (s_p sqrt(N - p) for linear, a geometric series for exp) instead of
    summing the spectrum.
    """
    s = spec.values()
    total = float(np.linalg.norm(s)) if a is None else float(np.linalg.norm(np.asarray(a, dtype=np.float64)))
    if not closed_form:
        tail = float(np.linalg.norm(s[spec.p :]))
    elif spec.kind == "linear":
        tail = spec.s_p * math.sqrt(spec.n - spec.p)
    else:
        # sum_{i=p}^{N-1} r^i with r = 2**(-2 alpha)
        r = 2.0 ** (-2.0 * math.log2(1.0 / spec.s_p) / spec.p)
        tail = math.sqrt(spec.s_p**2 * (1.0 - r ** (spec.n - spec.p)) / (1.0 - r))
    return tail / total


def matrix_type1(n: int = 512, r: int = 20, xi: float = 1e-4, seed=0) -> np.ndarray:
    """diag(I_r, 0) + xi * G G^T with Gaussian G."""
    d = np.zeros(n)
    d[:r] = 1.0
    g = _rng(seed).standard_normal((n, n))
    return (np.diag(d) + xi * (g @ g.T)).astype(np.float32)


def matrix_type2(n: int = 512, r: int = 20, alpha: float = 3.0, phi: float = 1e6, seed=0) -> np.ndarray:
    """U diag(phi I_r, 2^-alpha, 3^-alpha, ..., (n-r+1)^-alpha) V^T."""
    u = haar_orthogonal(n, derive_seed(seed, 1))
    v = haar_orthogonal(n, derive_seed(seed, 2))
    d = np.concatenate([np.full(r, phi), np.arange(2, n - r + 2, dtype=np.float64) ** -alpha])
    return ((u * d[None, :]) @ v.T).astype(np.float32)


a_poly = matrix_type2


def orthogonal_iteration_step(a: np.ndarray) -> np.ndarray:
    """One power-iteration step A <- A (A^T A), in binary64.

    Cubes the singular values; for the Cauchy input this lifts the largest
    entries far beyond the FP16 range while staying inside binary32.
    """
    a64 = np.asarray(a, dtype=np.float64)
    return a64 @ (a64.T @ a64)


def cauchy_matrix(n: int = 512, gamma: float = 1e-3, seed=0, iterate: bool = True) -> np.ndarray:
    """Entries 1 / (|x_i - y_j| + gamma), x, y uniform in (-1e-3, 1e-3).

    With ``iterate`` one :func:`orthogonal_iteration_step` is applied,
    which pushes the largest magnitudes beyond the FP16 range.
    """
    rng = _rng(seed)
    x = rng.uniform(-1e-3, 1e-3, n)
    y = rng.uniform(-1e-3, 1e-3, n)
    a = 1.0 / (np.abs(x[:, None] - y[None, :]) + gamma)
    if iterate:
        a = orthogonal_iteration_step(a)
    return a.astype(np.float32)


def hosvd_test_tensor(dims, ranks, padding: int = 0, seed=0) -> np.ndarray:
    """Tensor of multilinear rank <= (J_i - padding).

    Starts from a uniform(-1, 1) core of shape ``ranks``; mode i is then
    expanded by a J_i x I_i matrix of rank J_i - padding.
    """
    dims = tuple(int(d) for d in dims)
    ranks = tuple(int(j) for j in ranks)
    if len(dims) != len(ranks):
        raise ValueError("dims and ranks differ in length")
    if padding < 0 or padding >= min(ranks):
        raise ValueError("padding must satisfy 0 <= padding < min(ranks)")
    rng = _rng(seed)
    t = rng.uniform(-1.0, 1.0, ranks)
    for i, (ii, jj) in enumerate(zip(dims, ranks)):
        om_a = rng.uniform(-1.0, 1.0, (jj, jj - padding))
        om_b = rng.uniform(-1.0, 1.0, (jj - padding, ii))
        t = mode_contract(t, om_a @ om_b, i)
    return t.astype(np.float32)
