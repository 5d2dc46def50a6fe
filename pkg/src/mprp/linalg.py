"""Dense kernels used by the randomized algorithms.

Everything runs in the dtype of its input (float32 for the working path,
float64 for oracles) with a fixed operation order.
"""

from __future__ import annotations

import numpy as np

from .mpgemm import gemm_ref

__all__ = [
    "LinAlgError",
    "matmul",
    "qr",
    "svd_small",
    "unfold",
    "fold",
    "mode_contract",
    "multi_mode_contract",
    "power_scheme",
]


class LinAlgError(ValueError):
    pass


def _working(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


def matmul(a, b) -> np.ndarray:
    """Product in the operands' precision; float32 uses the fixed-order loop."""
    a, b = _working(a), _working(b)
    if a.dtype == np.float32 and b.dtype == np.float32:
        return gemm_ref(a, b, "binary32")
    return gemm_ref(a, b, "binary64")


def qr(a) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR of an m x n matrix (m >= n).

    R has a non-negative diagonal, so Q is unique for full-rank input.
    """
    a = _working(a)
    if a.ndim != 2:
        raise LinAlgError("qr expects a matrix")
    m, n = a.shape
    if m < n:
        raise LinAlgError(f"qr needs m >= n, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinAlgError("qr input has non-finite entries")
    dt = a.dtype
    r = a.copy()
    vs = []
    for j in range(n):
        x = r[j:, j]
        normx = np.linalg.norm(x)
        v = x.copy()
        if normx == 0:
            vs.append(None)
            continue
        alpha = -normx if x[0] >= 0 else normx
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0:
            vs.append(None)
            continue
        v /= vnorm
        r[j:, j:] -= dt.type(2) * np.outer(v, v @ r[j:, j:])
        r[j + 1 :, j] = 0
        vs.append(v)
    q = np.eye(m, n, dtype=dt)
    for j in range(n - 1, -1, -1):
        v = vs[j]
        if v is None:
            continue
        q[j:, :] -= dt.type(2) * np.outer(v, v @ q[j:, :])
    r = np.triu(r[:n, :])
    signs = np.where(np.diag(r) < 0, -1, 1).astype(dt)
    return q * signs[None, :], r * signs[:, None]


def _round_robin(p: int):
    """Pairings for one cyclic sweep: p-1 rounds of disjoint pairs."""
    players = list(range(p)) + ([None] if p % 2 else [])
    size = len(players)
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(i, j), max(i, j)) for i, j in pairs if i is not None and j is not None]
        yield np.array([i for i, _ in pairs]), np.array([j for _, j in pairs])
        players = [players[0], players[-1], *players[1:-1]]


def svd_small(b, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of a short-wide p x n matrix by one-sided Jacobi on its transpose.

    Returns ``U`` (p x p), ``S`` (p, descending, non-negative) and ``V``
    (n x p) with ``B ~= U @ diag(S) @ V.T``. Disjoint column pairs are
    rotated together (round-robin ordering); each sweep visits every pair.
    """
    b = _working(b)
    if b.ndim != 2:
        raise LinAlgError("svd_small expects a matrix")
    p, n = b.shape
    if p > n:
        raise LinAlgError(f"svd_small needs p <= n, got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise LinAlgError("svd_small input has non-finite entries")
    dt = b.dtype
    eps = np.finfo(dt).eps
    # power-of-two prescale keeps the squared column norms in range
    peak = float(np.max(np.abs(b))) if b.size else 0.0
    scale = 2.0 ** -np.frexp(peak)[1] if peak > 0 else 1.0
    g = (b.T * dt.type(scale)).astype(dt)
    j_acc = np.eye(p, dtype=dt)
    rounds = list(_round_robin(p)) if p > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for ii, jj in rounds:
            gi, gj = g[:, ii], g[:, jj]
            alpha = np.sum(gi * gi, axis=0)
            beta = np.sum(gj * gj, axis=0)
            gamma = np.sum(gi * gj, axis=0)
            active = np.abs(gamma) > eps * np.sqrt(alpha * beta)
            if not np.any(active):
                continue
            rotated = True
            gamma_safe = np.where(active, gamma, 1)
            zeta = (beta - alpha) / (2 * gamma_safe)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1 + zeta * zeta))
            t = np.where(zeta == 0, 1, t)
            c = 1 / np.sqrt(1 + t * t)
            s = c * t
            c = np.where(active, c, 1).astype(dt)
            s = np.where(active, s, 0).astype(dt)
            g[:, ii], g[:, jj] = c * gi - s * gj, s * gi + c * gj
            ji, jj_ = j_acc[:, ii], j_acc[:, jj]
            j_acc[:, ii], j_acc[:, jj] = c * ji - s * jj_, s * ji + c * jj_
        if not rotated:
            break
    else:
        raise LinAlgError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    sv = np.linalg.norm(g, axis=0).astype(dt)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    g = g[:, order]
    u = j_acc[:, order]
    safe = np.where(sv > 0, sv, 1)
    v = g / safe[None, :]
    if np.any(sv == 0):
        # complete null directions so V keeps orthonormal columns
        zero = np.nonzero(sv == 0)[0]
        basis = np.linalg.qr(np.concatenate([v[:, sv > 0], np.eye(n, dtype=dt)], axis=1))[0]
        v[:, zero] = basis[:, np.count_nonzero(sv > 0) : np.count_nonzero(sv > 0) + zero.size]
    return u, (sv / dt.type(scale)).astype(dt), v


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (0-based): I_mode x prod(other extents).

    Columns run over the remaining modes in ascending order, first index
    fastest.
    """
    t = np.asarray(t)
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for a {t.ndim}-way tensor")
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(mat, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    mat = np.asarray(mat)
    dims = tuple(int(d) for d in dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for {len(dims)} dims")
    rest = dims[:mode] + dims[mode + 1 :]
    if mat.shape != (dims[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix of shape {mat.shape} does not fold into {dims} at mode {mode}")
    return np.moveaxis(np.reshape(mat, (dims[mode], *rest), order="F"), 0, mode)


def mode_contract(t, m, mode: int) -> np.ndarray:
    """T x_mode M for M of shape I_mode x J: the mode extent becomes J.

    Computed as fold(M^T @ unfold(T, mode)).
    """
    t = np.asarray(t)
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != t.shape[mode]:
        raise ValueError(f"matrix {m.shape} does not match extent {t.shape[mode]} of mode {mode}")
    dims = list(t.shape)
    dims[mode] = m.shape[1]
    return fold(matmul(np.ascontiguousarray(m.T), unfold(t, mode)), mode, dims)


def multi_mode_contract(t, mats) -> np.ndarray:
    """Contract every mode in order: T x_0 M_0 x_1 M_1 ..."""
    out = np.asarray(t)
    for i, m in enumerate(mats):
        out = mode_contract(out, m, i)
    return out


def power_scheme(a, q: int) -> np.ndarray:
    """(A A^T)^q A in the working precision of ``a``."""
    if q < 0:
        raise ValueError("q must be non-negative")
    a = _working(a)
    if q == 0:
        return a.copy()
    aat = matmul(a, np.ascontiguousarray(a.T))
    y = a
    for _ in range(q):
        y = matmul(aat, y)
    return y
