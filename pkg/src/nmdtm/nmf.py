"""Compression of sparse nonnegative NMF bases.

An NMF ``M ~ W H`` (both factors nonnegative) yields a sparse, typically
full-rank basis ``W``. Plain truncated SVD compresses such a matrix poorly,
while a ReLU decomposition ``W ~ max(0, X)`` with low-rank ``X`` can do much
better. The quality of a compressed basis ``B`` is judged downstream by
refitting nonnegative coefficients::

    tol_nmf = min_{H >= 0} ||M - max(0, B) H||_F / ||M||_F
"""
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .linalg import as_matrix, frobenius_norm, matmul, relu, truncated_svd
from .solver import NmdParams, fit

METHODS = ("nmd_tm", "tsvd")


@dataclass
class NmfFactors:
    w_basis: np.ndarray
    h_coef: np.ndarray
    # ||M - WH||_F after each sweep
    errors: List[float] = field(default_factory=list)

    @property
    def rank(self):
        return self.w_basis.shape[1]

    def rel_error(self, m):
        return frobenius_norm(m - matmul(self.w_basis, self.h_coef)) / frobenius_norm(m)


@dataclass
class CompressionReport:
    method: str
    rank: int
    basis_rel_error: float
    tol_nmf: float = float("nan")
    seconds: float = 0.0

    def row(self):
        return [self.method, self.rank, self.basis_rel_error, self.tol_nmf, self.seconds]


def _hals_rows(h, gram, cross):
    """One HALS sweep over the rows of `h` for ``min ||A - B h||`` with h >= 0.

    ``gram = B^T B`` and ``cross = B^T A``. Rows whose column of ``B`` is zero
    are left at 0 since the data does not constrain them.
    """
    for l in range(h.shape[0]):
        d = gram[l, l]
        if d <= 0:
            h[l] = 0.0
            continue
        h[l] = np.maximum(0.0, h[l] + (cross[l] - gram[l] @ h) / d)
    return h


def nmf_hals(m, p, iters=500, seed=0):
    """Rank-`p` NMF of `m` by hierarchical alternating least squares.

    Factors start from seeded uniform noise, rescaled by the scalar that
    best fits ``M``. Each sweep updates all rows of ``H`` and then all
    columns of ``W`` exactly, so the fit error never increases.
    """
    m = as_matrix(m, "M")
    if np.any(m < 0):
        raise ValueError("NMF input must be nonnegative")
    m_norm = frobenius_norm(m)
    if m_norm == 0:
        raise ValueError("NMF input is identically zero")
    if not 1 <= p <= min(m.shape):
        raise ValueError(f"inner rank {p} out of range for {m.shape}")
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(m.shape[0], p))
    h = rng.uniform(size=(p, m.shape[1]))
    wh = w @ h
    scale = np.sqrt(np.sum(m * wh) / np.sum(wh * wh))
    w *= scale
    h *= scale

    errors = []
    for _ in range(iters):
        h = _hals_rows(h, w.T @ w, w.T @ m)
        wt = _hals_rows(np.ascontiguousarray(w.T), h @ h.T, h @ m.T)
        w = wt.T
        errors.append(frobenius_norm(m - w @ h))
    return NmfFactors(np.asfortranarray(w), np.asfortranarray(h), errors)


def kkt_residual(m, u_hat, v):
    """Largest KKT violation of ``min_{V>=0} 0.5||M - U V||^2``, relative.

    With gradient ``G = U^T (U V - M)``, positive entries need ``G == 0``
    and zero entries need ``G >= 0``. The violation is scaled by
    ``max |U^T M|``, the gradient size at ``V = 0``.
    """
    cross = u_hat.T @ m
    grad = (u_hat.T @ u_hat) @ v - cross
    viol = np.where(v > 0, np.abs(grad), np.maximum(0.0, -grad))
    scale = np.max(np.abs(cross)) if cross.size else 0.0
    return float(np.max(viol, initial=0.0) / (scale if scale > 0 else 1.0))


def nnls_fit(m, u_hat, iters=500, tol=1e-8):
    """Nonnegative coefficients ``V >= 0`` minimizing ``||M - U V||_F``.

    HALS sweeps from ``V = 0``, stopping early once :func:`kkt_residual`
    drops to `tol`.
    """
    m = np.asarray(m, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if m.ndim != 2 or u_hat.ndim != 2 or u_hat.shape[0] != m.shape[0]:
        raise ValueError(f"shape mismatch: M {m.shape} vs U {u_hat.shape}")
    gram = u_hat.T @ u_hat
    cross = u_hat.T @ m
    scale = np.max(np.abs(cross)) if cross.size else 0.0
    scale = scale if scale > 0 else 1.0
    v = np.zeros((u_hat.shape[1], m.shape[1]))
    for it in range(iters):
        _hals_rows(v, gram, cross)
        if it % 10 == 9 or it == iters - 1:
            grad = gram @ v - cross
            viol = np.where(v > 0, np.abs(grad), np.maximum(0.0, -grad))
            if np.max(viol, initial=0.0) <= tol * scale:
                break
    return np.asfortranarray(v)


def tol_nmf(m, u_approx, iters=500):
    """NMF error after replacing the basis by ``max(0, u_approx)`` and refitting."""
    m = as_matrix(m, "M")
    u_hat = relu(u_approx)
    v = nnls_fit(m, u_hat, iters=iters)
    return frobenius_norm(m - matmul(u_hat, v)) / frobenius_norm(m)


def compress_basis(u_basis, r, method="nmd_tm", params: Optional[NmdParams] = None):
    """Rank-`r` approximation of a nonnegative basis.

    ``nmd_tm`` fits ``max(0, X)`` with rank-r ``X`` and returns the clipped
    reconstruction; ``tsvd`` returns the raw truncated SVD reconstruction,
    negatives included. The error is ``||U - approx||_F / ||U||_F``.

    Returns
    -------
    approx : ndarray
    report : CompressionReport
    """
    u_basis = as_matrix(u_basis, "basis")
    t0 = time.perf_counter()
    if method == "nmd_tm":
        params = replace(params, rank=r) if params is not None else NmdParams(rank=r)
        res = fit(u_basis, params)
        approx = res.reconstruction()
    elif method == "tsvd":
        approx = truncated_svd(u_basis, r).reconstruct()
    else:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    seconds = time.perf_counter() - t0
    err = frobenius_norm(u_basis - approx) / frobenius_norm(u_basis)
    return approx, CompressionReport(method=method, rank=r, basis_rel_error=err,
                                     seconds=seconds)


def render_montage(basis, image_height, image_width, grid_cols):
    """Tile the columns of `basis` as images into one 8-bit grid.

    Each column is reshaped column-major to ``image_height x image_width``
    and rescaled to 0..255 on its own range (a constant tile becomes 0).
    Tiles fill the grid row by row, separated by 1-pixel black lines.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[0] != image_height * image_width:
        raise ValueError(f"basis of shape {basis.shape} does not hold "
                         f"{image_height}x{image_width} images")
    if grid_cols < 1:
        raise ValueError("grid_cols must be positive")
    n = basis.shape[1]
    grid_rows = max(1, -(-n // grid_cols))
    out = np.zeros((grid_rows * (image_height + 1) - 1,
                    grid_cols * (image_width + 1) - 1), dtype=np.uint8)
    for t in range(n):
        tile = basis[:, t].reshape((image_height, image_width), order="F")
        lo, hi = tile.min(), tile.max()
        if hi > lo:
            tile = np.rint((tile - lo) * (255.0 / (hi - lo)))
        else:
            tile = np.zeros_like(tile)
        r0 = (t // grid_cols) * (image_height + 1)
        c0 = (t % grid_cols) * (image_width + 1)
        out[r0:r0 + image_height, c0:c0 + image_width] = tile.astype(np.uint8)
    return out
