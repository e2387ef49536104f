"""Dense linear-algebra substrate.

Matrices are plain float64 numpy arrays stored in column-major (Fortran)
order. Nothing in here knows about the decomposition algorithm.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

# above this size truncated_svd switches to the randomized range finder
EXACT_SVD_LIMIT = 2048


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """An unregularized normal-equation system is singular."""

    def __init__(self, msg, rank=None, size=None):
        super().__init__(msg)
        self.rank = rank
        self.size = size


def as_matrix(a, name="matrix"):
    """Return `a` as a finite 2-D float64 array in column-major order."""
    out = np.asfortranarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check.

    The product is delegated to BLAS dgemm; for a fixed thread count the
    summation order (and so the result) is reproducible.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    # (B^T A^T)^T comes out of BLAS already column-major
    return (b.T @ a.T).T


def frobenius_norm(a):
    a = np.asarray(a, dtype=np.float64).ravel(order="K")
    return float(np.sqrt(np.dot(a, a)))


def relu(a):
    return np.maximum(np.asfortranarray(a, dtype=np.float64), 0.0)


@dataclass(frozen=True)
class SupportPattern:
    """Partition of the indices of a nonnegative matrix into zeros and positives.

    Attributes
    ----------
    positive : ndarray of bool
        Mask of the strictly positive entries; its complement is the zero set.
    """

    positive: np.ndarray

    @property
    def shape(self):
        return self.positive.shape

    @property
    def zero(self):
        return ~self.positive

    @property
    def zero_set(self):
        return [tuple(map(int, ij)) for ij in np.argwhere(self.zero)]

    @property
    def positive_set(self):
        return [tuple(map(int, ij)) for ij in np.argwhere(self.positive)]

    def n_zero(self):
        return int(self.positive.size - np.count_nonzero(self.positive))

    def n_positive(self):
        return int(np.count_nonzero(self.positive))


def support_pattern(m):
    """Split the indices of the data matrix `m` by ``m_ij == 0`` vs ``m_ij > 0``."""
    m = as_matrix(m, "data matrix")
    neg = np.argwhere(m < 0)
    if len(neg):
        i, j = map(int, neg[0])
        raise ValueError(
            f"data matrix must be nonnegative; entry ({i}, {j}) = {m[i, j]!r}")
    return SupportPattern(positive=np.asfortranarray(m > 0))


def _spd_solve(gram, rhs, lam):
    """Solve ``(gram + lam*I) x = rhs`` for a symmetric PSD `gram`.

    For ``lam > 0`` the system is positive definite and a plain Cholesky
    factorization is used. At ``lam == 0`` a pivoted Cholesky factorization
    exposes the numerical rank, and a singular system is reported instead
    of being regularized.
    """
    r = gram.shape[0]
    if lam > 0:
        a = gram + lam * np.eye(r)
        return sla.cho_solve(sla.cho_factor(a, lower=True), rhs)
    c, piv, rank, info = lapack.dpstrf(np.array(gram, order="F"), lower=1)
    if info < 0:
        raise ValueError(f"dpstrf: illegal argument {-info}")
    if rank < r:
        raise RankDeficiencyError(
            f"normal-equation matrix is rank deficient (numerical rank "
            f"{rank} < {r}) and lambda == 0", rank=rank, size=r)
    lower = np.tril(c)
    p = piv - 1
    y = sla.solve_triangular(lower, rhs[p], lower=True)
    z = sla.solve_triangular(lower.T, y, lower=False)
    x = np.empty_like(z)
    x[p] = z
    return x


def ridge_solve_right(w, v, lam):
    """Return ``argmin_U 0.5*||W - U V||_F^2 + 0.5*lam*||U||_F^2``.

    Solves ``U (V V^T + lam I) = W V^T`` through an r x r factorization.
    """
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if w.ndim != 2 or v.ndim != 2 or w.shape[1] != v.shape[1]:
        raise ShapeError(f"ridge_solve_right: W {w.shape} and V {v.shape} "
                         "must have the same number of columns")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    gram = v @ v.T
    rhs = v @ w.T
    return np.asfortranarray(_spd_solve(gram, rhs, lam).T)


def ridge_solve_left(w, u, lam):
    """Return ``argmin_V 0.5*||W - U V||_F^2 + 0.5*lam*||V||_F^2``.

    Solves ``(U^T U + lam I) V = U^T W``.
    """
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if w.ndim != 2 or u.ndim != 2 or w.shape[0] != u.shape[0]:
        raise ShapeError(f"ridge_solve_left: W {w.shape} and U {u.shape} "
                         "must have the same number of rows")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    gram = u.T @ u
    rhs = u.T @ w
    return np.asfortranarray(_spd_solve(gram, rhs, lam))


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    @property
    def rank(self):
        return self.sigma.shape[0]

    def reconstruct(self):
        return np.asfortranarray((self.u * self.sigma) @ self.vt)


def _fix_signs(u, vt):
    # largest-magnitude entry of each column of u made positive; argmax
    # returns the lowest row index on ties
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def _randomized_svd(m, r, seed, oversample=10, power_iters=2):
    rng = np.random.default_rng(seed)
    k = min(r + oversample, min(m.shape))
    q, _ = np.linalg.qr(m @ rng.standard_normal((m.shape[1], k)))
    for _ in range(power_iters):
        q, _ = np.linalg.qr(m.T @ q)
        q, _ = np.linalg.qr(m @ q)
    ub, s, vt = np.linalg.svd(q.T @ m, full_matrices=False)
    return q @ ub[:, :r], s[:r], vt[:r]


def truncated_svd(m, r, method="auto", seed=0):
    """Top-`r` singular triplets of `m`.

    Parameters
    ----------
    m : array_like, shape (rows, cols)
    r : int
        Number of triplets, ``1 <= r <= min(rows, cols)``.
    method : {"auto", "exact", "randomized"}
        ``"auto"`` uses the exact dense decomposition when
        ``min(rows, cols) <= EXACT_SVD_LIMIT`` and a seeded randomized range
        finder (oversampling 10, two power iterations) otherwise.
    seed : int
        Seed for the randomized method.

    Returns
    -------
    SvdFactors
        Signs fixed so the largest-magnitude entry of each left singular
        vector is positive.
    """
    m = as_matrix(m)
    r = int(r)
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"rank {r} out of range for a {m.shape} matrix")
    if method == "auto":
        method = "exact" if min(m.shape) <= EXACT_SVD_LIMIT else "randomized"
    if method == "exact":
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        u, s, vt = u[:, :r], s[:r], vt[:r]
    elif method == "randomized":
        u, s, vt = _randomized_svd(m, r, seed)
    else:
        raise ValueError(f"unknown svd method {method!r}")
    u, vt = _fix_signs(u, vt)
    return SvdFactors(np.asfortranarray(u), np.asarray(s), np.asfortranarray(vt))
