"""Momentum-accelerated alternating minimization for ReLU matrix decomposition.

Given a sparse nonnegative ``M`` we look for factors ``U`` (m x r) and
``V`` (r x n) such that ``max(0, UV)`` approximates ``M``. A latent matrix
``W`` with ``max(0, W) = M`` decouples the ReLU, and the solver minimizes::

    0.5*||W - UV||_F^2 + 0.5*lam*||U||_F^2 + 0.5*lam*||V||_F^2

by cycling through four blocks. ``W`` and ``X = UV`` get a positive
extrapolation step with weight ``alpha``; ``U`` and ``V`` get a convex
combination step ``beta*new + (1 - beta)*old``. Setting ``lam=0`` and
``beta=1`` gives the plain three-block scheme (with extrapolation ``alpha``
on W and X only).
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np

from .linalg import (
    SupportPattern,
    as_matrix,
    frobenius_norm,
    matmul,
    relu,
    ridge_solve_left,
    ridge_solve_right,
    support_pattern,
    truncated_svd,
)

logger = logging.getLogger(__name__)

STOP_REASONS = ("max_iters", "time_limit", "rel_change", "numeric_failure")

# consecutive small changes needed to trigger the rel_change stop
REL_CHANGE_PATIENCE = 5


class NumericFailure(ArithmeticError):
    """An iterate became non-finite or a subproblem could not be solved."""


@dataclass(frozen=True)
class NmdParams:
    """Solver settings.

    ``lam`` is the Tikhonov weight (``lambda`` is reserved in Python).
    ``svd_method`` selects how the rank-r initialization is computed
    (see :func:`nmdtm.linalg.truncated_svd`); ``seed`` only matters for
    the randomized variant.
    """

    rank: int
    alpha: float = 0.95
    beta: float = 0.95
    lam: float = 1e-4
    max_iters: int = 1000
    time_limit: Optional[float] = None
    rel_change_tol: Optional[float] = None
    seed: int = 0
    svd_method: str = "auto"

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank}")
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError(f"max_iters must be a nonnegative integer, got {self.max_iters}")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")
        if self.rel_change_tol is not None and not self.rel_change_tol >= 0:
            raise ValueError(f"rel_change_tol must be >= 0, got {self.rel_change_tol}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")

    @classmethod
    def three_block(cls, rank, alpha=0.7, **kw):
        """Parameters of the unregularized three-block scheme (lam=0, beta=1)."""
        return cls(rank=rank, alpha=alpha, beta=1.0, lam=0.0, **kw)


@dataclass
class NmdState:
    """Iterates of the solver.

    ``w, u, v, x`` hold the current full iterates (after extrapolation or
    combination). The ``*_prev`` fields hold the previous full iterates,
    which are the bases the recurrences extrapolate from, and ``*_half``
    the most recent half-step values (``None`` before the first step).
    """

    m: np.ndarray
    pattern: SupportPattern
    w: np.ndarray
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    w_prev: np.ndarray
    u_prev: np.ndarray
    v_prev: np.ndarray
    x_prev: np.ndarray
    w_half: Optional[np.ndarray] = None
    u_half: Optional[np.ndarray] = None
    v_half: Optional[np.ndarray] = None
    x_half: Optional[np.ndarray] = None
    k: int = 0
    m_norm: float = 1.0


@dataclass(frozen=True)
class TraceRecord:
    k: int
    seconds: float
    rel_error: float
    objective: float
    # relative error of the un-extrapolated product U V
    rel_error_half: float = float("nan")


@dataclass
class ConvergenceTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, rec):
        if self.records:
            last = self.records[-1]
            if rec.k <= last.k:
                raise ValueError("trace iteration counter must increase")
            if rec.seconds < last.seconds:
                raise ValueError("trace timestamps must be nondecreasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def rel_errors(self):
        return np.array([r.rel_error for r in self.records])

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    @property
    def seconds(self):
        return np.array([r.seconds for r in self.records])

    @property
    def final_rel_error(self):
        return self.records[-1].rel_error if self.records else float("nan")


@dataclass
class NmdResult:
    u: np.ndarray
    v: np.ndarray
    trace: ConvergenceTrace
    stop_reason: str
    initial_rel_error: float
    message: str = ""
    # time spent before the first iteration
    setup_seconds: float = 0.0

    @property
    def iterations(self):
        return len(self.trace)

    @property
    def mean_iter_seconds(self):
        if not self.trace.records:
            return float("nan")
        return (self.trace[-1].seconds - self.setup_seconds) / len(self.trace)

    @property
    def rel_error(self):
        if self.trace.records:
            return self.trace.final_rel_error
        return self.initial_rel_error

    def reconstruction(self):
        return relu(matmul(self.u, self.v))


def relative_error(m, x):
    """``||M - max(0, X)||_F / ||M||_F``."""
    m = np.asarray(m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if m.shape != x.shape:
        raise ValueError(f"shape mismatch: M {m.shape} vs X {x.shape}")
    norm = frobenius_norm(m)
    if norm == 0:
        raise ValueError("relative error undefined for an all-zero M")
    return frobenius_norm(m - relu(x)) / norm


def objective(w, u, v, lam, uv=None):
    """Regularized fit ``0.5||W - UV||^2 + 0.5*lam*(||U||^2 + ||V||^2)``.

    `uv` may pass a precomputed product ``U V``.
    """
    if uv is None:
        uv = matmul(u, v)
    fit_term = frobenius_norm(np.asarray(w) - uv) ** 2
    return 0.5 * fit_term + 0.5 * lam * (
        frobenius_norm(u) ** 2 + frobenius_norm(v) ** 2)


def _relu_error(m, x, m_norm):
    d = np.maximum(x, 0.0)
    np.subtract(m, d, out=d)
    return frobenius_norm(d) / m_norm


def _extrapolate(half, base, weight):
    # half + weight*(half - base), evaluated in that order
    out = np.subtract(half, base)
    out *= weight
    out += half
    return out


def _w_half_step(m, pattern, x):
    # closest W to X subject to max(0, W) = M
    half = np.minimum(x, 0.0)
    np.copyto(half, m, where=pattern.positive)
    return half


def initialize(m, params):
    """Build the starting state from the best rank-r approximation of `m`.

    The truncated SVD is split evenly, ``U0 = U_r sqrt(S)`` and
    ``V0 = sqrt(S) V_r^T``; ``X0 = U0 V0`` and ``W0`` equals ``M`` on the
    positive entries and ``min(0, X0)`` elsewhere.
    """
    m = as_matrix(m, "M")
    pattern = support_pattern(m)
    m_norm = frobenius_norm(m)
    if m_norm == 0:
        raise ValueError("M is identically zero")
    if params.rank > min(m.shape):
        raise ValueError(f"rank {params.rank} exceeds min{m.shape}")
    svd = truncated_svd(m, params.rank, method=params.svd_method, seed=params.seed)
    root = np.sqrt(svd.sigma)
    u = np.asfortranarray(svd.u * root)
    v = np.asfortranarray(root[:, None] * svd.vt)
    x = matmul(u, v)
    w = _w_half_step(m, pattern, x)
    return NmdState(m=m, pattern=pattern, w=w, u=u, v=v, x=x,
                    w_prev=w, u_prev=u, v_prev=v, x_prev=x, m_norm=m_norm)


def update_w(state, m, alpha):
    """Project onto ``max(0, W) = M`` from ``X^k`` and extrapolate from ``W^k``.

    Extrapolation acts on the zero set only; positive entries stay pinned
    to ``M``. The extrapolated values are not clamped.
    """
    half = _w_half_step(m, state.pattern, state.x)
    new = _extrapolate(half, state.w, alpha)
    np.copyto(new, m, where=state.pattern.positive)
    state.w_prev, state.w_half, state.w = state.w, half, new
    return state


def update_u(state, lam, beta):
    half = ridge_solve_right(state.w, state.v, lam)
    new = _extrapolate(half, state.u, beta - 1.0)
    state.u_prev, state.u_half, state.u = state.u, half, new
    return state


def update_v(state, lam, beta):
    # uses the freshly combined U^{k+1}
    half = ridge_solve_left(state.w, state.u, lam)
    new = _extrapolate(half, state.v, beta - 1.0)
    state.v_prev, state.v_half, state.v = state.v, half, new
    return state


def update_x(state, alpha):
    half = matmul(state.u, state.v)
    new = _extrapolate(half, state.x, alpha)
    state.x_prev, state.x_half, state.x = state.x, half, new
    return state


def _check_finite(state, *names):
    for name in names:
        if not np.isfinite(getattr(state, name)).all():
            raise NumericFailure(f"iterate {name.upper()} became non-finite "
                                 f"at iteration {state.k + 1}")


def step(state, m, params, seconds=0.0, trace=None):
    """Run one W, U, V, X cycle in place and return the new trace record.

    The record holds the relative error of the extrapolated ``X^{k+1}`` and
    the objective at ``(W^{k+1}, U^{k+1}, V^{k+1})``. If `trace` is given the
    record is appended to it.
    """
    try:
        update_w(state, m, params.alpha)
        update_u(state, params.lam, params.beta)
        _check_finite(state, "u")
        update_v(state, params.lam, params.beta)
        _check_finite(state, "v")
        update_x(state, params.alpha)
        _check_finite(state, "w", "x")
    except np.linalg.LinAlgError as exc:
        raise NumericFailure(f"iteration {state.k + 1}: {exc}") from exc
    state.k += 1
    rec = TraceRecord(
        k=state.k,
        seconds=seconds,
        rel_error=_relu_error(m, state.x, state.m_norm),
        objective=objective(state.w, state.u, state.v, params.lam, uv=state.x_half),
        rel_error_half=_relu_error(m, state.x_half, state.m_norm),
    )
    if trace is not None:
        trace.append(rec)
    return rec


def fit(m, params, clock: Optional[Callable[[], float]] = time.perf_counter,
        callback=None):
    """Fit ``max(0, UV) ~ M``.

    Parameters
    ----------
    m : array_like, shape (m, n)
        Nonnegative data matrix.
    params : NmdParams
    clock : callable or None
        Returns seconds. Trace timestamps are measured from the call,
        initialization included. ``None`` records 0 for every timestamp,
        which makes traces byte-reproducible; a time limit is then ignored.
    callback : callable, optional
        Called as ``callback(state, record)`` after every iteration.

    Returns
    -------
    NmdResult
        Factors from the last finite iterate, the trace, and why the loop
        stopped.
    """
    if clock is None:
        def clock():
            return 0.0
        if params.time_limit is not None:
            logger.warning("time_limit ignored without a clock")
            params = replace(params, time_limit=None)
    t0 = clock()
    m = as_matrix(m, "M")
    state = initialize(m, params)
    setup = clock() - t0
    trace = ConvergenceTrace()
    prev_err = initial = relative_error(m, state.x)
    small = 0
    reason = "max_iters"
    message = ""
    u_out, v_out = state.u, state.v
    for _ in range(params.max_iters):
        try:
            rec = step(state, m, params)
        except NumericFailure as exc:
            reason, message = "numeric_failure", str(exc)
            logger.warning("stopping: %s", exc)
            break
        elapsed = clock() - t0
        rec = replace(rec, seconds=elapsed)
        trace.append(rec)
        u_out, v_out = state.u, state.v
        if callback is not None:
            callback(state, rec)
        if params.time_limit is not None and elapsed >= params.time_limit:
            reason = "time_limit"
            break
        if params.rel_change_tol is not None:
            small = small + 1 if abs(rec.rel_error - prev_err) <= params.rel_change_tol else 0
            if small >= REL_CHANGE_PATIENCE:
                reason = "rel_change"
                break
        prev_err = rec.rel_error
    return NmdResult(u=u_out, v=v_out, trace=trace, stop_reason=reason,
                     initial_rel_error=initial, message=message, setup_seconds=setup)
