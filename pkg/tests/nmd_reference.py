"""Plain three-block ReLU decomposition loop, written without nmdtm internals.

Used as an oracle for the lam=0, beta=1 corner of the solver.
"""
import numpy as np


def three_block(m, u, v, alpha, iters):
    """Yield ``(W, U, V, X)`` after each of `iters` iterations from ``(U, V)``."""
    pos = m > 0
    x = u @ v
    w = np.where(pos, m, np.minimum(x, 0.0))
    for _ in range(iters):
        w_half = np.where(pos, m, np.minimum(x, 0.0))
        w = w_half + alpha * (w_half - w)
        u = np.linalg.solve(v @ v.T, v @ w.T).T
        v = np.linalg.solve(u.T @ u, u.T @ w)
        x_half = u @ v
        x = x_half + alpha * (x_half - x)
        yield w, u, v, x
