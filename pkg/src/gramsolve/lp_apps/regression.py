"""l1-penalized dual solves and l1 / linf regression reductions.

min_y b^T y + ||A y + c||_1 is the negated dual of the box primal
min c^T x over A^T x = b, -1 <= x <= 1, so one path-following solve delivers
the minimizer as the equality multiplier.  linf regression stacks A with a
level variable so the same machinery applies.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .path_following import LPStats, solve_lp
from .problem import LPProblem


def solve_lp_dual(A, b, c, x0, eps: float, seed: int = 0,
                  max_iter: int | None = None) -> tuple[np.ndarray, float, LPStats]:
    """Minimize b^T y + ||A y + c||_1 given a strict primal interior point.

    x0 must satisfy A^T x0 = b with -1 < x0 < 1; the returned y is the
    equality multiplier of the box primal at the end of the path.
    """
    A = scipy.sparse.csr_matrix(A, dtype=np.float64)
    n, d = A.shape
    b = np.asarray(b, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    p = LPProblem(A=A.T.tocsr(), b=b, c=c, l=-np.ones(n), u=np.ones(n), x0=x0)
    _, stats = solve_lp(p, eps, seed=seed, max_iter=max_iter)
    y = stats.dual
    value = float(b @ y + np.abs(A @ y + c).sum())
    return y, value, stats


def l1_regress(A, c, eps: float, seed: int = 0) -> tuple[np.ndarray, float]:
    """x with ||A x - c||_1 <= min_y ||A y - c||_1 + eps ||c||_1."""
    A = scipy.sparse.csr_matrix(A, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).ravel()
    scale = float(np.abs(c).sum())
    if scale == 0.0:
        raise ValueError("c must be nonzero")
    d = A.shape[1]
    x, _, _ = solve_lp_dual(A, b=np.zeros(d), c=-c, x0=np.zeros(A.shape[0]),
                            eps=0.5 * eps * scale, seed=seed)
    return x, float(np.abs(A @ x - c).sum())


def linf_regress(A, c, eps: float, seed: int = 0) -> tuple[np.ndarray, float]:
    """x with ||A x - c||_inf <= min_y ||A y - c||_inf + eps ||c||_inf.

    Solves min over (x, t) of (-2n + 1/2) t + ||A x - c - t 1||_1 +
    ||A x - c + t 1||_1, whose stacked system admits the explicit interior
    start ((2n - 1/2) / (2n)) (1, -1).
    """
    A = scipy.sparse.csr_matrix(A, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).ravel()
    scale = float(np.abs(c).max(initial=0.0))
    if scale == 0.0:
        raise ValueError("c must have a nonzero entry")
    n, d = A.shape
    ones = np.ones((n, 1))
    stacked = scipy.sparse.hstack([
        scipy.sparse.vstack([A, A]),
        scipy.sparse.csr_matrix(np.vstack([-ones, ones])),
    ]).tocsr()
    b = np.concatenate([np.zeros(d), [-2.0 * n + 0.5]])
    c_pen = np.concatenate([-c, -c])
    x0 = ((2.0 * n - 0.5) / (2.0 * n)) * np.concatenate([np.ones(n), -np.ones(n)])
    z, _, _ = solve_lp_dual(stacked, b=b, c=c_pen, x0=x0,
                            eps=0.5 * eps * scale, seed=seed)
    x = z[:d]
    return x, float(np.abs(A @ x - c).max())
