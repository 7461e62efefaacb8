"""Randomness-hiding wrapper for linear Gram-system solvers.

A maintained solver leaks its internal randomness through its output, which
an adaptive caller could exploit to invalidate the maintenance analysis.  The
wrapper adds Gaussian noise calibrated so the output is statistically
indistinguishable from an exact solve plus noise: for M = A^T D A it returns

    y = S(b, eps1) + alpha * S(A^T D^0.5 eta, eps2)

with eta standard normal, eps1 = eps (32 n^7)^-2, eps2 = (12 d n^6)^-2 and
alpha = (1/8) sqrt(eps/n) ||y1||_M.  The result is still a solver at accuracy
eps, but no longer linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._util import polar_normal_matrix, polar_normals, rng_from
from .errors import RankDeficient
from .matrix_core import ConstraintMatrix, PDMatrix, WeightVector
from .solver_core import SolverHandle

# eps1/eps2 underflow at large n; accuracy beyond float64 is vacuous anyway
_EPS_CLAMP = 1e-300


@dataclass
class NoisyHandle:
    """Noise-wrapped solver for A^T D A built from a linear base solver."""

    base: SolverHandle
    A: ConstraintMatrix
    w: WeightVector
    seed: int
    calls: int = field(default=0)

    def __post_init__(self):
        if not self.base.linear:
            raise ValueError("the base solver must be linear")
        self.n = self.A.n
        self.d = self.A.d
        self._sqrt_w = np.sqrt(self.w.values)

    def m_norm(self, y: np.ndarray) -> np.ndarray:
        ay = (self.A.csr @ y)
        scale = self.w.values if y.ndim == 1 else self.w.values[:, None]
        return np.sqrt(np.sum(scale * ay * ay, axis=0))

    def solve(self, b: np.ndarray, eps: float) -> np.ndarray:
        if not (0.0 < eps <= 0.5):
            raise ValueError("eps must lie in (0, 1/2]")
        n = self.n
        eps1 = max(eps * (32.0 * float(n) ** 7) ** -2, _EPS_CLAMP)
        eps2 = max((12.0 * float(self.d) * float(n) ** 6) ** -2, _EPS_CLAMP)
        b = np.asarray(b, dtype=np.float64)
        rng = rng_from(self.seed, 0x4E, self.calls)
        self.calls += 1
        if self.base.linear:
            solve1 = lambda v: self.base.as_matrix(eps1) @ v
            solve2 = lambda v: self.base.as_matrix(eps2) @ v
        else:
            solve1 = lambda v: self.base.apply(v, eps1)
            solve2 = lambda v: self.base.apply(v, eps2)
        y1 = solve1(b)
        alpha = (1.0 / 8.0) * np.sqrt(eps / n) * self.m_norm(y1)
        if b.ndim == 1:
            if not np.any(b):
                return np.zeros_like(b)
            eta = polar_normals(rng, n)
            y2 = solve2(self.A.csr.T @ (self._sqrt_w * eta))
            return y1 + alpha * y2
        k = b.shape[1]
        eta = polar_normal_matrix(rng, n, k)
        y2 = solve2(self.A.csr.T @ (self._sqrt_w[:, None] * eta))
        return y1 + alpha[None, :] * y2

    def handle(self) -> SolverHandle:
        return SolverHandle(dim=self.d, provenance="noisy", linear=False,
                            _apply=self.solve, cost_estimate=self.base.cost_estimate,
                            validity=self.base.validity)


def noisy_solve(h: NoisyHandle, b: np.ndarray, eps: float) -> np.ndarray:
    return h.solve(b, eps)


def ideal_solve(M_exact: PDMatrix, A: ConstraintMatrix, w: WeightVector,
                b: np.ndarray, eps: float, seed: int, count: int | None = None) -> np.ndarray:
    """Exact solve plus Gaussian noise with covariance beta^2 M^-1.

    beta = (1/8) sqrt(eps/n) ||M^-1 b||_M.  This is the reference law the
    noisy wrapper is tested against; with `count` set, that many independent
    draws are returned as columns.
    """
    b = np.asarray(b, dtype=np.float64)
    x = M_exact.solve(b)
    x += M_exact.solve(b - M_exact.array @ x)
    beta = (1.0 / 8.0) * np.sqrt(eps / A.n) * np.sqrt(float(x @ (M_exact.array @ x)))
    rng = rng_from(seed, 0x1D)
    chol = M_exact._chol  # lower factor; cov(L^-T z) = M^-1
    import scipy.linalg

    if count is None:
        z = polar_normals(rng, M_exact.dim)
        c = scipy.linalg.solve_triangular(chol.T, z, lower=False)
        return x + beta * c
    z = polar_normal_matrix(rng, M_exact.dim, count)
    c = scipy.linalg.solve_triangular(chol.T, z, lower=False)
    return x[:, None] + beta * c
