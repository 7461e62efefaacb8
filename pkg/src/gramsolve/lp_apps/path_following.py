"""Short-step log-barrier path following over the maintained Gram solvers.

Each Newton step solves (A D A^T) y = A D g where D is the inverse barrier
Hessian diag(1/w), w_i = (u_i - x_i)^-2 + (x_i - l_i)^-2.  Those systems run
through a sigma-mode maintenance session (the weights drift slowly along the
path) wrapped in the noise-adding solver so the adaptive iteration cannot
correlate with the session's internal randomness.  The returned point is
eps-optimal and almost feasible: the equality residual is certified small in
the norm that measures how far the point must move, relative to its slacks,
to restore A x = b exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log, sqrt

import numpy as np

from ..errors import Infeasible, IterationLimit, StabilityViolation
from ..maintenance import MaintenanceSession, StabilityConfig
from ..matrix_core import WeightVector
from ..noisy import NoisyHandle
from .problem import LPProblem

STEP_DENOM = 32.0          # path parameter grows by 1 / (32 sqrt(n)) per round
CENTER_TOL = 1.0 / 32.0    # Newton decrement kept at or below this on the path
INNER_EPS = 1e-12          # accuracy requested from the noisy Gram solves


@dataclass
class LPStats:
    objective: float
    iterations: int
    resampled: int
    residual: float
    dual: np.ndarray
    t_final: float
    restarts: int = 0
    notes: list = field(default_factory=list)


def _session_config(seed: int, mode: str) -> StabilityConfig:
    # coarse score estimates and the tight band: spurious resampling is
    # harmless at LP scale and keeps the kept weights fresh
    return StabilityConfig(mode=mode, beta=1e8, seed=seed, eps_tau=0.3,
                           thresholds=(0.9, 1.1), check_stability=True)


class _NewtonEngine:
    """One maintenance session plus the barrier calculus for a fixed problem."""

    def __init__(self, p: LPProblem, seed: int, mode: str = "sigma"):
        self.p = p
        self.cm = p.constraints          # A^T as the tall matrix
        self.At = self.cm.csr            # n x d
        self.A = p.A                     # d x n
        self.seed = seed
        self.session: MaintenanceSession | None = None
        self.iterations = 0
        self.max_iter = None
        self._noisy_count = 0

    def barrier_weights(self, x: np.ndarray) -> np.ndarray:
        su = self.p.u - x
        sl = x - self.p.l
        return 1.0 / (1.0 / su ** 2 + 1.0 / sl ** 2)

    def gradient(self, x: np.ndarray, t: float) -> np.ndarray:
        return t * self.p.c + 1.0 / (self.p.u - x) - 1.0 / (x - self.p.l)

    def _advance_session(self, d_w: np.ndarray) -> None:
        if self.session is None:
            cfg = _session_config(self.seed, "sigma")
            self.session = MaintenanceSession(self.p.constraints, WeightVector(d_w), cfg)
            return
        try:
            self.session.advance(d_w)
        except StabilityViolation:
            # split the weight move into log-space midpoints until each piece
            # passes the stability gate
            prev = self.session.d_prev
            ratio = np.log(d_w) - np.log(prev)
            pieces = int(min(64, 2 ** ceil(np.log2(max(
                np.linalg.norm(ratio), np.max(np.abs(ratio))) / 0.09 + 1e-12))))
            for j in range(1, pieces + 1):
                mid = prev * np.exp(ratio * (j / pieces))
                self.session.advance(mid)

    def newton_step(self, x: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        """Returns (dx, decrement) for the equality-constrained barrier.

        Infeasible-start form: the current equality residual enters the
        right-hand side, so each step contracts accumulated solver noise in
        A x - b rather than carrying it to the end of the path.
        """
        d_w = self.barrier_weights(x)
        self._advance_session(d_w)
        g = self.gradient(x, t)
        noisy = NoisyHandle(base=self.session.handle, A=self.cm,
                            w=WeightVector(d_w), seed=self.seed + 7919 * self._noisy_count)
        self._noisy_count += 1
        resid = self.A @ x - self.p.b
        # throttle the restoration so its Newton component stays inside the
        # trust region; once the residual reaches the solver noise floor the
        # full correction is applied every step
        rho_sq = float(resid @ self.session.handle.apply(resid, 0.25))
        rho = sqrt(max(rho_sq, 0.0))
        theta = 1.0 if rho <= 0.015 else 0.015 / rho
        rhs = self.A @ (d_w * g) - theta * resid
        y = noisy.solve(rhs, INNER_EPS)
        dx = d_w * (self.At @ y - g)
        lam = sqrt(float(np.sum(dx * dx / d_w)))
        self.iterations += 1
        if self.max_iter is not None and self.iterations > self.max_iter:
            raise IterationLimit(f"exceeded {self.max_iter} Newton steps")
        return dx, lam, y

    def center(self, x: np.ndarray, t: float, tol: float, dual: bool = False):
        lam = np.inf
        y = None
        while lam > tol:
            dx, lam, y = self.newton_step(x, t)
            step = 1.0 if lam <= 0.25 else 1.0 / (1.0 + lam)
            x_new = x + step * dx
            # interior safeguard: the damped step stays inside analytically,
            # shrink only on floating point grazing
            while np.any(x_new >= self.p.u) or np.any(x_new <= self.p.l):
                step *= 0.5
                if step < 1e-18:
                    raise IterationLimit("step collapsed at the boundary")
                x_new = x + step * dx
            x = x_new
        return (x, y) if dual else x


def weak_residual_norm(p: LPProblem, y: np.ndarray) -> float:
    """||A y - b|| in the (A S^2 A^T)^-1 sense, S_ii = min(u_i - y_i, y_i - l_i).

    This is the minimum of ||S^-1 delta|| over corrections delta with
    A (y + delta) = b: small values certify a slack-relative repair exists.
    """
    s = np.minimum(p.u - y, y - p.l)
    r = p.A @ y - p.b
    As = p.A.multiply(s[None, :] ** 2)
    M = (As @ p.A.T).toarray()
    M = 0.5 * (M + M.T)
    return float(np.sqrt(max(r @ np.linalg.solve(M, r), 0.0)))


def solve_lp(p: LPProblem, eps: float, seed: int = 0,
             max_iter: int | None = None) -> tuple[np.ndarray, LPStats]:
    """eps-optimal, almost-feasible point for min c^T x, A x = b, l <= x <= u.

    Follows the central path with multiplicative parameter steps of size
    1/(32 sqrt(n)), keeping the Newton decrement at most 1/32 so consecutive
    slack weights satisfy the stability bounds the maintenance session needs.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = p.n
    eng = _NewtonEngine(p, seed)
    eng.max_iter = max_iter if max_iter is not None else int(
        ceil(64.0 * sqrt(n) * log(max(n * p.U / eps, 3.0))))
    x = p.x0.copy()
    t = 1.0 / max(1.0, float(np.max(np.abs(p.c))))
    x = eng.center(x, t, CENTER_TOL)
    t_end = 4.0 * n / eps
    growth = 1.0 + 1.0 / (STEP_DENOM * sqrt(n))
    while t < t_end:
        t = min(t * growth, t_end)
        # one Newton step per parameter bump; quadratic convergence keeps the
        # decrement well under the short-step budget
        dx, lam, _ = eng.newton_step(x, t)
        x = x + (dx if lam <= 0.25 else dx / (1.0 + lam))
        if lam > 0.2:
            x = eng.center(x, t, CENTER_TOL)
    x, y_last = eng.center(x, t, min(CENTER_TOL, 0.01), dual=True)
    resid = weak_residual_norm(p, x)
    sess = eng.session
    stats = LPStats(
        objective=float(p.c @ x),
        iterations=eng.iterations,
        resampled=sess.total_resampled if sess else 0,
        residual=resid,
        dual=(y_last / t) if y_last is not None else np.zeros(p.d),
        t_final=t,
        restarts=sess.restarts if sess else 0,
        notes=list(sess.notes) if sess else [],
    )
    return x, stats
