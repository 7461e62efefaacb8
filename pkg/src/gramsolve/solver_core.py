"""Solver contract plus conversions between approximate inverses and solvers.

A solver for a positive definite matrix M is any callable S(b, eps) whose
output x satisfies ||x - M^-1 b||_M^2 <= eps * ||M^-1 b||_M^2 (with high
probability for randomized solvers).  `richardson_solver` upgrades a constant
factor approximate inverse to a solver at any accuracy; `certify_solver` goes
the other way and checks that a linear solver's matrix is spectrally close to
the true inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log, sqrt
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergence, NotLinear, StaleHandle
from ._util import rng_from

# Below this accuracy a float64 iteration is saturated; the closed form
# iteration counts and residual checks stop being meaningful.
_FP_FLOOR = 1e-30


@dataclass
class SolverHandle:
    """Callable solver with provenance metadata.

    ``apply(b, eps)`` accepts a single right-hand side of shape (dim,) or a
    batch of shape (dim, k).  Handles are immutable snapshots; ones produced
    by a maintenance session expire when the session advances (checked through
    ``validity``).
    """

    dim: int
    provenance: str  # exact | maintained | noisy | richardson
    linear: bool
    _apply: Callable[[np.ndarray, float], np.ndarray]
    cost_estimate: float = 0.0
    validity: Optional[Callable[[], bool]] = None
    calls: int = 0
    work: float = 0.0
    matrix_key: Optional[Callable[[float], object]] = None  # cache key for as_matrix
    _matrix_cache: dict = field(default_factory=dict, repr=False)

    def apply(self, b: np.ndarray, eps: float) -> np.ndarray:
        if self.validity is not None and not self.validity():
            raise StaleHandle("handle expired: the producing session has advanced")
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.dim:
            raise ValueError(f"right-hand side has leading dimension {b.shape[0]}, expected {self.dim}")
        if not (0.0 < eps):
            raise ValueError("eps must be positive")
        self.calls += 1
        self.work += self.cost_estimate
        return self._apply(b, float(eps))

    __call__ = apply

    def as_matrix(self, eps: float) -> np.ndarray:
        """Materialize Q_eps with Q_eps b = apply(b, eps); linear handles only."""
        if not self.linear:
            raise NotLinear("only linear solvers have a per-eps matrix")
        key = self.matrix_key(float(eps)) if self.matrix_key is not None else float(eps)
        mat = self._matrix_cache.get(key)
        if mat is None:
            mat = self.apply(np.eye(self.dim), float(eps))
            self._matrix_cache[key] = mat
        return mat


@dataclass
class ApproxInverse:
    """Symmetric linear map N with (1/L) N^-1 <= M <= L N^-1 for a known L >= 1.

    ``apply_N`` must be linear, symmetric and accept (dim,) or (dim, k)
    arrays.  When L is None it is estimated at solver-construction time.
    """

    dim: int
    apply_N: Callable[[np.ndarray], np.ndarray]
    L: Optional[float] = None


def iteration_count(L: float, eps: float) -> int:
    """Richardson step count ceil(0.5 log(eps L^-4) / log(1 - L^-2)).

    Capped at 10 * ceil(L^2 ln(1/eps)) to guard against mis-specified L.
    """
    eps = max(float(eps), _FP_FLOOR)
    if L <= 1.0:
        return 0
    arg = eps * L ** -4.0
    if arg >= 1.0:
        return 0
    z = ceil(0.5 * log(arg) / log(1.0 - L ** -2.0))
    cap = 10 * ceil(L * L * log(1.0 / eps))
    return max(0, min(z, cap))


def estimate_condition_bound(inv: ApproxInverse, M_apply: Callable[[np.ndarray], np.ndarray],
                             seed: int = 0, iters: int = 20) -> float:
    """Estimate L via power iteration on N^{1/2} M N^{1/2} applied implicitly.

    NM is similar to the symmetric product, so its extreme eigenvalues are the
    bounds we need; the result is doubled as a safety factor.
    """
    rng = rng_from(seed, 0x4C)
    d = inv.dim

    def nm(v: np.ndarray) -> np.ndarray:
        return inv.apply_N(M_apply(v))

    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    lam_hi = 1.0
    for _ in range(iters):
        w = nm(v)
        lam_hi = float(np.linalg.norm(w))
        if lam_hi == 0.0:
            break
        v = w / lam_hi
    shift = 1.25 * max(lam_hi, 1e-12)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = shift * v - nm(v)
        mu = float(np.linalg.norm(w))
        if mu == 0.0:
            break
        v = w / mu
    lam_lo = max(shift - mu, 1e-12)
    return 2.0 * max(lam_hi, 1.0 / lam_lo, 1.0)


def richardson_solver(inv: ApproxInverse, M_apply: Callable[[np.ndarray], np.ndarray],
                      provenance: str = "richardson",
                      cost_estimate: float = 0.0,
                      check_convergence: bool = True,
                      validity: Optional[Callable[[], bool]] = None,
                      seed: int = 0) -> SolverHandle:
    """Linear solver from a preconditioner: Q_eps = (1/L) N sum_k (I - MN/L)^k.

    The error contracts geometrically with ratio (1 - 1/L^2); the iteration
    count comes from `iteration_count`.  Raises NonConvergence when the
    measured N-weighted residual exceeds what a correct L permits.
    """
    L = inv.L if inv.L is not None else estimate_condition_bound(inv, M_apply, seed=seed)
    if not np.isfinite(L) or L < 1.0:
        raise ValueError(f"L must be a finite value >= 1, got {L}")
    inv_l = 1.0 / L

    def z_of(eps: float) -> int:
        # anything below 1e-6 runs to float64 saturation, so those calls share
        # one iteration count (and one materialized matrix)
        return iteration_count(L, eps if eps >= 1e-6 else _FP_FLOOR)

    def apply(b: np.ndarray, eps: float) -> np.ndarray:
        z = z_of(eps)
        x = inv_l * inv.apply_N(b)
        for _ in range(z):
            x = x + inv_l * inv.apply_N(b - M_apply(x))
        # below ~1e-8 the measured residual is rounding-dominated on
        # ill-conditioned systems and says nothing about L
        if check_convergence and eps >= 1e-8:
            r = b - M_apply(x)
            num = np.sum(r * inv.apply_N(r), axis=0)
            den = np.sum(b * inv.apply_N(b), axis=0)
            if np.any(num > eps * L * L * den * (1.0 + 1e-6) + 1e-280):
                raise NonConvergence(
                    f"residual exceeds contract after {z} steps; supplied L={L} is too small")
        return x

    handle = SolverHandle(dim=inv.dim, provenance=provenance, linear=True,
                          _apply=apply, cost_estimate=cost_estimate, validity=validity)
    handle.matrix_key = z_of
    return handle


@dataclass
class CertifyReport:
    certified: bool
    lam_min: float
    lam_max: float
    band: float  # certification requires e^-band <= lam <= e^band

    def __bool__(self) -> bool:
        return self.certified


def certify_solver(S: SolverHandle, M, eps: float, trials: int) -> CertifyReport:
    """Check Q_eps^T M Q_eps ~ M^-1 within the e^{+-4 sqrt(eps)} band.

    Reconstructs Q_eps column by column from basis vectors, so S must be
    linear and the trial budget must cover at least dim applications.
    """
    import scipy.linalg

    if not S.linear:
        raise NotLinear("certification reconstructs the solver matrix; solver is not linear")
    if trials < S.dim:
        raise ValueError(f"need at least dim={S.dim} trials to reconstruct the solver matrix")
    arr = M.array if hasattr(M, "array") else np.asarray(M, dtype=np.float64)
    Q = S.as_matrix(eps)
    G = Q.T @ arr @ Q
    G = 0.5 * (G + G.T)
    Minv = scipy.linalg.inv(arr)
    Minv = 0.5 * (Minv + Minv.T)
    lam = scipy.linalg.eigh(G, Minv, eigvals_only=True)
    band = 4.0 * sqrt(eps)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    ok = lam_min >= np.exp(-band) * (1.0 - 1e-9) and lam_max <= np.exp(band) * (1.0 + 1e-9)
    return CertifyReport(certified=bool(ok), lam_min=lam_min, lam_max=lam_max, band=band)
