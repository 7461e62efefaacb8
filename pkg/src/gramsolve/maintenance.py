"""Inverse-maintenance sessions over a drifting weight vector.

A session keeps a solver for A^T D^(k) A alive across rounds.  In `l2` mode
the kept weights are refreshed per coordinate whenever d_i leaves a
multiplicative band around its last snapshot.  In `sigma` mode the session
additionally estimates leverage scores each round (through the previous
round's solver) and resamples a leverage-weighted sparsifier row only when
the weight or the score leaves its band, which keeps the expected number of
sparsifier changes quadratic in the round count rather than linear in n.
`churn` rounds splice row insertions/removals into geometric sub-steps so
each sub-step looks like an ordinary sigma round.

Returned handles are raw linear solvers; adaptive callers (the LP layer)
must wrap them in the noise-adding solver so their randomness stays hidden.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log
from typing import Optional

import numpy as np

from ._util import rng_from
from .errors import (
    BudgetExceeded,
    ChurnBudgetExceeded,
    NonConvergence,
    NonPositiveWeights,
    StabilityViolation,
)
from .low_rank import SplitMaintainer
from .matrix_core import ConstraintMatrix, WeightVector, exact_factorize, gram_product
from .sketching import C_JL_DEFAULT, C_S_DEFAULT, estimate_leverage, exact_leverage_scores
from .solver_core import ApproxInverse, SolverHandle, estimate_condition_bound, richardson_solver

STABILITY_LIMIT = 0.1  # per-round bound on the log-weight step, both norms


@dataclass
class StabilityConfig:
    """Session parameters.

    Defaults are the desk-scale calibration: score accuracy eps_tau = 0.1
    paired with the widened (0.85, 1.15) resampling band so estimator noise
    cannot trigger spurious resampling.  `strict()` gives the tight
    (0.9, 1.1) band with eps_tau = 0.01, which costs ~100x more probing work
    per round.
    """

    mode: str = "sigma"                 # l2 | sigma | churn
    beta: float = 1e6
    gamma: Optional[float] = None       # default 1000 c_s log d, set at session start
    thresholds: tuple = (0.85, 1.15)
    eps_tau: float = 0.1
    K: int = 8                          # churn budget per round
    seed: int = 0
    c_s: float = C_S_DEFAULT
    c_jl: float = C_JL_DEFAULT
    support_cap: Optional[int] = None   # rebase trigger on capacitance support size
    pair_budget: Optional[int] = None   # override for max(d, 4 r^2) restart policy
    check_stability: bool = True
    use_embedding: bool = True

    def __post_init__(self):
        lo, hi = self.thresholds
        if not (0.0 < lo < 1.0 < hi):
            raise ValueError("thresholds must straddle 1")
        if self.beta < 1.0:
            raise ValueError("beta must be >= 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mode not in ("l2", "sigma", "churn"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def strict(cls, **kw) -> "StabilityConfig":
        return cls(thresholds=(0.9, 1.1), eps_tau=0.01, **kw)

    def resolved_gamma(self, d: int) -> float:
        if self.gamma is not None:
            return float(self.gamma)
        return 1000.0 * self.c_s * log(max(d, 2))


class MaintenanceSession:
    """Single-writer session; handles from round k expire at round k+1."""

    def __init__(self, A: ConstraintMatrix, d0: WeightVector, cfg: StabilityConfig):
        self.A = A
        self.cfg = cfg
        self.gamma = cfg.resolved_gamma(A.d)
        # dense mirror keeps the per-iteration matvecs free of sparse
        # construction overhead on desk-scale instances
        self._A_dense = A.csr.toarray() if A.n * A.d <= 200_000 else None
        self._csrT = A.csr.T.tocsr()
        self._probe = rng_from(cfg.seed, 0x9C).standard_normal(A.d)
        self.generation = 0
        self.round_index = 0
        self.telemetry: list[dict] = []
        self.notes: list[str] = []
        self.total_resampled = 0
        self.total_h_changes = 0
        self.restarts = 0
        self._rounds_since_rebase = 0
        self._subunit_sampling = False
        d0_arr = d0.values.copy()

        bootstrap = exact_factorize(gram_product(A, d0))  # also certifies PD
        if cfg.mode in ("sigma", "churn"):
            est = estimate_leverage(A, d0, bootstrap, cfg.eps_tau,
                                    seed=self._seed(0xB0, 0), c_jl=cfg.c_jl)
            self.sigma_old = est.tau.copy()
            p = np.minimum(1.0, self.gamma * est.tau)
            if np.any(p[d0_arr > 0] < 1.0):
                self._subunit_sampling = True
            draws = rng_from(self._seed(0x51, 0)).random(A.n)
            keep = (draws < p) & (d0_arr > 0)
            self.h = np.where(keep, d0_arr / np.maximum(p, 1e-300), 0.0)
            self.sigma_apr = est.tau.copy()
        else:
            self.sigma_old = np.zeros(A.n)
            self.sigma_apr = np.zeros(A.n)
            self.h = d0_arr.copy()
        self.d_old = d0_arr.copy()
        self.d_prev = d0_arr.copy()
        self._new_inner()
        self.handle = self._build_handle(d0_arr)
        self._record(resampled=0, h_changes=0)

    # -- helpers -------------------------------------------------------------

    def _seed(self, tag: int, k: int) -> int:
        return (self.cfg.seed * 1024 + tag + 7 * k) & 0xFFFFFFFFFFFF

    def _new_inner(self) -> None:
        self.inner = SplitMaintainer(
            self.A, WeightVector(self.h), beta=self.cfg.beta,
            seed=self._seed(0x1A, self.restarts), budget=10 ** 18,
            use_embedding=self.cfg.use_embedding, check_drift=False)
        self._rounds_since_rebase = 0
        self._h_rebase = self.h.copy()

    def _drift_cap(self) -> float:
        # rebase before the frozen d0/(10 beta) regularizer becomes visible
        # against weights that drifted far from the rebase point
        return max(0.3, min(3.0, 0.5 * log(10.0 * self.cfg.beta) - 0.4))

    def _pair_budget(self) -> int:
        if self.cfg.pair_budget is not None:
            return self.cfg.pair_budget
        r = max(1, self._rounds_since_rebase)
        return max(self.A.d, 4 * r * r)

    def _support_cap(self) -> int:
        if self.cfg.support_cap is not None:
            return self.cfg.support_cap
        return max(4 * self.A.d, 32)

    def _maybe_rebase(self, h_new: np.ndarray) -> None:
        pending = int(np.count_nonzero(h_new != self.inner.d_prev))
        over_budget = self.inner.changed_pairs + pending > self._pair_budget()
        over_support = (self.inner.inner.support_size + pending > self._support_cap()
                        or self.inner.f_support > self._support_cap())
        both = (h_new > 0) & (self._h_rebase > 0)
        over_drift = bool(both.any() and
                          np.max(np.abs(np.log(h_new[both] / self._h_rebase[both])))
                          > self._drift_cap())
        if over_budget or over_support or over_drift:
            reason = ("pair_budget" if over_budget
                      else "support_cap" if over_support else "beta_drift")
            self.restarts += 1
            self.notes.append(f"# restart round={self.round_index + 1} reason={reason}")
            self.h = h_new.copy()
            self._new_inner()
            self.inner.round_state(h_new)
        else:
            self.h = h_new.copy()
            self.inner.round_state(h_new)
        self._rounds_since_rebase += 1

    def _band_guess(self) -> float:
        lo, hi = self.cfg.thresholds
        stale = max(abs(log(lo)), abs(log(hi)))
        sampling = 0.12 if self._subunit_sampling else 0.0
        reg = float(np.exp(self._drift_cap())) / (10.0 * self.cfg.beta)
        return stale + sampling + reg + self.inner.band_estimate() + 0.05

    def _build_handle(self, d_arr: np.ndarray, extra_band: float = 0.0) -> SolverHandle:
        weights = d_arr.copy()
        if self._A_dense is not None:
            Ad = self._A_dense

            def b_apply(v: np.ndarray) -> np.ndarray:
                av = Ad @ v
                scale = weights if v.ndim == 1 else weights[:, None]
                return Ad.T @ (scale * av)
        else:
            csr, csrT = self.A.csr, self._csrT

            def b_apply(v: np.ndarray) -> np.ndarray:
                av = csr @ v
                scale = weights if v.ndim == 1 else weights[:, None]
                return csrT @ (scale * av)

        gen = self.generation
        L = float(np.exp(self._band_guess() + extra_band))
        probe = self._probe
        if self.A.d <= 64:
            # compose the maintained operator once per round; the dense
            # inverse cache inside the maintainer makes this a single matmul
            K = self.inner.assembled_dense()
            apply_N = lambda v: K @ v
        else:
            apply_N = self.inner.apply_approx_inverse
        inv = ApproxInverse(dim=self.A.d, apply_N=apply_N, L=L)
        for attempt in range(4):
            handle = richardson_solver(
                inv, b_apply, provenance="maintained",
                cost_estimate=float(self.A.d ** 2),
                validity=lambda g=gen: self.generation == g)
            try:
                handle.apply(probe, 0.25)
                return handle
            except NonConvergence:
                if attempt == 1:
                    inv.L = estimate_condition_bound(inv, b_apply,
                                                     seed=self._seed(0xCE, self.round_index))
                else:
                    inv.L = inv.L * 3.0
        return handle

    def _record(self, resampled: int, h_changes: int) -> None:
        kept = int(np.count_nonzero(self.h))
        work = self.inner.telemetry[-1]["tracker_work"] if self.inner.telemetry else 0.0
        self.telemetry.append({
            "round": self.round_index,
            "resampled": resampled,
            "kept_rows": kept,
            "work_units": work,
        })

    # -- stability gates -----------------------------------------------------

    def _check_stability(self, d_arr: np.ndarray) -> None:
        if not self.cfg.check_stability:
            return
        prev = self.d_prev
        if np.any(d_arr <= 0) or np.any(prev <= 0):
            raise StabilityViolation("stability checks need strictly positive weights")
        step = np.log(d_arr) - np.log(prev)
        if self.cfg.mode == "l2":
            if np.linalg.norm(step) > STABILITY_LIMIT + 1e-12:
                raise StabilityViolation(
                    f"l2 log-step {np.linalg.norm(step):.4f} exceeds {STABILITY_LIMIT}")
        else:
            sup = float(np.max(np.abs(step)))
            weighted = float(np.sqrt(np.sum(self.sigma_apr * step * step)))
            if sup > STABILITY_LIMIT + 1e-12 or weighted > STABILITY_LIMIT + 1e-12:
                raise StabilityViolation(
                    f"sigma log-step (weighted {weighted:.4f}, sup {sup:.4f}) "
                    f"exceeds {STABILITY_LIMIT}")

    # -- round processing ----------------------------------------------------

    def _temp_solver(self, d_arr: np.ndarray, extra_band: float) -> SolverHandle:
        """Solver for the new matrix, preconditioned by the previous state."""
        return self._build_handle(d_arr, extra_band=extra_band)

    def _round_core(self, d_arr: np.ndarray, check: bool,
                    tmp_extra: float = 2.0 * STABILITY_LIMIT) -> SolverHandle:
        if check:
            self._check_stability(d_arr)
        k = self.round_index + 1
        lo, hi = self.cfg.thresholds
        if self.cfg.mode == "l2":
            viol = (d_arr < lo * self.d_old) | (d_arr > hi * self.d_old)
            h_new = self.h.copy()
            h_new[viol] = d_arr[viol]
            self.d_old[viol] = d_arr[viol]
            resampled = int(np.count_nonzero(viol))
        else:
            s_tmp = self._temp_solver(d_arr, tmp_extra)
            est = estimate_leverage(self.A, WeightVector(d_arr), s_tmp, self.cfg.eps_tau,
                                    seed=self._seed(0xE5, k), c_jl=self.cfg.c_jl)
            sigma_apr = est.tau
            viol = ((sigma_apr < lo * self.sigma_old) | (sigma_apr > hi * self.sigma_old)
                    | (d_arr < lo * self.d_old) | (d_arr > hi * self.d_old))
            idx = np.flatnonzero(viol)
            h_new = self.h.copy()
            if idx.size:
                p = np.minimum(1.0, self.gamma * sigma_apr[idx])
                if np.any(p[d_arr[idx] > 0] < 1.0):
                    self._subunit_sampling = True
                draws = rng_from(self._seed(0x52, k)).random(idx.size)
                h_new[idx] = np.where((draws < p) & (d_arr[idx] > 0),
                                      d_arr[idx] / np.maximum(p, 1e-300), 0.0)
                self.d_old[idx] = d_arr[idx]
                self.sigma_old[idx] = sigma_apr[idx]
            self.sigma_apr = sigma_apr
            resampled = int(idx.size)
        h_changes = int(np.count_nonzero(h_new != self.h))
        self._maybe_rebase(h_new)
        self.d_prev = d_arr.copy()
        self.round_index = k
        self.generation += 1  # expire the previous round's handles
        handle = self._build_handle(d_arr)
        self.handle = handle
        self.total_resampled += resampled
        self.total_h_changes += h_changes
        self._record(resampled=resampled, h_changes=h_changes)
        return handle

    def advance(self, d_k: WeightVector | np.ndarray) -> SolverHandle:
        d_arr = d_k.values if isinstance(d_k, WeightVector) else np.asarray(d_k, dtype=np.float64)
        return self._round_core(d_arr, check=True)

    def advance_churn(self, d_k, added_rows, removed_rows) -> SolverHandle:
        """Row insertion/removal round: weights may jump to or from zero on at
        most K coordinates; the jump is spliced into geometric sub-steps so
        each sub-step stays within constant spectral drift."""
        d_arr = d_k.values if isinstance(d_k, WeightVector) else np.asarray(d_k, dtype=np.float64)
        added = np.asarray(list(added_rows), dtype=np.int64)
        removed = np.asarray(list(removed_rows), dtype=np.int64)
        if added.size + removed.size > self.cfg.K:
            raise ChurnBudgetExceeded(
                f"{added.size + removed.size} churned rows exceed K={self.cfg.K}")
        if added.size and (np.any(self.d_prev[added] != 0) or np.any(d_arr[added] <= 0)):
            raise ValueError("added rows must move from zero to positive weight")
        if removed.size and (np.any(self.d_prev[removed] <= 0) or np.any(d_arr[removed] != 0)):
            raise ValueError("removed rows must move from positive weight to zero")
        if added.size == 0 and removed.size == 0:
            return self.advance(d_arr)

        # first reveal at alpha0 = 1/(n beta) keeps the jump from zero within
        # a constant spectral band; doublings cover the rest
        n = self.A.n
        steps = max(3, int(ceil(np.log2(max(n, 2) * self.cfg.beta))))
        churn_extra = float(np.log(2.0)) + 0.2
        handle = self.handle
        cur = self.d_prev.copy()
        if added.size:
            target = cur.copy()
            target[added] = d_arr[added]
            for j in range(steps, -1, -1):
                mid = cur.copy()
                mid[added] = target[added] * (0.5 ** j)
                handle = self._round_core(mid, check=False, tmp_extra=churn_extra)
            cur = target
        if removed.size:
            base = cur[removed].copy()
            for j in range(1, steps + 1):
                mid = cur.copy()
                mid[removed] = base * (0.5 ** j)
                handle = self._round_core(mid, check=False, tmp_extra=churn_extra)
            final = cur.copy()
            final[removed] = 0.0
            handle = self._round_core(final, check=False, tmp_extra=churn_extra)
            cur = final
        if np.any(cur != d_arr):
            handle = self._round_core(d_arr, check=False, tmp_extra=churn_extra)
        return handle

    # -- reporting -----------------------------------------------------------

    def telemetry_report(self) -> str:
        lines = list(self.notes)
        lines.append("round,resampled,kept_rows,work_units")
        for t in self.telemetry:
            lines.append(f"{t['round']},{t['resampled']},{t['kept_rows']},{t['work_units']:.0f}")
        return "\n".join(lines) + "\n"


def session_new(A: ConstraintMatrix, d0: WeightVector,
                cfg: StabilityConfig) -> tuple[MaintenanceSession, SolverHandle]:
    s = MaintenanceSession(A, d0, cfg)
    return s, s.handle


def session_round(s: MaintenanceSession, d_k) -> SolverHandle:
    return s.advance(d_k)


def session_round_churn(s: MaintenanceSession, d_k, added_rows=(), removed_rows=()) -> SolverHandle:
    return s.advance_churn(d_k, added_rows, removed_rows)


@dataclass
class LeverageStabilityReport:
    eps: float
    lhs: float
    rhs: float
    ratio: float
    holds: bool

    def __bool__(self) -> bool:
        return self.holds


def leverage_stability_check(A: ConstraintMatrix, x, y) -> LeverageStabilityReport:
    """Continuity of log leverage scores in the score-weighted norm.

    Computes both sides of ||ln s(x) - ln s(y)||_{s(x)} <= e^eps
    ||ln x - ln y||_{s(x)} with dense-oracle scores, where eps is the sup-norm
    log distance of the weight vectors.
    """
    x = x.values if isinstance(x, WeightVector) else np.asarray(x, dtype=np.float64)
    y = y.values if isinstance(y, WeightVector) else np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveWeights("both weight vectors must be strictly positive")
    eps = float(np.max(np.abs(np.log(x) - np.log(y))))
    sx = exact_leverage_scores(A, WeightVector(x))
    sy = exact_leverage_scores(A, WeightVector(y))
    mask = (sx > 1e-300) & (sy > 1e-300)
    dlog_sigma = np.zeros_like(sx)
    dlog_sigma[mask] = np.log(sx[mask]) - np.log(sy[mask])
    lhs = float(np.sqrt(np.sum(sx * dlog_sigma ** 2)))
    dlog_w = np.log(x) - np.log(y)
    rhs = float(np.exp(eps) * np.sqrt(np.sum(sx * dlog_w ** 2)))
    ratio = 0.0 if rhs == 0 else lhs / rhs
    return LeverageStabilityReport(eps=eps, lhs=lhs, rhs=rhs, ratio=ratio,
                                   holds=lhs <= rhs * (1.0 + 1e-9))


def synthetic_sigma_drift(A: ConstraintMatrix, d0: WeightVector, rounds: int, seed: int,
                          kick_scale: float = 0.09, base_scale: float = 0.01):
    """Generator of weight vectors satisfying the sigma-stability bounds.

    Each round applies a small dense log-drift plus larger kicks on a few
    random coordinates, then rescales so the score-weighted and sup norms of
    the log-step stay within the stability limit.
    """
    rng = rng_from(seed, 0xDF)
    d_cur = d0.values.copy()
    for _ in range(rounds):
        sigma = exact_leverage_scores(A, WeightVector(d_cur))
        step = rng.normal(0.0, base_scale, size=A.n)
        n_kick = int(rng.integers(1, 6))
        kicked = rng.choice(A.n, size=n_kick, replace=False)
        step[kicked] += rng.choice([-1.0, 1.0], size=n_kick) * rng.uniform(
            0.5 * kick_scale, kick_scale, size=n_kick)
        sup = np.max(np.abs(step))
        if sup > 0.095:
            step *= 0.095 / sup
        weighted = np.sqrt(np.sum(sigma * step * step))
        if weighted > 0.095:
            step *= 0.095 / weighted
        d_cur = d_cur * np.exp(step)
        yield d_cur.copy()
