"""Low-rank machinery for maintaining (A^T D A)^-1 across weight changes.

Three layers:

* `woodbury_inverse_apply` applies the inverse of a low-rank-perturbed matrix
  without ever forming the perturbed inverse.
* `ExplicitInverseState` keeps (A^T D^(k) A)^-1 exactly through the two-term
  formula B0^-1 - C^T Delta V Delta C, where only the small capacitance over
  the changed-coordinate support is refactored each round.
* `SplitMaintainer` additionally handles weight mass appearing on rows outside
  the initial support, compressing those contributions with a sparse subspace
  embedding and assembling a constant-factor approximate inverse that is then
  sharpened by Richardson iteration.
"""

from __future__ import annotations

from math import ceil, log
from typing import Callable, Optional

import numpy as np
import scipy.sparse

from ._util import rng_from
from .errors import BudgetExceeded, DriftViolation, NonConvergence, SingularCapacitance
from .matrix_core import ConstraintMatrix, WeightVector, gram_product
from .sketching import SubspaceEmbedding
from .solver_core import ApproxInverse, SolverHandle, estimate_condition_bound, iteration_count, richardson_solver


def woodbury_inverse_apply(Ainv_apply: Callable[[np.ndarray], np.ndarray],
                           U: np.ndarray, C_mid: np.ndarray, V: np.ndarray,
                           b: np.ndarray) -> np.ndarray:
    """(A + U C V)^-1 b via A^-1 b - A^-1 U (C^-1 + V A^-1 U)^-1 V A^-1 b.

    Only m x m systems are factored (m = update rank); the d x d perturbed
    inverse is never formed.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    m = U.shape[1]
    Ainv_b = Ainv_apply(b)
    if m == 0 or not np.any(U) :
        return Ainv_b
    C_mid = np.asarray(C_mid, dtype=np.float64)
    try:
        C_inv = np.linalg.inv(C_mid)
        Ainv_U = Ainv_apply(U)
        cap = C_inv + V @ Ainv_U
        t = np.linalg.solve(cap, V @ Ainv_b)
    except np.linalg.LinAlgError as exc:
        raise SingularCapacitance(str(exc)) from exc
    return Ainv_b - Ainv_U @ t


def _row_provider(mat) -> tuple[Callable[[np.ndarray], np.ndarray], int]:
    """Normalize a matrix-like object to (row-block getter, row count)."""
    if callable(mat):
        raise TypeError("pass (provider, rows) tuples explicitly")
    if isinstance(mat, ConstraintMatrix):
        csr = mat.csr
        return (lambda idx: csr[idx].toarray(), mat.n)
    if scipy.sparse.issparse(mat):
        csr = mat.tocsr()
        return (lambda idx: csr[idx].toarray(), mat.shape[0])
    arr = np.asarray(mat, dtype=np.float64)
    return (lambda idx: arr[idx], arr.shape[0])


class ProductTracker:
    """Maintains diag(x) L R^T diag(y) restricted to the supports of x and y.

    Updates touch only the changed coordinates: the new product follows from
    (X + dX) L R^T (Y + dY) = X L R^T Y + dX L R^T Y + (X + dX) L R^T dY,
    so per-round work is proportional to (changed count) * d * (active count).
    Cumulative changed pairs are charged against the optional budget.
    """

    def __init__(self, left=None, right=None, x0: np.ndarray = None, y0: np.ndarray = None,
                 budget: Optional[int] = None, left_rows=None, right_rows=None):
        if left_rows is not None:
            self._lrows, self.p = left_rows, len(x0)
        else:
            self._lrows, self.p = _row_provider(left)
        if right_rows is not None:
            self._rrows, self.q = right_rows, len(y0)
        else:
            self._rrows, self.q = _row_provider(right)
        self.x = np.zeros(self.p)
        self.y = np.zeros(self.q)
        self.budget = budget
        self.changed_pairs = 0
        self.work = 0.0
        self._rows = np.zeros(0, dtype=np.int64)
        self._cols = np.zeros(0, dtype=np.int64)
        self._rpos: dict[int, int] = {}
        self._cpos: dict[int, int] = {}
        self.product = np.zeros((0, 0))
        # initial supports enter as precomputation, not as budgeted changes
        self._apply_delta(np.asarray(x0, dtype=np.float64), np.asarray(y0, dtype=np.float64))

    def _activate(self, idx: np.ndarray, axis: int) -> None:
        pos = self._rpos if axis == 0 else self._cpos
        new = np.array([i for i in idx if int(i) not in pos], dtype=np.int64)
        if new.size == 0:
            return
        start = len(pos)
        pos.update({int(v): start + k for k, v in enumerate(new)})
        if axis == 0:
            self._rows = np.concatenate([self._rows, new])
            self.product = np.vstack([self.product, np.zeros((new.size, self.product.shape[1]))])
        else:
            self._cols = np.concatenate([self._cols, new])
            self.product = np.hstack([self.product, np.zeros((self.product.shape[0], new.size))])

    def _apply_delta(self, x_new: np.ndarray, y_new: np.ndarray) -> None:
        chg_x = np.flatnonzero(x_new != self.x)
        chg_y = np.flatnonzero(y_new != self.y)
        self._activate(chg_x, axis=0)
        self._activate(chg_y, axis=1)
        nr, nc = self._rows.size, self._cols.size
        if chg_x.size and nc:
            lb = self._lrows(chg_x)
            rb = self._rrows(self._cols)
            dx = (x_new - self.x)[chg_x]
            upd = (lb @ rb.T) * self.y[self._cols][None, :] * dx[:, None]
            rows_local = np.fromiter((self._rpos[int(i)] for i in chg_x), dtype=np.int64)
            self.product[rows_local, :] += upd
            self.work += chg_x.size * lb.shape[1] * nc
        self.x = x_new.copy()
        if chg_y.size and nr:
            lb = self._lrows(self._rows)
            rb = self._rrows(chg_y)
            dy = (y_new - self.y)[chg_y]
            upd = (lb @ rb.T) * self.x[self._rows][:, None] * dy[None, :]
            cols_local = np.fromiter((self._cpos[int(j)] for j in chg_y), dtype=np.int64)
            self.product[:, cols_local] += upd
            self.work += chg_y.size * lb.shape[1] * nr
        self.y = y_new.copy()

    def update(self, x_new: Optional[np.ndarray] = None,
               y_new: Optional[np.ndarray] = None) -> np.ndarray:
        x_new = self.x if x_new is None else np.asarray(x_new, dtype=np.float64)
        y_new = self.y if y_new is None else np.asarray(y_new, dtype=np.float64)
        chg_x = np.flatnonzero(x_new != self.x)
        chg_y = np.flatnonzero(y_new != self.y)
        if self.p == self.q:
            # one (i, k) pair even when both scalings move at coordinate i
            changed = np.union1d(chg_x, chg_y)
        else:
            changed = np.concatenate([chg_x, chg_y])
        if self.budget is not None and self.changed_pairs + changed.size > self.budget:
            raise BudgetExceeded(
                f"{self.changed_pairs + changed.size} changed pairs exceed budget {self.budget}")
        self.changed_pairs += int(changed.size)
        self._apply_delta(x_new, y_new)
        return self.product

    def block(self, rows_idx: np.ndarray, cols_idx: np.ndarray) -> np.ndarray:
        """Dense submatrix for global indices; inactive indices give zero rows/cols."""
        out = np.zeros((len(rows_idx), len(cols_idx)))
        rl = np.array([self._rpos.get(int(i), -1) for i in rows_idx])
        cl = np.array([self._cpos.get(int(j), -1) for j in cols_idx])
        rmask, cmask = rl >= 0, cl >= 0
        if rmask.any() and cmask.any():
            out[np.ix_(rmask, cmask)] = self.product[np.ix_(rl[rmask], cl[cmask])]
        return out

    def dense(self) -> np.ndarray:
        """Full p x q product, for oracle comparison in tests."""
        out = np.zeros((self.p, self.q))
        if self._rows.size and self._cols.size:
            out[np.ix_(self._rows, self._cols)] = self.product
        return out


def product_tracker_update(t: ProductTracker, x_new: np.ndarray, y_new: np.ndarray) -> np.ndarray:
    return t.update(x_new, y_new)


class ExplicitInverseState:
    """Exact inverse of A^T D^(k) A maintained under coordinate changes.

    Keeps B0^-1 dense, rows of C = A B0^-1 computed lazily on first touch,
    and the capacitance T over the support of Delta = D^(k) - D^(0).  Solves
    apply B0^-1 v - C^T Delta (T (Delta (C v))) in O(d^2 + u d).
    """

    def __init__(self, A: ConstraintMatrix, d0, budget: Optional[int] = None):
        d0 = d0 if isinstance(d0, WeightVector) else WeightVector(d0)
        self.A = A
        self.d0 = d0.values.copy()
        self.B0 = gram_product(A, d0)
        self.B0_inv = self.B0.solve(np.eye(A.d))
        self._C = np.zeros((A.n, A.d))
        self._c_mask = np.zeros(A.n, dtype=bool)
        self.budget = budget
        self.changed_pairs = 0
        self.d_cur = self.d0.copy()
        self.J = np.zeros(0, dtype=np.int64)
        self.T = np.zeros((0, 0))
        self._delta_J = np.zeros(0)
        self.tracker = ProductTracker(left_rows=self.c_rows, right=A,
                                      x0=np.zeros(A.n), y0=np.zeros(A.n))
        self.generation = 0
        self.round_index = 0

    def c_rows(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        todo = idx[~self._c_mask[idx]]
        if todo.size:
            self._C[todo] = self.A.csr[todo] @ self.B0_inv
            self._c_mask[todo] = True
        return self._C[idx]

    def update(self, d_k) -> None:
        d_k = d_k.values if isinstance(d_k, WeightVector) else np.asarray(d_k, dtype=np.float64)
        changed = np.flatnonzero(d_k != self.d_cur)
        if self.budget is not None and self.changed_pairs + changed.size > self.budget:
            raise BudgetExceeded(
                f"{self.changed_pairs + changed.size} changed pairs exceed budget {self.budget}")
        self.changed_pairs += int(changed.size)
        self.d_cur = d_k.copy()
        delta = self.d_cur - self.d0
        self.tracker.update(delta, delta)
        self.J = np.flatnonzero(delta)
        u = self.J.size
        if u:
            self._delta_J = delta[self.J]
            cap = np.diag(self._delta_J) + self.tracker.block(self.J, self.J)
            try:
                self.T = np.linalg.inv(cap)
            except np.linalg.LinAlgError as exc:
                raise SingularCapacitance("capacitance solve failed") from exc
        else:
            self._delta_J = np.zeros(0)
            self.T = np.zeros((0, 0))
        self.generation += 1
        self.round_index += 1

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.B0_inv @ v
        if self.J.size:
            cj = self.c_rows(self.J)
            y = cj @ v
            scale = self._delta_J if v.ndim == 1 else self._delta_J[:, None]
            y = self.T @ (scale * y)
            out = out - cj.T @ (scale * y)
        return out

    def inverse_dense(self) -> np.ndarray:
        inv = self.apply(np.eye(self.A.d))
        return 0.5 * (inv + inv.T)

    def handle(self) -> SolverHandle:
        gen = self.generation
        return SolverHandle(
            dim=self.A.d, provenance="maintained", linear=True,
            _apply=lambda b, eps: self.apply(b),
            cost_estimate=float(self.A.d ** 2 + self.J.size * self.A.d),
            validity=lambda: self.generation == gen)

    @property
    def support_size(self) -> int:
        return int(self.J.size)


def explicit_maintainer_round(st: ExplicitInverseState, d_k) -> SolverHandle:
    st.update(d_k)
    return st.handle()


class SplitMaintainer:
    """Approximate inverse of A^T D^(k) A when new rows gain weight over time.

    Weight on the initial support S is tracked exactly (ExplicitInverseState
    over e = d restricted to S, plus the d0/(10 beta) regularizer that keeps
    that block positive definite).  Weight off S enters through a capacitance
    M = diag(f) + F A (A^T E A)^-1 A^T F whose Gram part is compressed by a
    sparse subspace embedding; Richardson iteration against the exactly
    applicable M sharpens the compressed inverse to accuracy 1/(20 beta^2).
    The assembled operator stays within an e^{+-1} band of the true inverse,
    and returned handles run Richardson against A^T D^(k) A on top of it.
    """

    def __init__(self, A: ConstraintMatrix, d0: WeightVector, beta: float,
                 seed: int = 0, budget: Optional[int] = None,
                 use_embedding: bool = True, embed_eps: float = 0.5,
                 c_embed: float = 2.0, check_drift: bool = True):
        if beta < 1.0:
            raise ValueError("beta must be >= 1")
        self.A = A
        self.n, self.d = A.n, A.d
        self.beta = float(beta)
        self.seed = int(seed)
        self.budget = budget if budget is not None else A.d
        self.use_embedding = use_embedding
        self.embed_eps = float(embed_eps)
        self.check_drift = check_drift
        self.d0 = d0.values.copy()
        self.S_mask = self.d0 > 0
        self.reg = self.d0 / (10.0 * self.beta)
        e0 = self.d0 + self.reg
        self.inner = ExplicitInverseState(A, e0)
        self.e0 = e0
        self._c_embed = c_embed
        self._embed_ready = False
        self.pi = None
        self.d_prev = self.d0.copy()
        self.changed_pairs = 0
        self.generation = 0
        self.round_index = 0
        self.telemetry: list[dict] = []
        self._K_dense_cache: Optional[np.ndarray] = None
        self._last: dict = {"Jf": np.zeros(0, dtype=np.int64), "W": np.zeros((0, 0)),
                            "Xe": np.zeros((0, self.d)), "f": np.zeros(0)}

    def _ensure_embedding(self, f_k, g_k, delta_k) -> None:
        """Build the compression state on first off-support weight.

        The tracked products are memoryless functions of the current scaling
        vectors, so initializing them from the current state is exact.
        """
        if self._embed_ready:
            return
        m = max(8, min(self.n, 4 * self.d))
        rows = min(int(ceil(self._c_embed * m * log(m + 1.0) / self.embed_eps ** 2)), 2 * self.n)
        s = int(ceil(np.log2(self.d + 1.0)))
        self.pi = SubspaceEmbedding(rows=rows, cols=self.n, s=s, seed=self.seed)
        p1b = self.pi.apply(self.A.csr.multiply(np.sqrt(self.e0)[:, None]).tocsr())
        self.P1b = p1b
        self.P1 = p1b @ self.inner.B0_inv
        ones_r = np.ones(rows)
        self.tr1 = ProductTracker(left=self.P1, right=self.A, x0=ones_r, y0=f_k)
        self.tr2 = ProductTracker(left_rows=self.inner.c_rows, right=self.A, x0=g_k, y0=f_k)
        self.trA = ProductTracker(left_rows=self.inner.c_rows, right=self.A, x0=delta_k, y0=f_k)
        self.trB = ProductTracker(left=self.P1b, right_rows=self.inner.c_rows,
                                  x0=ones_r, y0=delta_k)
        self.trC = ProductTracker(left=self.A, right_rows=self.inner.c_rows,
                                  x0=g_k, y0=delta_k)
        self._embed_ready = True

    # -- round processing ---------------------------------------------------

    def _drift_check(self, d_arr: np.ndarray) -> None:
        rng = rng_from(self.seed, 0xD2, self.round_index)
        slack = 1.6
        for _ in range(5):
            v = rng.standard_normal(self.d)
            bk = v @ (self.A.csr.T @ (d_arr * (self.A.csr @ v)))
            b0 = v @ (self.A.csr.T @ (self.d0 * (self.A.csr @ v)))
            ratio = bk / b0
            if not (1.0 / (self.beta * slack) <= ratio <= self.beta * slack):
                raise DriftViolation(
                    f"Rayleigh quotient ratio {ratio:.3g} outside the beta={self.beta} band")

    def round_state(self, d_k) -> None:
        """Advance the maintained state without building a solver handle."""
        d_arr = d_k.values if isinstance(d_k, WeightVector) else np.asarray(d_k, dtype=np.float64)
        changed = np.flatnonzero(d_arr != self.d_prev)
        if self.changed_pairs + changed.size > self.budget:
            raise BudgetExceeded(
                f"{self.changed_pairs + changed.size} changed pairs exceed budget {self.budget}")
        if self.check_drift:
            self._drift_check(d_arr)
        self.changed_pairs += int(changed.size)
        self.d_prev = d_arr.copy()

        e_k = np.where(self.S_mask, d_arr, 0.0) + self.reg
        f_k = np.where(self.S_mask, 0.0, d_arr)
        self.inner.update(e_k)
        g_k = np.sqrt(e_k) - np.sqrt(self.e0)
        delta_k = e_k - self.e0
        Jf = np.flatnonzero(f_k)
        if Jf.size or self._embed_ready:
            self._ensure_embedding(f_k, g_k, delta_k)
            self.tr1.update(y_new=f_k)
            self.tr2.update(g_k, f_k)
            self.trA.update(delta_k, f_k)
            self.trB.update(y_new=delta_k)
            self.trC.update(g_k, delta_k)
        self._assemble(f_k, g_k, delta_k, Jf)
        self.generation += 1
        self.round_index += 1
        tracker_work = self.inner.tracker.work
        if self._embed_ready:
            tracker_work += (self.tr1.work + self.tr2.work + self.trA.work
                             + self.trB.work + self.trC.work)
        self.telemetry.append({
            "round": self.round_index,
            "changed": int(changed.size),
            "f_support": int(Jf.size),
            "capacitance_dim": int(self.inner.support_size),
            "tracker_work": float(tracker_work),
        })

    def round(self, d_k) -> SolverHandle:
        self.round_state(d_k)
        return self._build_handle(self.d_prev)

    @property
    def f_support(self) -> int:
        return int(self._last["Jf"].size)

    def band_estimate(self) -> float:
        """Log-band of the assembled operator against the regularized inverse:
        zero when no off-support weight is active, the pinned constant 1
        otherwise."""
        return 0.0 if self.f_support == 0 else 1.0

    def _assemble(self, f_k, g_k, delta_k, Jf) -> None:
        self._K_dense_cache = None
        phi = Jf.size
        if phi == 0:
            self._last = {"Jf": Jf, "W": np.zeros((0, 0)), "Xe": np.zeros((0, self.d)),
                          "f": np.zeros(0)}
            return
        f_J = f_k[Jf]
        r = self.pi.rows
        all_r = np.arange(r)
        Jg = np.flatnonzero(g_k)
        Jd = self.inner.J
        PiN = self.tr1.block(all_r, Jf)
        if Jg.size:
            PiN = PiN + self.pi.columns(Jg) @ self.tr2.block(Jg, Jf)
        if Jd.size:
            mid = self.inner.T
            right = mid @ self.trA.block(Jd, Jf)
            PiN = PiN - self.trB.block(all_r, Jd) @ right
            if Jg.size:
                PiN = PiN - self.pi.columns(Jg) @ (self.trC.block(Jg, Jd) @ right)
        Xe = f_J[:, None] * self.A.csr[Jf].toarray()
        Einv = self.inner.inverse_dense()
        M_exact = np.diag(f_J) + (Xe @ Einv) @ Xe.T
        M_exact = 0.5 * (M_exact + M_exact.T)
        if self.use_embedding:
            M_tilde = np.diag(f_J) + PiN.T @ PiN
            M_tilde = 0.5 * (M_tilde + M_tilde.T)
            W = self._sharpen(M_exact, M_tilde)
        else:
            W = np.linalg.inv(M_exact)
            W = 0.5 * (W + W.T)
        self._last = {"Jf": Jf, "W": W, "Xe": Xe, "f": f_J, "PiN": PiN,
                      "M_exact": M_exact}

    def _sharpen(self, M_exact: np.ndarray, M_tilde: np.ndarray) -> np.ndarray:
        """Richardson in matrix form: push the compressed inverse to the
        1/(20 beta^2) spectral band around M_exact^-1."""
        eps_spec = 1.0 / (20.0 * self.beta ** 2)
        L = float(np.exp(self.embed_eps))
        N = np.linalg.inv(M_tilde)
        N = 0.5 * (N + N.T)
        z = iteration_count(L, eps_spec ** 2)
        W = N / L
        eye = np.eye(M_exact.shape[0])
        for _ in range(z):
            W = W + (N / L) @ (eye - M_exact @ W)
        return 0.5 * (W + W.T)

    # -- assembled operator -------------------------------------------------

    def apply_approx_inverse(self, v: np.ndarray) -> np.ndarray:
        """Apply the assembled operator K ~ (A^T D^(k) A)^-1."""
        u1 = self.inner.apply(v)
        Xe, W = self._last["Xe"], self._last["W"]
        if Xe.shape[0]:
            q = Xe @ u1
            u1 = u1 - self.inner.apply(Xe.T @ (W @ q))
        return u1

    def assembled_dense(self) -> np.ndarray:
        if self._K_dense_cache is None:
            k = self.apply_approx_inverse(np.eye(self.d))
            self._K_dense_cache = 0.5 * (k + k.T)
        return self._K_dense_cache

    def compressed_middle(self) -> np.ndarray:
        """diag(f) + (Pi N)^T (Pi N) over the off-support rows."""
        f, PiN = self._last["f"], self._last["PiN"]
        return np.diag(f) + PiN.T @ PiN

    def exact_middle(self) -> np.ndarray:
        """diag(f) + N^T N computed without the embedding."""
        return self._last.get("M_exact", np.zeros((0, 0)))

    def _build_handle(self, d_arr: np.ndarray) -> SolverHandle:
        csr = self.A.csr
        weights = d_arr.copy()

        def b_apply(v: np.ndarray) -> np.ndarray:
            av = csr @ v
            scale = weights if v.ndim == 1 else weights[:, None]
            return csr.T @ (scale * av)

        gen = self.generation
        inv = ApproxInverse(dim=self.d, apply_N=self.apply_approx_inverse, L=None)
        inv.L = estimate_condition_bound(inv, b_apply, seed=self.seed + self.round_index)
        probe = rng_from(self.seed, 0x9B, self.round_index).standard_normal(self.d)
        for _ in range(3):
            handle = richardson_solver(
                inv, b_apply, provenance="maintained",
                cost_estimate=float(self.d ** 2 + self.inner.support_size * self.d),
                validity=lambda g=gen: self.generation == g)
            try:
                handle.apply(probe, 0.25)
                break
            except NonConvergence:
                inv.L *= 4.0
        return handle


def split_maintainer_round(st: SplitMaintainer, d_k) -> SolverHandle:
    return st.round(d_k)


def telemetry_report(st) -> str:
    """Flat text export: one 'counter round value' line per counter per round."""
    lines = []
    for entry in getattr(st, "telemetry", []):
        rnd = entry.get("round", 0)
        for key, val in entry.items():
            if key == "round":
                continue
            lines.append(f"{key} {rnd} {val}")
    return "\n".join(lines) + ("\n" if lines else "")
