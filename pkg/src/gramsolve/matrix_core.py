"""Sparse constraint matrices, weighted Gram products and spectral checks.

The central objects are a tall sparse matrix A (n x d, full column rank), a
nonnegative weight vector defining a diagonal D, and the dense positive
definite Gram product A^T D A that every solver in the package targets.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse

from .errors import DimensionMismatch, RankDeficient
from .solver_core import SolverHandle

_PIVOT_REL = 1e-12


class ConstraintMatrix:
    """Immutable sparse n x d matrix with full column rank and d <= n.

    Stored row-major (CSR); per-row Euclidean norms are cached at
    construction.  Instances are safe to share across threads.
    """

    def __init__(self, matrix, validate_rank: bool = True):
        sp = scipy.sparse.csr_matrix(matrix, dtype=np.float64)
        sp.sum_duplicates()
        sp.eliminate_zeros()
        n, d = sp.shape
        if d > n:
            raise DimensionMismatch(f"matrix is {n} x {d}; need at least as many rows as columns")
        if not np.all(np.isfinite(sp.data)):
            raise ValueError("matrix entries must be finite")
        self.n = n
        self.d = d
        self.csr = sp
        self.csc = sp.tocsc()
        self.row_norms = np.sqrt(np.asarray(sp.multiply(sp).sum(axis=1)).ravel())
        if validate_rank:
            self._validate_rank()

    @classmethod
    def from_entries(cls, n: int, d: int, entries, validate_rank: bool = True) -> "ConstraintMatrix":
        """Build from a duplicate-free coordinate list of (row, col, value)."""
        entries = list(entries)
        if entries:
            rows = np.array([e[0] for e in entries], dtype=np.int64)
            cols = np.array([e[1] for e in entries], dtype=np.int64)
            vals = np.array([e[2] for e in entries], dtype=np.float64)
        else:
            rows = np.zeros(0, dtype=np.int64)
            cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise DimensionMismatch("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= d):
            raise DimensionMismatch("column index out of range")
        keys = rows * np.int64(d) + cols
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (row, col) entry")
        coo = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, d))
        return cls(coo, validate_rank=validate_rank)

    def _validate_rank(self) -> None:
        g = (self.csr.T @ self.csr).toarray()
        try:
            _chol_with_pivot_check(g)
        except RankDeficient as exc:
            raise RankDeficient("matrix does not have full column rank") from exc

    def row(self, i: int) -> np.ndarray:
        return self.csr.getrow(i).toarray().ravel()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def __repr__(self) -> str:
        return f"ConstraintMatrix({self.n}x{self.d}, nnz={self.nnz})"


class WeightVector:
    """Nonnegative n-vector; ``support`` indexes the strictly positive entries."""

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite")
        if np.any(v < 0):
            raise ValueError("weights must be nonnegative")
        self.values = v
        self.support = np.flatnonzero(v > 0)

    @classmethod
    def ones(cls, n: int) -> "WeightVector":
        return cls(np.ones(n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __repr__(self) -> str:
        return f"WeightVector(n={self.n}, support={self.support.size})"


class PDMatrix:
    """Dense symmetric positive definite d x d matrix.

    The input is symmetrized (averaged with its transpose) to absorb
    floating point drift; genuine asymmetry beyond 1e-12 relative to
    max(1, |entries|) is rejected.  Positive definiteness is certified by a
    Cholesky factorization kept for later solves.
    """

    def __init__(self, array):
        a = np.array(array, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        tol = 1e-12 * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        if float(np.max(np.abs(a - a.T))) > tol:
            raise ValueError("matrix is not symmetric within tolerance")
        self.array = 0.5 * (a + a.T)
        self.dim = a.shape[0]
        self._chol = _chol_with_pivot_check(self.array)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self._chol, True), b)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.array @ v

    def __repr__(self) -> str:
        return f"PDMatrix(dim={self.dim})"


def _chol_with_pivot_check(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; RankDeficient when a pivot falls below
    1e-12 times the largest diagonal entry."""
    if a.size == 0:
        raise RankDeficient("empty matrix")
    max_diag = float(np.max(np.diag(a)))
    if not np.isfinite(max_diag) or max_diag <= 0:
        raise RankDeficient("nonpositive diagonal")
    try:
        chol = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise RankDeficient("factorization failed; matrix is not positive definite") from exc
    pivots = np.diag(chol) ** 2
    if np.min(pivots) < _PIVOT_REL * max_diag:
        raise RankDeficient("pivot below threshold; matrix is numerically rank deficient")
    return chol


def gram_product(A: ConstraintMatrix, w: WeightVector) -> PDMatrix:
    """A^T D A accumulated over the support rows of the weight vector.

    Cost is proportional to the support size times the squared row sparsity;
    zero-weight rows are never touched.
    """
    if w.n != A.n:
        raise DimensionMismatch(f"weight length {w.n} does not match row count {A.n}")
    if w.support.size == 0:
        raise RankDeficient("weight vector has empty support")
    rows = A.csr[w.support]
    scaled = rows.multiply(w.values[w.support][:, None])
    g = (rows.T @ scaled).toarray()
    return PDMatrix(0.5 * (g + g.T))


def exact_factorize(M: PDMatrix) -> SolverHandle:
    """Reference solver backed by the stored triangular factorization.

    The accuracy argument is ignored: one step of iterative refinement keeps
    the residual at the 1e-10 relative level on desk-scale instances.
    """
    chol = M._chol
    arr = M.array

    def apply(b: np.ndarray, eps: float) -> np.ndarray:
        x = scipy.linalg.cho_solve((chol, True), b, check_finite=False)
        x += scipy.linalg.cho_solve((chol, True), b - arr @ x, check_finite=False)
        return x

    return SolverHandle(dim=M.dim, provenance="exact", linear=True, _apply=apply,
                        cost_estimate=float(M.dim) ** 2)


@dataclass
class SpectralReport:
    close: bool
    lam_min: float
    lam_max: float
    eps: float

    def __bool__(self) -> bool:
        return self.close


def spectral_close(M: PDMatrix, N: PDMatrix, eps: float) -> SpectralReport:
    """True iff all generalized eigenvalues of (M, N) lie in [e^-eps, e^eps]."""
    if M.dim != N.dim:
        raise DimensionMismatch(f"dimension mismatch: {M.dim} vs {N.dim}")
    lam = scipy.linalg.eigh(M.array, N.array, eigvals_only=True)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    ok = lam_min >= np.exp(-eps) * (1.0 - 1e-12) and lam_max <= np.exp(eps) * (1.0 + 1e-12)
    return SpectralReport(close=bool(ok), lam_min=lam_min, lam_max=lam_max, eps=eps)


# ---------------------------------------------------------------------------
# Text formats: Matrix Market for matrices, one decimal per line for weights.

def write_matrix(path, A: ConstraintMatrix) -> None:
    scipy.io.mmwrite(str(path), A.csr.tocoo(), precision=17)


def read_matrix(path, validate_rank: bool = True) -> ConstraintMatrix:
    mat = scipy.io.mmread(str(path))
    coo = scipy.sparse.coo_matrix(mat)
    keys = coo.row.astype(np.int64) * coo.shape[1] + coo.col
    if np.unique(keys).size != keys.size:
        raise ValueError("matrix file contains duplicate (row, col) entries")
    return ConstraintMatrix(coo, validate_rank=validate_rank)


def write_weights(path, w: WeightVector) -> None:
    with open(path, "w") as fh:
        for v in w.values:
            fh.write(f"{v:.17g}\n")


def read_weights(path) -> WeightVector:
    values = np.loadtxt(path, dtype=np.float64, ndmin=1)
    return WeightVector(values)


def read_vector(path_or_text) -> np.ndarray:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        return np.loadtxt(io.StringIO(path_or_text), dtype=np.float64, ndmin=1)
    return np.loadtxt(path_or_text, dtype=np.float64, ndmin=1)
