"""Sparse subspace embeddings, leverage score estimation and row sampling.

Leverage scores sigma_i = [D^0.5 A (A^T D A)^-1 A^T D^0.5]_ii measure row
importance: they lie in [0, 1] and sum to the column rank.  Sampling rows with
probabilities proportional to overestimates of sigma yields a reweighted row
subset H with A^T H A spectrally close to A^T D A.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, log

import numpy as np
import scipy.linalg
import scipy.sparse

from ._util import rademacher_matrix, rng_from
from .errors import SolverMismatch
from .matrix_core import ConstraintMatrix, WeightVector, gram_product
from .solver_core import SolverHandle

C_S_DEFAULT = 4.0        # row-sampling oversampling constant
C_EMBED_DEFAULT = 8.0    # embedding row-count constant, calibrated on the 50-seed suites
C_JL_DEFAULT = 8.0       # random-projection probe-count constant


class SubspaceEmbedding:
    """Sparse random sign matrix: s nonzeros of value +-1/sqrt(s) per column.

    Fully reproducible from (rows, cols, s, seed); the matrix itself is kept
    as CSC so column restrictions are cheap.
    """

    def __init__(self, rows: int, cols: int, s: int, seed: int):
        self.rows = int(rows)
        self.cols = int(cols)
        self.s = max(1, min(int(s), self.rows))
        self.seed = int(seed)
        rng = rng_from(seed, 0xE0)
        pos = rng.integers(0, self.rows, size=(self.cols, self.s))
        if self.s > 1:
            # redraw columns that collided; each column must have s distinct rows
            while True:
                srt = np.sort(pos, axis=1)
                bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
                if bad.size == 0:
                    break
                pos[bad] = rng.integers(0, self.rows, size=(bad.size, self.s))
        signs = (rng.integers(0, 2, size=(self.cols, self.s), dtype=np.int8) * 2 - 1).astype(np.float64)
        data = signs.ravel() / np.sqrt(self.s)
        col = np.repeat(np.arange(self.cols), self.s)
        row = pos.ravel()
        self.matrix = scipy.sparse.csc_matrix(
            (data, (row, col)), shape=(self.rows, self.cols))

    def apply(self, M) -> np.ndarray:
        """Pi @ M; touches each nonzero of M exactly s times."""
        out = self.matrix @ M
        return out.toarray() if scipy.sparse.issparse(out) else np.asarray(out)

    def columns(self, idx: np.ndarray) -> scipy.sparse.csc_matrix:
        return self.matrix[:, idx]


def embedding_rows(d: int, eps: float, c_embed: float = C_EMBED_DEFAULT) -> int:
    return int(ceil(c_embed * d * log(d + 1.0) / eps ** 2))


def embed(A, eps: float, seed: int, row_scale: np.ndarray | None = None,
          c_embed: float = C_EMBED_DEFAULT) -> np.ndarray:
    """Compress the rows of (scaled) A: returns Pi @ (diag(row_scale) A).

    With high probability (Pi A)^T (Pi A) approximates A^T A within the
    e^{+-eps} spectral band.  Identical inputs and seed give bitwise
    identical output.
    """
    if not (0.0 < eps <= 0.5):
        raise ValueError("eps must lie in (0, 0.5]")
    sp = A.csr if isinstance(A, ConstraintMatrix) else scipy.sparse.csr_matrix(A, dtype=np.float64)
    n, d = sp.shape
    if row_scale is not None:
        scale = np.asarray(row_scale, dtype=np.float64)
        if scale.shape[0] != n:
            raise ValueError("row_scale length does not match row count")
        sp = sp.multiply(scale[:, None]).tocsr()
    r = embedding_rows(d, eps, c_embed)
    s = int(ceil(np.log2(d + 1.0)))
    pi = SubspaceEmbedding(rows=r, cols=n, s=s, seed=seed)
    return pi.apply(sp)


def exact_leverage_scores(A: ConstraintMatrix, w: WeightVector | np.ndarray | None = None) -> np.ndarray:
    """Dense-arithmetic leverage scores of D^0.5 A; the testing oracle.

    Zero-weight rows have score zero.  Scores are scale invariant in the
    weights and sum to the column rank.
    """
    if w is None:
        w = WeightVector.ones(A.n)
    elif not isinstance(w, WeightVector):
        w = WeightVector(w)
    g = gram_product(A, w)
    rows = w.support
    b = A.csr[rows].toarray() * np.sqrt(w.values[rows])[:, None]
    y = g.solve(b.T).T
    sigma = np.zeros(A.n)
    sigma[rows] = np.einsum("ij,ij->i", b, y)
    return np.clip(sigma, 0.0, 1.0)


@dataclass
class LeverageEstimate:
    tau: np.ndarray       # clamped to (1e-12, 1]
    eps_tau: float
    probes: int


def estimate_leverage(A: ConstraintMatrix, w: WeightVector, S: SolverHandle,
                      eps_tau: float, seed: int,
                      c_jl: float = C_JL_DEFAULT) -> LeverageEstimate:
    """Estimate leverage scores through a solver for A^T D A.

    Uses k = ceil(c_jl log(n) / eps_tau^2) random sign probes g and averages
    (d_i^0.5 a_i^T S(A^T D^0.5 g, eps_inner))^2 per row, with the inner solve
    accuracy fixed to eps_tau^2 / (16 n^4).  With high probability the result
    brackets sigma_i within a (1 +- eps_tau) factor.
    """
    if S.dim != A.d:
        raise SolverMismatch(f"solver dimension {S.dim} does not match column count {A.d}")
    if not (0.0 < eps_tau <= 0.5):
        raise ValueError("eps_tau must lie in (0, 0.5]")
    n = A.n
    k = int(ceil(c_jl * log(max(n, 2)) / eps_tau ** 2))
    eps_inner = max(eps_tau ** 2 / (16.0 * float(n) ** 4), 1e-300)
    rng = rng_from(seed, 0x7A)
    g = rademacher_matrix(rng, n, k)
    sqrt_w = np.sqrt(w.values)
    rhs = A.csr.T @ (g * sqrt_w[:, None])
    if S.linear:
        x = S.as_matrix(eps_inner) @ rhs
    else:
        x = S.apply(rhs, eps_inner)
    proj = (A.csr @ x) * sqrt_w[:, None]
    tau = np.mean(proj * proj, axis=1)
    tau = np.clip(tau, 1e-12, 1.0)
    return LeverageEstimate(tau=tau, eps_tau=eps_tau, probes=k)


@dataclass
class Sparsifier:
    """Kept rows with scales h_i = d_i / p_i plus the probabilities used."""

    kept: np.ndarray      # row indices
    scales: np.ndarray    # h_i per kept row
    p: np.ndarray         # sampling probabilities, full length n
    params: dict = field(default_factory=dict)

    def weight_vector(self, n: int) -> WeightVector:
        h = np.zeros(n)
        h[self.kept] = self.scales
        return WeightVector(h)

    @property
    def kept_count(self) -> int:
        return int(self.kept.size)


def sample_sparsifier(A: ConstraintMatrix, w: WeightVector, u: np.ndarray,
                      eps: float, seed: int, c_s: float = C_S_DEFAULT) -> Sparsifier:
    """Keep row i with probability p_i = min(1, c_s eps^-2 u_i log n), scale d_i/p_i.

    u must overestimate the leverage scores of D^0.5 A for the spectral
    guarantee to hold; the expected number of kept rows is at most
    c_s eps^-2 ||u||_1 log n.
    """
    if not (0.0 < eps <= 0.5):
        raise ValueError("eps must lie in (0, 0.5]")
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != A.n:
        raise ValueError("overestimate length does not match row count")
    p = np.minimum(1.0, c_s * eps ** -2 * u * log(max(A.n, 2)))
    rng = rng_from(seed, 0x5A)
    draws = rng.random(A.n)
    kept_mask = (draws < p) & (w.values > 0)
    kept = np.flatnonzero(kept_mask)
    scales = w.values[kept] / p[kept]
    return Sparsifier(kept=kept, scales=scales, p=p,
                      params={"eps": eps, "c_s": c_s, "seed": seed})


def sample_by_probability(w: WeightVector, p: np.ndarray, seed: int) -> Sparsifier:
    """Sampling step with caller-supplied probabilities (already clamped to [0,1])."""
    rng = rng_from(seed, 0x5B)
    draws = rng.random(w.n)
    kept_mask = (draws < p) & (w.values > 0)
    kept = np.flatnonzero(kept_mask)
    scales = w.values[kept] / p[kept]
    return Sparsifier(kept=kept, scales=scales, p=p, params={"seed": seed})
