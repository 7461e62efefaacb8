import numpy as np
import pytest

from gramsolve import ConstraintMatrix, WeightVector


def random_instance(rng, n, d, row_nnz=3, ensure_dense_rows=True):
    """Sparse full-rank test matrix with `row_nnz` entries per row.

    The first d rows carry a shifted identity block so the column rank is d
    regardless of the random fill.
    """
    rows, cols, vals = [], [], []
    for i in range(n):
        if ensure_dense_rows and i < d:
            rows.append(i)
            cols.append(i)
            vals.append(1.0 + rng.random())
        picks = rng.choice(d, size=min(row_nnz, d), replace=False)
        for j in picks:
            if ensure_dense_rows and i < d and j == i:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(rng.standard_normal())
    import scipy.sparse

    coo = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, d))
    coo.sum_duplicates()
    return ConstraintMatrix(coo)


def random_weights(rng, n, low=0.5, high=2.0):
    return WeightVector(rng.uniform(low, high, size=n))


def random_pd(rng, d, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return q @ np.diag(lam) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
