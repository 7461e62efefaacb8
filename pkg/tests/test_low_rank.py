import numpy as np
import pytest

import gramsolve as gs
from gramsolve.low_rank import (
    ExplicitInverseState,
    ProductTracker,
    SplitMaintainer,
    explicit_maintainer_round,
    split_maintainer_round,
    woodbury_inverse_apply,
)
from gramsolve.matrix_core import WeightVector, gram_product

from conftest import random_instance, random_pd, random_weights
from oracles import solver_error_ratio, spectral_band


class TestWoodbury:
    def test_zero_update(self, rng):
        A = random_pd(rng, 4)
        Ainv = np.linalg.inv(A)
        b = rng.standard_normal(4)
        out = woodbury_inverse_apply(lambda v: Ainv @ v, np.zeros((4, 2)),
                                     np.eye(2), np.zeros((2, 4)), b)
        assert np.allclose(out, Ainv @ b)

    def test_rank_one_identity(self):
        e1 = np.array([[1.0], [0.0]])
        b = np.array([2.0, 2.0])
        out = woodbury_inverse_apply(lambda v: v, e1, np.array([[1.0]]), e1.T, b)
        assert np.allclose(out, [1.0, 2.0])

    def test_random_against_dense(self, rng):
        for _ in range(15):
            d = int(rng.integers(2, 17))
            m = int(rng.integers(1, d + 1))
            A = random_pd(rng, d)
            U = rng.standard_normal((d, m))
            C = random_pd(rng, m)
            V = rng.standard_normal((m, d))
            b = rng.standard_normal(d)
            ref = np.linalg.solve(A + U @ C @ V, b)
            Ainv = np.linalg.inv(A)
            out = woodbury_inverse_apply(lambda v: Ainv @ v, U, C, V, b)
            assert np.allclose(out, ref, rtol=1e-9, atol=1e-9 * np.linalg.norm(ref))

    def test_singular_capacitance(self):
        # A = I, U C V = -I on a 1-dim block makes the capacitance singular
        U = np.array([[1.0], [0.0]])
        C = np.array([[-1.0]])
        with pytest.raises(gs.SingularCapacitance):
            woodbury_inverse_apply(lambda v: v, U, C, U.T, np.ones(2))


class TestProductTracker:
    @staticmethod
    def dense_ref(L, R, x, y):
        return (x[:, None] * L) @ (y[:, None] * R).T

    def test_no_change_is_free(self, rng):
        L = rng.standard_normal((6, 3))
        R = rng.standard_normal((6, 3))
        x = rng.standard_normal(6)
        y = rng.standard_normal(6)
        t = ProductTracker(L, R, x0=x, y0=y)
        before = t.work
        t.update(x, y)
        assert t.work == before
        assert t.changed_pairs == 0

    def test_single_coordinate_change(self, rng):
        n, d = 6, 4
        L = rng.standard_normal((n, d))
        R = rng.standard_normal((n, d))
        x = rng.uniform(1, 2, n)
        y = rng.uniform(1, 2, n)
        t = ProductTracker(L, R, x0=x, y0=y)
        x2 = x.copy()
        x2[1] = 2.0
        t.update(x2, y)
        assert np.allclose(t.dense(), self.dense_ref(L, R, x2, y), atol=1e-9)

    def test_interleaved_changes_match_dense(self, rng):
        n, d = 10, 3
        L = rng.standard_normal((n, d))
        R = rng.standard_normal((n, d))
        x = np.zeros(n)
        y = np.zeros(n)
        x[:4] = rng.uniform(0.5, 1.5, 4)
        y[:4] = rng.uniform(0.5, 1.5, 4)
        t = ProductTracker(L, R, x0=x, y0=y)
        for step in range(12):
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            x[i] = rng.uniform(-1, 1)
            y[j] = rng.uniform(-1, 1)
            t.update(x, y)
            assert np.allclose(t.dense(), self.dense_ref(L, R, x, y), atol=1e-8)

    def test_work_grows_linearly(self, rng):
        # r rounds of one change each on a fixed active set: per-round work is
        # flat, so cumulative work is linear in r (a dense recompute would pay
        # n*d*n every round regardless)
        n, d = 30, 4
        L = rng.standard_normal((n, d))
        R = rng.standard_normal((n, d))
        x = np.zeros(n)
        x[:5] = 1.0
        y = x.copy()
        t = ProductTracker(L, R, x0=x, y0=y)
        marks = []
        for r in range(20):
            x = x.copy()
            x[r % 5] = 1.0 + 0.1 * (r + 1)
            t.update(x, y)
            marks.append(t.work)
        increments = np.diff(np.array(marks))
        assert np.all(increments == increments[0])

    def test_cost_subadditive_batching(self, rng):
        # 2k single-coordinate rounds cost at most 2x k double-coordinate
        # rounds (plus 20 percent), both against the same final state
        n, d, k = 24, 5, 6
        L = rng.standard_normal((n, d))
        R = rng.standard_normal((n, d))
        x0 = np.ones(n)
        targets = rng.uniform(1.5, 2.5, size=2 * k)
        idx = rng.choice(n, size=2 * k, replace=False)

        t_single = ProductTracker(L, R, x0=x0.copy(), y0=x0.copy())
        x = x0.copy()
        for step in range(2 * k):
            x = x.copy()
            x[idx[step]] = targets[step]
            t_single.update(x, x)

        t_double = ProductTracker(L, R, x0=x0.copy(), y0=x0.copy())
        x = x0.copy()
        for step in range(k):
            x = x.copy()
            x[idx[2 * step]] = targets[2 * step]
            x[idx[2 * step + 1]] = targets[2 * step + 1]
            t_double.update(x, x)

        assert t_single.work <= 2.0 * t_double.work * 1.2

    def test_budget_exceeded(self, rng):
        n, d = 8, 3
        L = rng.standard_normal((n, d))
        t = ProductTracker(L, L, x0=np.ones(n), y0=np.ones(n), budget=2)
        x = np.ones(n)
        x[0] = 2.0
        t.update(x, x)
        x2 = x.copy()
        x2[1] = 3.0
        t.update(x2, x2)
        x3 = x2.copy()
        x3[2] = 4.0
        with pytest.raises(gs.BudgetExceeded):
            t.update(x3, x3)


def m_norm_rel_error(M, x, ref):
    diff = x - ref
    return np.sqrt(float(diff @ (M @ diff)) / float(ref @ (M @ ref)))


class TestExplicitInverse:
    def test_no_change_equals_base_inverse(self, rng):
        A = random_instance(rng, 12, 4)
        w = random_weights(rng, 12)
        st = ExplicitInverseState(A, w)
        h = explicit_maintainer_round(st, w)
        b = rng.standard_normal(4)
        assert np.allclose(h.apply(b, 0.1), st.B0_inv @ b)

    def test_one_coordinate_doubled(self, rng):
        A = random_instance(rng, 6, 3)
        w = random_weights(rng, 6)
        st = ExplicitInverseState(A, w)
        d1 = w.values.copy()
        d1[2] *= 2.0
        h = explicit_maintainer_round(st, d1)
        M = gram_product(A, WeightVector(d1))
        exact = gs.exact_factorize(M)
        for _ in range(5):
            b = rng.standard_normal(3)
            ref = exact.apply(b, 1e-12)
            assert m_norm_rel_error(M.array, h.apply(b, 0.1), ref) <= 1e-8

    def test_two_rounds_disjoint_pairs(self, rng):
        A = random_instance(rng, 6, 3)
        w = random_weights(rng, 6)
        st = ExplicitInverseState(A, w)
        d1 = w.values.copy()
        d1[0] *= 1.5
        d1[1] *= 0.5
        explicit_maintainer_round(st, d1)
        d2 = d1.copy()
        d2[3] *= 3.0
        d2[4] *= 0.25
        h = explicit_maintainer_round(st, d2)
        assert st.support_size == 4
        M = gram_product(A, WeightVector(d2))
        ref = np.linalg.solve(M.array, np.eye(3))
        got = h.apply(np.eye(3), 0.1)
        assert np.allclose(got, ref, atol=1e-8 * np.abs(ref).max())

    def test_support_discards_restored_coordinates(self, rng):
        A = random_instance(rng, 6, 3)
        w = random_weights(rng, 6)
        st = ExplicitInverseState(A, w)
        d1 = w.values.copy()
        d1[0] *= 2.0
        d1[1] *= 2.0
        explicit_maintainer_round(st, d1)
        d2 = d1.copy()
        d2[1] = w.values[1]  # back to its base value
        d2[3] *= 2.0
        h = explicit_maintainer_round(st, d2)
        assert st.support_size == 2  # coordinate 1 dropped from the V support
        M = gram_product(A, WeightVector(d2))
        exact = gs.exact_factorize(M)
        b = rng.standard_normal(3)
        assert m_norm_rel_error(M.array, h.apply(b, 0.1), exact.apply(b, 1e-12)) <= 1e-8

    def test_many_rounds_match_oracle(self, rng):
        A = random_instance(rng, 50, 6)
        w = random_weights(rng, 50)
        st = ExplicitInverseState(A, w, budget=100)
        d = w.values.copy()
        for _ in range(30):
            i = int(rng.integers(0, 50))
            d = d.copy()
            d[i] *= float(np.exp(rng.uniform(-0.5, 0.5)))
            h = explicit_maintainer_round(st, d)
            M = gram_product(A, WeightVector(d))
            exact = gs.exact_factorize(M)
            for _ in range(3):
                b = rng.standard_normal(6)
                assert m_norm_rel_error(M.array, h.apply(b, 0.1), exact.apply(b, 1e-12)) <= 1e-8

    def test_budget_exceeded(self, rng):
        A = random_instance(rng, 10, 3)
        w = random_weights(rng, 10)
        st = ExplicitInverseState(A, w, budget=1)
        d = w.values.copy()
        d[0] *= 2
        explicit_maintainer_round(st, d)
        d2 = d.copy()
        d2[1] *= 2
        with pytest.raises(gs.BudgetExceeded):
            explicit_maintainer_round(st, d2)

    def test_stale_handle(self, rng):
        A = random_instance(rng, 10, 3)
        w = random_weights(rng, 10)
        st = ExplicitInverseState(A, w)
        d = w.values.copy()
        d[0] *= 2
        h = explicit_maintainer_round(st, d)
        d2 = d.copy()
        d2[1] *= 2
        explicit_maintainer_round(st, d2)
        with pytest.raises(gs.StaleHandle):
            h.apply(np.zeros(3), 0.1)


def churn_scenario(rng, n=40, d=6, rounds=5, beta=10.0):
    """Weights drift mildly on the initial support while one new row gains
    weight per round."""
    A = random_instance(rng, n, d)
    d0 = np.zeros(n)
    d0[: n - rounds] = rng.uniform(0.8, 1.2, n - rounds)
    seq = []
    cur = d0.copy()
    for k in range(rounds):
        cur = cur.copy()
        j = int(rng.integers(0, n - rounds))
        cur[j] *= float(np.exp(rng.uniform(-0.08, 0.08)))
        cur[n - rounds + k] = rng.uniform(0.05, 0.3)
        seq.append(cur)
    return A, WeightVector(d0), seq


class TestSplitMaintainer:
    def test_no_new_rows_reduces_to_explicit(self, rng):
        A = random_instance(rng, 20, 4)
        w = random_weights(rng, 20)
        st = SplitMaintainer(A, w, beta=10.0, seed=1, budget=50)
        d1 = w.values.copy()
        d1[3] *= 1.4
        h = split_maintainer_round(st, d1)
        M = gram_product(A, WeightVector(d1))
        for _ in range(5):
            b = rng.standard_normal(4)
            assert solver_error_ratio(M.array, h.apply(b, 1e-6), b) <= 1e-6

    def test_churn_rounds_stay_in_band(self, rng):
        A, d0, seq = churn_scenario(rng)
        st = SplitMaintainer(A, d0, beta=10.0, seed=7, budget=100)
        for d_k in seq:
            split_maintainer_round(st, d_k)
            K = st.assembled_dense()
            Minv = np.linalg.inv(gram_product(A, WeightVector(d_k)).array)
            assert spectral_band(K, Minv) <= 1.0

    def test_handles_satisfy_contract(self, rng):
        A, d0, seq = churn_scenario(rng)
        st = SplitMaintainer(A, d0, beta=10.0, seed=3, budget=100)
        for d_k in seq:
            h = split_maintainer_round(st, d_k)
            M = gram_product(A, WeightVector(d_k))
            for eps in (0.5, 0.1, 1e-4):
                b = rng.standard_normal(A.d)
                assert solver_error_ratio(M.array, h.apply(b, eps), b) <= eps

    def test_embedded_middle_close_to_exact(self, rng):
        A, d0, seq = churn_scenario(rng)
        st = SplitMaintainer(A, d0, beta=10.0, seed=5, budget=100)
        for d_k in seq:
            split_maintainer_round(st, d_k)
            approx = st.compressed_middle()
            exact = st.exact_middle()
            if exact.size:
                assert spectral_band(approx, exact) <= 1.0

    def test_exact_mode_tighter_than_embedded(self, rng):
        A, d0, seq = churn_scenario(rng)
        st_e = SplitMaintainer(A, d0, beta=10.0, seed=11, budget=100, use_embedding=True)
        st_x = SplitMaintainer(A, d0, beta=10.0, seed=11, budget=100, use_embedding=False)
        for d_k in seq:
            split_maintainer_round(st_e, d_k)
            split_maintainer_round(st_x, d_k)
            Minv = np.linalg.inv(gram_product(A, WeightVector(d_k)).array)
            band_e = spectral_band(st_e.assembled_dense(), Minv)
            band_x = spectral_band(st_x.assembled_dense(), Minv)
            assert band_x <= band_e + 1e-9

    def test_budget_exceeded(self, rng):
        A = random_instance(rng, 12, 3)
        w = random_weights(rng, 12)
        st = SplitMaintainer(A, w, beta=10.0, seed=2, budget=2)
        d1 = w.values.copy()
        d1[0] *= 1.3
        d1[1] *= 1.3
        split_maintainer_round(st, d1)
        d2 = d1.copy()
        d2[2] *= 1.5
        with pytest.raises(gs.BudgetExceeded):
            split_maintainer_round(st, d2)

    def test_drift_violation(self, rng):
        A = random_instance(rng, 12, 3)
        w = random_weights(rng, 12)
        st = SplitMaintainer(A, w, beta=2.0, seed=2, budget=50)
        bad = w.values * 1000.0
        with pytest.raises(gs.DriftViolation):
            split_maintainer_round(st, bad)

    def test_telemetry_report_format(self, rng):
        from gramsolve.low_rank import telemetry_report

        A, d0, seq = churn_scenario(rng, rounds=3)
        st = SplitMaintainer(A, d0, beta=10.0, seed=4, budget=100)
        for d_k in seq:
            split_maintainer_round(st, d_k)
        report = telemetry_report(st)
        lines = [ln for ln in report.splitlines() if ln]
        assert all(len(ln.split()) == 3 for ln in lines)
        names = {ln.split()[0] for ln in lines}
        assert "tracker_work" in names and "f_support" in names
