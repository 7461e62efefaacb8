import numpy as np
import pytest

import gramsolve as gs
from gramsolve.solver_core import estimate_condition_bound, iteration_count

from conftest import random_pd
from oracles import solver_error_ratio


def make_inverse(M, L, scale=1.0):
    Minv = np.linalg.inv(M) * scale
    return gs.ApproxInverse(dim=M.shape[0], apply_N=lambda v: Minv @ v, L=L)


class TestIterationCount:
    def test_closed_form_value(self):
        # z = ceil(0.5 log(eps L^-4) / log(1 - L^-2)) at eps=0.01, L=1.01
        L, eps = 1.01, 0.01
        expected = int(np.ceil(0.5 * np.log(eps * L ** -4) / np.log(1 - L ** -2)))
        assert iteration_count(L, eps) == expected == 1

    def test_l_equal_one(self):
        assert iteration_count(1.0, 1e-8) == 0

    def test_cap_engages(self):
        # absurd L: cap 10 ceil(L^2 ln(1/eps)) must bound the count
        L, eps = 50.0, 1e-6
        assert iteration_count(L, eps) <= 10 * int(np.ceil(L * L * np.log(1 / eps)))


class TestRichardson:
    def test_exact_inverse_preconditioner(self, rng):
        M = random_pd(rng, 6)
        S = gs.richardson_solver(make_inverse(M, 1.01), lambda v: M @ v)
        b = rng.standard_normal(6)
        assert solver_error_ratio(M, S.apply(b, 0.01), b) <= 0.01

    def test_identity(self):
        M = np.eye(3)
        S = gs.richardson_solver(make_inverse(M, 1.5), lambda v: M @ v)
        e1 = np.array([1.0, 0.0, 0.0])
        x = S.apply(e1, 0.25)
        assert solver_error_ratio(M, x, e1) <= 0.25

    def test_scaled_diagonal_preconditioner(self):
        M = np.diag([1.0, 4.0])
        N = np.diag([1.0, 1.0 / 3.0])
        inv = gs.ApproxInverse(dim=2, apply_N=lambda v: N @ v, L=4.0 / 3.0)
        S = gs.richardson_solver(inv, lambda v: M @ v)
        x = S.apply(np.array([1.0, 1.0]), 1e-6)
        assert solver_error_ratio(M, x, np.array([1.0, 1.0])) <= 1e-6
        assert np.allclose(x, [1.0, 0.25], atol=1e-3)

    def test_contract_across_eps(self, rng):
        for _ in range(5):
            M = random_pd(rng, 10)
            # crude preconditioner: half the inverse, L = 2 covers it
            S = gs.richardson_solver(make_inverse(M, 2.0, scale=0.5), lambda v: M @ v)
            for eps in (0.5, 0.1, 1e-4):
                b = rng.standard_normal(10)
                assert solver_error_ratio(M, S.apply(b, eps), b) <= eps

    def test_error_contracts_geometrically(self, rng):
        M = random_pd(rng, 7)
        inv = make_inverse(M, 2.0, scale=0.5)
        b = rng.standard_normal(7)
        ref = np.linalg.solve(M, b)

        def run(z):
            x = inv.apply_N(b) / 2.0
            for _ in range(z):
                x = x + inv.apply_N(b - M @ x) / 2.0
            return float((x - ref) @ (M @ (x - ref)))

        z = iteration_count(2.0, 1e-6)
        assert run(2 * z) <= run(z) + 1e-12

    def test_wrong_l_detected(self, rng):
        M = random_pd(rng, 5, cond=100.0)
        # N far from M^-1 while L claims near-exactness
        N = np.eye(5) * 1e-3
        inv = gs.ApproxInverse(dim=5, apply_N=lambda v: N @ v, L=1.2)
        S = gs.richardson_solver(inv, lambda v: M @ v)
        with pytest.raises(gs.NonConvergence):
            S.apply(rng.standard_normal(5), 1e-4)

    def test_l_estimation(self, rng):
        M = random_pd(rng, 8)
        inv = make_inverse(M, None, scale=0.7)
        S = gs.richardson_solver(inv, lambda v: M @ v, seed=3)
        b = rng.standard_normal(8)
        assert solver_error_ratio(M, S.apply(b, 1e-5), b) <= 1e-5

    def test_linearity(self, rng):
        M = random_pd(rng, 4)
        S = gs.richardson_solver(make_inverse(M, 1.3, scale=0.9), lambda v: M @ v)
        b1, b2 = rng.standard_normal(4), rng.standard_normal(4)
        lhs = S.apply(2.0 * b1 - 3.0 * b2, 0.01)
        rhs = 2.0 * S.apply(b1, 0.01) - 3.0 * S.apply(b2, 0.01)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_estimate_condition_bound_covers(self, rng):
        M = random_pd(rng, 6, cond=30.0)
        Minv = np.linalg.inv(M)
        inv = gs.ApproxInverse(dim=6, apply_N=lambda v: 0.5 * (Minv @ v), L=None)
        L = estimate_condition_bound(inv, lambda v: M @ v, seed=1)
        # true extreme eigenvalues of N^{1/2} M N^{1/2} are 0.5; need L >= 2
        assert L >= 2.0


class TestCertify:
    def test_exact_solver_certifies(self, rng):
        M = gs.PDMatrix(random_pd(rng, 6))
        S = gs.exact_factorize(M)
        rep = gs.certify_solver(S, M, eps=0.01, trials=6)
        assert rep.certified
        assert np.exp(-0.4) <= rep.lam_min <= rep.lam_max <= np.exp(0.4)

    def test_zero_solver_fails(self):
        M = gs.PDMatrix(np.diag([1.0, 2.0]))
        Z = gs.SolverHandle(dim=2, provenance="exact", linear=True,
                            _apply=lambda b, eps: np.zeros_like(b))
        rep = gs.certify_solver(Z, M, eps=0.01, trials=2)
        assert not rep.certified

    def test_richardson_certifies(self, rng):
        M = gs.PDMatrix(random_pd(rng, 10))
        Minv = np.linalg.inv(M.array)
        inv = gs.ApproxInverse(dim=10, apply_N=lambda v: 0.8 * (Minv @ v), L=1.3)
        S = gs.richardson_solver(inv, lambda v: M.array @ v)
        rep = gs.certify_solver(S, M, eps=0.04, trials=10)
        assert rep.certified and rep.band == pytest.approx(0.8)

    def test_nonlinear_rejected(self):
        M = gs.PDMatrix(np.eye(2))
        S = gs.SolverHandle(dim=2, provenance="noisy", linear=False,
                            _apply=lambda b, eps: b)
        with pytest.raises(gs.NotLinear):
            gs.certify_solver(S, M, 0.01, trials=2)

    def test_insufficient_trials(self):
        M = gs.PDMatrix(np.eye(3))
        S = gs.exact_factorize(M)
        with pytest.raises(ValueError):
            gs.certify_solver(S, M, 0.01, trials=2)
