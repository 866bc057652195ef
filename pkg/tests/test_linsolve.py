import numpy as np
import pytest
import scipy.sparse as sp

from sparseafem.linsolve import (LinearSolveError, factorize_spd,
                                 solve_coupled, solve_spd)


def random_spd(n, rng, density=0.3):
    R = sp.random(n, n, density=density, random_state=rng, format="csr")
    return (R @ R.T + n * sp.identity(n)).tocsr()


class TestSolveSpd:
    def test_identity(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal(6)
        x = solve_spd(sp.identity(6, format="csr"), b)
        np.testing.assert_allclose(x, b, atol=1e-12)

    def test_two_by_two(self):
        A = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        x = solve_spd(A, np.array([1.0, 1.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-10)

    def test_zero_rhs(self):
        A = sp.csr_matrix(np.array([[3.0, 1.0], [1.0, 3.0]]))
        assert not solve_spd(A, np.zeros(2)).any()

    def test_residual_contract(self):
        rng = np.random.default_rng(5)
        A = random_spd(60, rng)
        b = rng.standard_normal(60)
        for tol in (1e-6, 1e-12):
            x = solve_spd(A, b, tol=tol)
            assert np.linalg.norm(b - A @ x) <= tol * np.linalg.norm(b)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        A = random_spd(40, rng)
        b = rng.standard_normal(40)
        perm = rng.permutation(40)
        P = sp.csr_matrix((np.ones(40), (np.arange(40), perm)))
        tol = 1e-11
        x = solve_spd(A, b, tol=tol)
        xp = solve_spd((P @ A @ P.T).tocsr(), P @ b, tol=tol)
        assert np.linalg.norm(P @ x - xp) <= 10 * tol * np.linalg.norm(x)

    def test_indefinite_rejected(self):
        A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(LinearSolveError):
            solve_spd(A, np.array([1.0, 1.0]))

    def test_error_carries_residual(self):
        A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
        try:
            solve_spd(A, np.array([1.0, 1.0]))
        except LinearSolveError as err:
            assert err.residual is None or np.isfinite(err.residual)


class TestFactorize:
    def test_reuse(self):
        rng = np.random.default_rng(2)
        A = random_spd(25, rng)
        lu = factorize_spd(A)
        for _ in range(3):
            b = rng.standard_normal(25)
            x = lu.solve(b)
            assert np.linalg.norm(b - A @ x) <= 1e-10 * np.linalg.norm(b)


class TestSolveCoupled:
    def rand_blocks(self, n, rng):
        A = random_spd(n, rng)
        M = random_spd(n, rng, density=0.2)
        B = -random_spd(n, rng, density=0.2)  # NSD coupling as in Newton
        return A, B, M

    def test_hand_solved_1x1(self):
        A = sp.csr_matrix(np.array([[2.0]]))
        B = sp.csr_matrix(np.array([[1.0]]))
        M = sp.csr_matrix(np.array([[1.0]]))
        x1, x2 = solve_coupled(A, B, M, np.array([1.0]), np.array([1.0]))
        # [[2,-1],[-1,2]] [x1;x2] = [1;1]
        np.testing.assert_allclose([x1[0], x2[0]], [1.0, 1.0], atol=1e-10)

    def test_decoupled_matches_spd(self):
        rng = np.random.default_rng(4)
        A = random_spd(30, rng)
        Z = sp.csr_matrix((30, 30))
        b1 = rng.standard_normal(30)
        b2 = rng.standard_normal(30)
        x1, x2 = solve_coupled(A, Z, Z, b1, b2)
        np.testing.assert_allclose(x1, solve_spd(A, b1, tol=1e-12),
                                   atol=1e-8)
        np.testing.assert_allclose(x2, solve_spd(A, b2, tol=1e-12),
                                   atol=1e-8)

    def test_zero_rhs(self):
        rng = np.random.default_rng(6)
        A, B, M = self.rand_blocks(12, rng)
        x1, x2 = solve_coupled(A, B, M, np.zeros(12), np.zeros(12))
        assert not x1.any() and not x2.any()

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(9)
        for n in (5, 17, 33):
            A, B, M = self.rand_blocks(n, rng)
            b1 = rng.standard_normal(n)
            b2 = rng.standard_normal(n)
            x1, x2 = solve_coupled(A, B, M, b1, b2, tol=1e-12)
            K = np.block([[A.toarray(), -B.toarray()],
                          [-M.toarray(), A.toarray()]])
            want = np.linalg.solve(K, np.concatenate([b1, b2]))
            got = np.concatenate([x1, x2])
            assert np.linalg.norm(got - want) <= 1e-7 * np.linalg.norm(want)

    def test_block_residual_contract(self):
        rng = np.random.default_rng(10)
        A, B, M = self.rand_blocks(50, rng)
        b1 = rng.standard_normal(50)
        b2 = rng.standard_normal(50)
        tol = 1e-10
        x1, x2 = solve_coupled(A, B, M, b1, b2, tol=tol)
        r1 = b1 - (A @ x1 - B @ x2)
        r2 = b2 - (A @ x2 - M @ x1)
        rhs = np.linalg.norm(np.concatenate([b1, b2]))
        assert np.hypot(np.linalg.norm(r1), np.linalg.norm(r2)) <= tol * rhs

    def test_singular_system_raises(self):
        Z = sp.csr_matrix((2, 2))
        A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        # B = M = A makes [[A,-A],[-A,A]] singular
        with pytest.raises(LinearSolveError):
            solve_coupled(A, A, A, np.array([1.0, 0.0]),
                          np.array([0.0, 1.0]))

    def test_shape_mismatch(self):
        A = sp.identity(3, format="csr")
        B = sp.identity(2, format="csr")
        with pytest.raises(LinearSolveError):
            solve_coupled(A, B, A, np.zeros(3), np.zeros(3))
