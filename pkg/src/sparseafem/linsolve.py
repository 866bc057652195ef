"""Sparse linear solvers for the discrete optimality systems.

Two entry points: ``solve_spd`` (conjugate gradients with Jacobi
preconditioning, for the symmetric positive definite Poisson-type
systems) and ``solve_coupled`` (the 2x2 block systems arising in the
semismooth Newton iteration).  Both verify the achieved residual
directly on the returned vector instead of trusting iteration
bookkeeping.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolveError(Exception):
    """Solver failure; carries the last achieved relative residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def solve_spd(A, b, tol=1e-10, max_iter=None):
    """Solve A x = b for symmetric positive definite sparse A.

    Preconditioned conjugate gradients with the diagonal (Jacobi)
    preconditioner; iteration cap 20 n.  Convergence means the true
    residual satisfies ||A x - b|| <= tol * ||b||.
    """
    A = A.tocsr() if sp.issparse(A) else sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise LinearSolveError("shape mismatch between matrix and rhs")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise LinearSolveError("non-positive diagonal entry; matrix not SPD")
    dinv = 1.0 / d
    if max_iter is None:
        max_iter = 20 * n

    x = np.zeros(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = r @ z
    resid = bnorm
    for _ in range(max_iter):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise LinearSolveError("indefinite direction; matrix not SPD",
                                   residual=resid / bnorm)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        resid = np.linalg.norm(r)
        if resid <= tol * bnorm:
            # recursive residual can drift; accept only the true one
            true_r = np.linalg.norm(b - A @ x)
            if true_r <= tol * bnorm:
                return x
            r = b - A @ x
            resid = true_r
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveError(
        f"PCG did not reach tol {tol:g} within {max_iter} iterations",
        residual=resid / bnorm)


def factorize_spd(A):
    """Sparse LU factor of A, reusable across solves with many rhs."""
    try:
        return spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise LinearSolveError(f"factorization failed: {exc}") from exc


def _coupled_residual(A, B, M, x1, x2, b1, b2):
    r1 = A @ x1 - B @ x2 - b1
    r2 = -(M @ x1) + A @ x2 - b2
    return np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2)


def solve_coupled(A, B, M, b1, b2, tol=1e-10, factor=None):
    """Solve the block system [[A, -B], [-M, A]] [x1; x2] = [b1; b2].

    A is the (SPD) stiffness block, B the control-coupling block, M a
    mass matrix.  Strategy: eliminate x1 through a sparse LU factor of
    A and run GMRES on the Schur complement A - M A^{-1} B of the x2
    block, preconditioned by A^{-1}.  If the verified block residual
    misses the tolerance, fall back to a sparse LU of the assembled
    2n x 2n system.  ``factor`` optionally reuses a factor of A.
    """
    A = A.tocsr()
    B = B.tocsr()
    M = M.tocsr()
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    n = A.shape[0]
    for mat, name in ((B, "B"), (M, "M")):
        if mat.shape != (n, n):
            raise LinearSolveError(f"block {name} has shape {mat.shape}, "
                                   f"expected {(n, n)}")
    if b1.shape != (n,) or b2.shape != (n,):
        raise LinearSolveError("rhs length does not match block size")

    bnorm = np.sqrt(np.linalg.norm(b1) ** 2 + np.linalg.norm(b2) ** 2)
    if bnorm == 0.0:
        return np.zeros(n), np.zeros(n)

    try:
        lu = factor if factor is not None else factorize_spd(A)

        def schur_mv(q):
            return A @ q - M @ lu.solve(B @ q)

        S = spla.LinearOperator((n, n), matvec=schur_mv)
        precond = spla.LinearOperator((n, n), matvec=lu.solve)
        rhs = b2 + M @ lu.solve(b1)
        x2, _ = spla.gmres(S, rhs, M=precond, rtol=min(tol, 1e-10), atol=0.0,
                           restart=80, maxiter=6)
        x1 = lu.solve(b1 + B @ x2)
        if _coupled_residual(A, B, M, x1, x2, b1, b2) <= tol * bnorm:
            return x1, x2
    except LinearSolveError:
        pass

    # direct fallback on the assembled block matrix
    full = sp.bmat([[A, -B], [-M, A]], format="csc")
    try:
        lu_full = spla.splu(full)
    except RuntimeError as exc:
        raise LinearSolveError(
            f"coupled system is singular: {exc}") from exc
    x = lu_full.solve(np.concatenate([b1, b2]))
    x1, x2 = x[:n], x[n:]
    resid = _coupled_residual(A, B, M, x1, x2, b1, b2)
    if not np.isfinite(resid) or resid > tol * bnorm:
        raise LinearSolveError(
            "coupled solve failed to reach tolerance "
            f"(residual {resid / bnorm:.3e})", residual=resid / bnorm)
    return x1, x2
