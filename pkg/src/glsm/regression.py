"""Least squares solves for the per-step regression and conditioning checks.

The minimizer of ||A beta - u||_2 is found by conjugate gradients on the
normal equations A^T A beta = A^T u with a Jacobi preconditioner.  The
normal matrix is formed explicitly: for up to DENSE_NORMAL_MAX_NB columns
from a materialized A (one syrk), beyond that by streaming row blocks of
the gradient-enhanced matrix through a bounded scratch buffer so A itself
is never allocated (the n_paths x n_basis array is the memory bottleneck
at high dimension).  Non-convergence falls back to a dense
orthogonal-factorization solve and is flagged in the diagnostics.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq as dense_lstsq
from scipy.sparse.linalg import LinearOperator, cg

from . import basis as basis_mod

DENSE_NORMAL_MAX_NB = 4096
_STREAM_BLOCK = 8192


@dataclass
class LstsqDiagnostics:
    iterations: int
    residual: float          # relative normal-equation residual at exit
    converged: bool
    used_fallback: bool


class StreamedGradientSystem:
    """Normal equations of the gradient-enhanced matrix, built block-wise.

    Holds the transposed basis matrix phi_t (n_basis, m) and increments
    dw_t (d, m).  Row m of the implied regression matrix A is
    phi_n(W_m) + grad phi_n(W_m) . dW_m; path blocks of it are assembled
    into a scratch buffer and accumulated into A^T A and A^T u, so peak
    memory is n_basis^2 plus one block instead of a second full
    basis-sized array.
    """

    def __init__(self, phi_t, dw_t, index_set, t, block=_STREAM_BLOCK):
        self.phi_t = phi_t
        self.dw_t = np.asarray(dw_t, dtype=float)
        self.index_set = index_set
        self.t = t
        self.block = block
        self.shape = (phi_t.shape[1], phi_t.shape[0])

    def gram_and_rhs(self, rhs):
        m = self.shape[0]
        nb = self.index_set.n_basis
        gram = np.zeros((nb, nb))
        b = np.zeros(nb)
        scratch = np.empty((nb, min(self.block, m)))
        for lo in range(0, m, self.block):
            hi = min(lo + self.block, m)
            blk_t = scratch[:, : hi - lo]
            basis_mod.assemble_t(
                self.phi_t[:, lo:hi], self.dw_t[:, lo:hi], self.index_set, self.t, blk_t
            )
            gram += blk_t @ blk_t.T
            b += blk_t @ rhs[lo:hi]
        return gram, b

    def materialize(self):
        out_t = np.empty_like(self.phi_t)
        basis_mod.assemble_t(self.phi_t, self.dw_t, self.index_set, self.t, out_t)
        return out_t.T


def _jacobi(diag):
    safe = np.where(diag > 0, diag, 1.0)
    n = diag.shape[0]
    return LinearOperator((n, n), matvec=lambda v: v / safe)


def _cg_normal(gram, b, tol, max_iter, x0):
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = cg(gram, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter,
                 M=_jacobi(np.diag(gram).copy()), callback=count)
    bnorm = np.linalg.norm(b)
    resid = float(np.linalg.norm(b - gram @ x) / bnorm) if bnorm > 0 else 0.0
    return x, iters, resid, info == 0


def solve_least_squares(a, rhs, tol=1e-10, max_iter=500, ridge=0.0, x0=None):
    """Minimize ||a x - rhs||_2; returns (x, LstsqDiagnostics).

    a is either a dense (m, n) array or a StreamedGradientSystem.
    Converged when the relative normal-equation residual
    ||A^T A x - A^T rhs|| / ||A^T rhs|| drops below tol; the Jacobi
    preconditioner accelerates the iteration without changing the solution.
    ridge > 0 adds Tikhonov damping (off for all benchmark runs).
    """
    m, n = a.shape
    if m < n:
        raise ValueError(f"regression needs at least as many rows as columns ({m} < {n})")
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("right-hand side contains non-finite entries")

    if isinstance(a, np.ndarray):
        gram = a.T @ a
        b = a.T @ rhs
    else:
        gram, b = a.gram_and_rhs(rhs)
    if ridge:
        gram.flat[:: n + 1] += ridge

    x, iters, resid, ok = _cg_normal(gram, b, tol, max_iter, x0)
    if ok:
        return x, LstsqDiagnostics(iters, resid, True, False)

    # dense orthogonal-factorization fallback on the full system
    mat = a if isinstance(a, np.ndarray) else a.materialize()
    if ridge:
        mat = np.vstack([mat, np.sqrt(ridge) * np.eye(n)])
        rhs = np.concatenate([rhs, np.zeros(n)])
    x, *_ = dense_lstsq(mat, rhs, lapack_driver="gelsy")
    bnorm = np.linalg.norm(b)
    resid = float(np.linalg.norm(b - gram @ x) / bnorm) if bnorm > 0 else 0.0
    return x, LstsqDiagnostics(iters, resid, False, True)


def estimate_condition(a, k, p, d):
    """Extreme-eigenvalue ratio of A^T A / m versus the large-sample limit
    1 + (p + d - 1) / k at time step k."""
    if k < 1:
        raise ValueError("step index must be >= 1")
    m = a.shape[0]
    gram = (a.T @ a) / m
    eigs = np.linalg.eigvalsh(gram)
    empirical = float("inf") if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
    theoretical = 1.0 + (p + d - 1) / k
    return empirical, theoretical
