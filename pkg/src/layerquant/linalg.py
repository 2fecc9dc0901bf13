"""Symmetric eigendecomposition and shifted linear solves.

The quadratic subproblems solved in this package all share one symmetric
positive semidefinite matrix H while the ridge shift rho changes every
iteration. Factoring H = U diag(w) U^T once turns each solve of
(H + rho I) X = B into two dense multiplies and a diagonal rescale, so
the per-shift cost does not depend on rho.

The factorization itself is a cyclic Jacobi iteration. It needs nothing
beyond numpy array arithmetic, behaves identically across BLAS/LAPACK
builds, and is accurate well past the tolerances used downstream for the
matrix sizes this package targets (up to a few thousand rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_float_matrix, check_symmetric

__all__ = [
    "EigenFactorization",
    "JacobiConvergenceError",
    "sym_eig",
    "solve_shifted",
]

_MAX_SWEEPS = 100
_OFF_DIAGONAL_TOL = 1e-12


class JacobiConvergenceError(RuntimeError):
    """Raised when the sweep cap is reached before the off-diagonal target.

    Attributes:
        residual: off-diagonal Frobenius norm at the point of failure.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class EigenFactorization:
    """Eigendecomposition A = U diag(eigenvalues) U^T.

    Attributes:
        eigenvalues: shape (n,), sorted ascending.
        eigenvectors: shape (n, n), orthonormal columns aligned with
            ``eigenvalues``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def _off_diagonal_norm(a: np.ndarray) -> float:
    # Computed from the off-diagonal entries themselves. The algebraically
    # equal sqrt(||A||^2 - ||diag||^2) cancels catastrophically once the
    # off-diagonal part is small and stalls the sweep loop.
    b = a.copy()
    np.fill_diagonal(b, 0.0)
    return float(np.linalg.norm(b))


def sym_eig(a, *, max_sweeps: int = _MAX_SWEEPS) -> EigenFactorization:
    """Eigendecompose a symmetric matrix with cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    1e-12 * ||A||_F; rotations whose pivot is already far below that
    target are skipped so late sweeps stay cheap.

    Args:
        a: symmetric real matrix, shape (n, n).
        max_sweeps: cap on full cyclic sweeps.

    Returns:
        EigenFactorization with ascending eigenvalues.

    Raises:
        ValueError: if ``a`` is not square or not symmetric.
        JacobiConvergenceError: if the cap is hit before convergence.
    """
    a = as_float_matrix(a, "a")
    check_symmetric(a, "a")
    n = a.shape[0]
    work = a.copy()
    u = np.eye(n)
    if n == 1:
        return EigenFactorization(np.diag(work).copy(), u)

    tol = _OFF_DIAGONAL_TOL * float(np.linalg.norm(work))
    # Entries at most skip each can jointly contribute at most ~tol/sqrt(2)
    # to the off-diagonal norm, so skipping them cannot block convergence.
    skip = tol / n
    off = _off_diagonal_norm(work)
    for _ in range(max_sweeps):
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if abs(apq) <= skip:
                    continue
                app = work[p, p]
                aqq = work[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                col_p = work[:, p].copy()
                col_q = work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                row_p = work[p, :].copy()
                row_q = work[q, :].copy()
                work[p, :] = c * row_p - s * row_q
                work[q, :] = s * row_p + c * row_q
                # Closed forms for the pivot block keep it exactly
                # symmetric and annihilate the pivot without residue.
                work[p, p] = app - t * apq
                work[q, q] = aqq + t * apq
                work[p, q] = 0.0
                work[q, p] = 0.0

                u_p = u[:, p].copy()
                u_q = u[:, q].copy()
                u[:, p] = c * u_p - s * u_q
                u[:, q] = s * u_p + c * u_q
        off = _off_diagonal_norm(work)
    else:
        # Loop exhaustion; the final sweep may still have converged.
        if off > tol:
            raise JacobiConvergenceError(
                f"no convergence after {max_sweeps} sweeps: off-diagonal "
                f"norm {off:.3e} above target {tol:.3e}",
                residual=off,
            )

    eigenvalues = np.diag(work).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return EigenFactorization(eigenvalues[order], u[:, order])


def solve_shifted(eig: EigenFactorization, rho: float, b) -> np.ndarray:
    """Solve (A + rho I) X = B given an eigendecomposition of A.

    Args:
        eig: factorization of the symmetric matrix A.
        rho: positive diagonal shift.
        b: right-hand side, shape (n,) or (n, k).

    Returns:
        Solution with the same shape as ``b``.
    """
    if rho <= 0.0:
        raise ValueError(f"rho must be positive, got {rho}")
    b = np.asarray(b, dtype=np.float64)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != eig.n:
        raise ValueError(
            f"right-hand side has shape {b.shape}, expected ({eig.n}, k)"
        )
    u = eig.eigenvectors
    x = u @ ((u.T @ b) / (eig.eigenvalues + rho)[:, None])
    return x[:, 0] if squeeze else x
