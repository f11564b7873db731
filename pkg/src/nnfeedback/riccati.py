"""Continuous-time algebraic Riccati equation

    A^T P + P A - (1/beta) P B B^T P + Q = 0

solved through the stable invariant subspace of the Hamiltonian matrix,
followed by Newton-Kleinman refinement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import RiccatiConvergenceError, RiccatiError

__all__ = ["CareSolution", "solve_care", "care_residual", "solve_lyapunov_kron"]


@dataclass(frozen=True)
class CareSolution:
    Pi: np.ndarray
    residual_norm: float
    closed_loop_spectrum_abscissa: float


def care_residual(Pi, A, B, Q, beta) -> float:
    """Frobenius norm of the Riccati operator at ``Pi``."""
    Pi, A, B, Q = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (Pi, A, B, Q))
    R = A.T @ Pi + Pi @ A - (1.0 / beta) * Pi @ B @ B.T @ Pi + Q
    return float(np.linalg.norm(R, "fro"))


def solve_lyapunov_kron(Ac, C) -> np.ndarray:
    """Solve ``Ac^T X + X Ac + C = 0`` via the ``n^2 x n^2`` Kronecker system."""
    n = Ac.shape[0]
    eye = np.eye(n)
    # column-major vec: vec(Ac^T X) = (I kron Ac^T) vec X, vec(X Ac) = (Ac^T kron I) vec X
    K = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
    x = np.linalg.solve(K, -C.reshape(-1, order="F"))
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def _hamiltonian_solution(A, G, Q) -> np.ndarray:
    n = A.shape[0]
    H = np.block([[A, -G], [-Q, -A.T]])
    vals, vecs = scipy.linalg.eig(H)
    stable = vals.real < 0
    if stable.sum() != n:
        raise RiccatiError(
            f"Hamiltonian has {stable.sum()} stable eigenvalues, expected {n}; "
            "(A, B) may not be stabilizable"
        )
    X = vecs[:, stable]
    X1, X2 = X[:n], X[n:]
    if np.linalg.cond(X1) > 1e12:
        raise RiccatiError("stable invariant subspace is not a graph (X1 singular)")
    Pi = np.linalg.solve(X1.T, X2.T).T
    scale = max(1.0, np.abs(Pi).max())
    if np.abs(Pi.imag).max() > 1e-10 * scale:
        raise RiccatiError(f"Riccati solution has imaginary part {np.abs(Pi.imag).max():.2e}")
    Pi = Pi.real
    return 0.5 * (Pi + Pi.T)


def solve_care(A, B, Q, beta: float, refine_steps: int = 1, rtol: float = 1e-8) -> CareSolution:
    """Stabilizing solution of the Riccati equation with control weight ``beta``.

    Raises
    ------
    RiccatiError
        No stabilizing solution exists (or it could not be extracted).
    RiccatiConvergenceError
        The residual stays above ``rtol * max(1, |Q|_F)``.
    """
    A, B, Q = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q))
    if beta <= 0:
        raise ValueError("beta must be positive")
    G = (1.0 / beta) * B @ B.T
    Pi = _hamiltonian_solution(A, G, Q)
    for _ in range(refine_steps):
        Ac = A - G @ Pi
        candidate = solve_lyapunov_kron(Ac, Q + Pi @ G @ Pi)
        if care_residual(candidate, A, B, Q, beta) <= care_residual(Pi, A, B, Q, beta):
            Pi = candidate
    residual = care_residual(Pi, A, B, Q, beta)
    tol = rtol * max(1.0, np.linalg.norm(Q, "fro"))
    if residual > tol:
        raise RiccatiConvergenceError(f"Riccati residual {residual:.3e} exceeds {tol:.3e}", residual)
    abscissa = float(np.linalg.eigvals(A - G @ Pi).real.max())
    if abscissa >= 0:
        raise RiccatiError(f"closed loop is not Hurwitz (spectral abscissa {abscissa:.3e})")
    return CareSolution(Pi=Pi, residual_norm=residual, closed_loop_spectrum_abscissa=abscissa)
