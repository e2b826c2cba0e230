"""Dense reference implementation of the direct scheme.

Everything here is assembled entry by entry from the difference formulas with
plain loops and solved with a dense LU factorization. It shares only the
coefficient generators with the fast code path and exists to cross-check it on
small grids.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .kernels import l1_coefficients, wsgd_weights
from .solver import ProblemSpec

__all__ = ["dense_wsgd_matrix", "dense_reference_solve"]


def dense_wsgd_matrix(alpha: float, p: float, N: int) -> np.ndarray:
    """``(N+1) x (N+1)`` matrix of ``p * left + (1-p) * right`` WSGD sums on all nodes.

    Row ``i`` (interior) holds the coefficients of
    ``sum_{k=0}^{i+1} w_k u_{i-k+1}`` (left) and
    ``sum_{k=0}^{N-i+1} w_k u_{i+k-1}`` (right); boundary rows are zero.
    """
    w = wsgd_weights(alpha, N + 1).w
    A = np.zeros((N + 1, N + 1))
    for i in range(1, N):
        for k in range(i + 2):
            A[i, i - k + 1] += p * w[k]
        for k in range(N - i + 2):
            A[i, i + k - 1] += (1 - p) * w[k]
    return A


def dense_reference_solve(spec: ProblemSpec, N: int, M: int) -> np.ndarray:
    """All levels ``u[j, i]`` of the direct scheme, by dense assembly and LU."""
    h = (spec.x_right - spec.x_left) / N
    tau = spec.horizon / M
    x = spec.x_left + h * np.arange(N + 1)
    t = tau * np.arange(M + 1)
    c = l1_coefficients(spec.gamma, spec.lam, tau, M).c
    D = dense_wsgd_matrix(spec.alpha, spec.p, N) / h**spec.alpha

    U = np.zeros((M + 1, N + 1))
    U[0] = spec.initial(x)
    U[0, 0], U[0, N] = spec.left(t[0]), spec.right(t[0])
    for j in range(M):
        n = j + 1
        xi = np.array([float(np.squeeze(spec.xi(np.array([xv]), t[n]))) for xv in x])
        A = np.zeros((N + 1, N + 1))
        rhs = np.zeros(N + 1)
        for i in range(1, N):
            A[i, :] = -xi[i] * D[i, :]
            A[i, i] += c[0]
            hist = c[j] * U[0, i]
            for s in range(1, j + 1):
                hist += (c[s - 1] - c[s]) * U[n - s, i]
            rhs[i] = hist + float(np.squeeze(spec.source(np.array([x[i]]), t[n])))
        A[0, 0] = A[N, N] = 1.0
        rhs[0], rhs[N] = spec.left(t[n]), spec.right(t[n])
        U[n] = scipy.linalg.lu_solve(scipy.linalg.lu_factor(A), rhs)
    return U
