"""Matrix-free left-preconditioned GMRES without restarts.

Arnoldi runs on the preconditioned operator ``v -> M^{-1} a(v)`` with a
single modified Gram-Schmidt pass.  The Hessenberg least-squares problem is
reduced incrementally by Givens rotations, which also yields the residual
estimate used for early termination.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg as sla

BREAKDOWN_RTOL = 1e-14


class SolverFailure(ArithmeticError):
    pass


class LinearOperator(Protocol):
    m: int

    def apply(self, v: np.ndarray) -> np.ndarray: ...


class Preconditioner(Protocol):
    m: int

    def solve(self, r: np.ndarray) -> np.ndarray: ...


class MatrixOperator:
    """Dense matrix wrapped as a linear operator."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        self.m = self.A.shape[0]

    def apply(self, v):
        return self.A @ v


class IdentityPreconditioner:
    def __init__(self, m):
        self.m = m

    def solve(self, r):
        return np.array(r, dtype=float, copy=True)


class DensePreconditioner:
    """``M^{-1} r`` by LU of an explicit matrix."""

    def __init__(self, M):
        M = np.asarray(M, dtype=float)
        self.m = M.shape[0]
        self._lu = sla.lu_factor(M)

    def solve(self, r):
        return sla.lu_solve(self._lu, r)


@dataclass
class GmresReport:
    x: np.ndarray
    iterations: int
    residual: float
    beta: float
    converged: bool
    breakdown: bool = False
    basis: np.ndarray = field(default=None, repr=False)
    hessenberg: np.ndarray = field(default=None, repr=False)

    @property
    def relative_residual(self):
        return self.residual / self.beta if self.beta > 0 else 0.0


class _GivensLeastSquares:
    """Incremental QR of an upper Hessenberg matrix by Givens rotations.

    Columns are appended one at a time; ``residual`` is the least-squares
    residual ``min_y ||H y - beta e1||`` for the columns seen so far.
    """

    def __init__(self, beta, k_max):
        self.R = np.zeros((k_max + 1, k_max))
        self.g = np.zeros(k_max + 1)
        self.g[0] = beta
        self.cs = np.zeros(k_max)
        self.sn = np.zeros(k_max)
        self.k = 0

    def add_column(self, h):
        """``h`` holds the ``k + 2`` entries of the new Hessenberg column."""
        k = self.k
        col = np.array(h[: k + 2], dtype=float)
        for i in range(k):
            a, b = col[i], col[i + 1]
            col[i] = self.cs[i] * a + self.sn[i] * b
            col[i + 1] = -self.sn[i] * a + self.cs[i] * b
        a, b = col[k], col[k + 1]
        r = np.hypot(a, b)
        if r == 0.0:
            c, s = 1.0, 0.0
        else:
            c, s = a / r, b / r
        self.cs[k], self.sn[k] = c, s
        col[k] = r
        col[k + 1] = 0.0
        self.R[: k + 2, k] = col
        g = self.g[k]
        self.g[k] = c * g
        self.g[k + 1] = -s * g
        self.k = k + 1
        return abs(self.g[k + 1])

    @property
    def residual(self):
        return abs(self.g[self.k])

    def solve(self):
        k = self.k
        if k == 0:
            return np.zeros(0)
        return sla.solve_triangular(self.R[:k, :k], self.g[:k], lower=False)


def residual_estimate(H, beta, k=None):
    """Least-squares residual of ``H y = beta e1`` for a ``(k+1, k)`` Hessenberg.

    Returns ``(residual, y)``.
    """
    H = np.asarray(H, dtype=float)
    k = H.shape[1] if k is None else k
    ls = _GivensLeastSquares(beta, k)
    for j in range(k):
        ls.add_column(H[: j + 2, j])
    return ls.residual, ls.solve()


def gmres_solve(op, b, x0=None, k_max=100, tol=1e-5, M=None, *, strict=False, reorthogonalize=False):
    """Solve ``op(x) = b`` with left-preconditioned GMRES.

    Stops once the preconditioned residual estimate drops to ``tol * beta``
    (``beta = ||M^{-1}(b - op(x0))||``) or on happy breakdown.  With
    ``strict=True`` the tolerance test is skipped and ``k_max`` iterations
    run unless the Krylov space is exhausted.
    """
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float)
    precond = M.solve if M is not None else (lambda r: r)
    k_max = min(k_max, m)

    z = precond(b - op.apply(x0))
    beta = float(np.linalg.norm(z))
    if not np.isfinite(beta):
        raise SolverFailure("non-finite initial residual")
    if beta == 0.0:
        return GmresReport(x0.copy(), 0, 0.0, 0.0, True)

    V = np.zeros((k_max + 1, m))
    H = np.zeros((k_max + 1, k_max))
    V[0] = z / beta
    ls = _GivensLeastSquares(beta, k_max)
    breakdown = False
    res = beta
    k = 0
    while k < k_max:
        w = precond(op.apply(V[k]))
        for i in range(k + 1):
            H[i, k] = V[i] @ w
            w -= H[i, k] * V[i]
        if reorthogonalize:
            for i in range(k + 1):
                c = V[i] @ w
                H[i, k] += c
                w -= c * V[i]
        H[k + 1, k] = np.linalg.norm(w)
        if not np.all(np.isfinite(H[: k + 2, k])):
            raise SolverFailure(f"non-finite Arnoldi coefficients at iteration {k + 1}")
        res = ls.add_column(H[: k + 2, k])
        k += 1
        if H[k, k - 1] < BREAKDOWN_RTOL * beta:
            breakdown = True
            break
        V[k] = w / H[k, k - 1]
        if not strict and res <= tol * beta:
            break

    y = ls.solve()
    x = x0 + V[:k].T @ y
    if not np.all(np.isfinite(x)):
        raise SolverFailure("non-finite solution")
    return GmresReport(x, k, float(res), beta, res <= tol * beta or breakdown, breakdown,
                       basis=V[: k + 1], hessenberg=H[: k + 1, :k])
