"""Sparse block-arrow preconditioner for the continuation Jacobian.

Away from the last ``l = m_psi + m_p`` rows and columns the preconditioner
keeps only the Hessian of the Lagrangian in the unknowns, which is block
diagonal with one symmetric block per gridpoint::

    W_i = dtau * [[H_uu, C_u^T],
                  [C_u,  0    ]]

The last ``l`` columns are taken exactly from the forward-difference
Jacobian and mirrored into the last ``l`` rows.  After grouping ``(u_i,
mu_i)`` per gridpoint the matrix is block diagonal with a thin border, so a
bordered Schur complement factors it in O(N).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .horizon import ControlVector, HorizonTrajectory
from .model import ContractError, OcpModel, ProblemDims

PIVOT_TOL = 1e-12
SCHUR_RTOL = 1e-13
CLOSED_FORM_TOL = 1e-14


class FactorizationError(ArithmeticError):
    pass


class SingularBlockError(ArithmeticError):
    pass


# batched dense LU ---------------------------------------------------------

def lu_batched(A):
    """LU with partial pivoting of a stack of square matrices.

    Returns ``(LU, piv, min_pivot)`` where ``piv[:, k]`` is the row swapped
    with row ``k`` at step ``k`` and ``min_pivot`` the smallest pivot
    magnitude per matrix.
    """
    LU = np.array(A, dtype=float, copy=True)
    nb, s, _ = LU.shape
    piv = np.zeros((nb, s), dtype=np.intp)
    min_pivot = np.full(nb, np.inf)
    rows = np.arange(nb)
    for k in range(s):
        p = k + np.argmax(np.abs(LU[:, k:, k]), axis=1)
        piv[:, k] = p
        top = LU[rows, k, :].copy()
        LU[rows, k, :] = LU[rows, p, :]
        LU[rows, p, :] = top
        pivot = LU[:, k, k]
        min_pivot = np.minimum(min_pivot, np.abs(pivot))
        safe = np.where(pivot == 0.0, 1.0, pivot)
        LU[:, k + 1:, k] /= safe[:, None]
        LU[:, k + 1:, k + 1:] -= LU[:, k + 1:, k, None] * LU[:, None, k, k + 1:]
    return LU, piv, min_pivot


def lu_solve_batched(LU, piv, b):
    """Solve with factors from ``lu_batched``; ``b`` is ``(nb, s)`` or ``(nb, s, r)``."""
    x = np.array(b, dtype=float, copy=True)
    nb, s = piv.shape
    rows = np.arange(nb)
    for k in range(s):
        p = piv[:, k]
        top = x[rows, k].copy()
        x[rows, k] = x[rows, p]
        x[rows, p] = top
    vec = x.ndim == 2
    if vec:
        x = x[..., None]
    for k in range(s):
        x[:, k + 1:] -= LU[:, k + 1:, k, None] * x[:, k, None]
    for k in range(s - 1, -1, -1):
        x[:, k] /= LU[:, k, k, None]
        x[:, :k] -= LU[:, :k, k, None] * x[:, k, None]
    return x[..., 0] if vec else x


# assembled preconditioner ---------------------------------------------------

@dataclass
class SparsePreconditioner:
    """Per-gridpoint blocks plus the exact border of the Jacobian.

    ``blocks[i]`` acts on the unknowns ``(u_i, mu_i)``; ``border`` holds the
    last ``l`` columns in the original unknown ordering with its trailing
    ``l x l`` corner already symmetrized.
    """

    dims: ProblemDims
    blocks: np.ndarray
    border: np.ndarray

    @property
    def m(self):
        return self.dims.m

    @property
    def corner(self):
        return self.border[self.dims.m - self.dims.border:]

    def gridpoint_indices(self):
        return ControlVector(np.zeros(self.dims.m), self.dims).gridpoint_indices()

    def permutation(self):
        """Unknown ordering ``[u_0, mu_0, u_1, mu_1, ..., nu, p]`` as flat indices."""
        d = self.dims
        return np.concatenate([self.gridpoint_indices().ravel(), np.arange(d.m - d.border, d.m)])

    def to_dense(self):
        d = self.dims
        n0 = d.m - d.border
        M = np.zeros((d.m, d.m))
        idx = self.gridpoint_indices()
        M[idx[:, :, None], idx[:, None, :]] = self.blocks
        M[:, n0:] = self.border
        M[n0:, :n0] = self.border[:n0].T
        return M

    def matvec(self, v):
        d = self.dims
        n0 = d.m - d.border
        idx = self.gridpoint_indices()
        out = np.zeros(d.m)
        out[idx] = np.einsum("nij,nj->ni", self.blocks, v[idx])
        out += self.border @ v[n0:]
        out[n0:] += self.border[:n0].T @ v[:n0]
        return out

    def stored_entries(self):
        """Structural entry count: diagonal blocks, both border strips and the corner."""
        d = self.dims
        n0 = d.m - d.border
        return d.N * d.block**2 + 2 * n0 * d.border + d.border**2

    def write_pattern(self, path, permuted=False):
        """Write ``row col value`` lines (1-based) for every nonzero entry."""
        M = self.to_dense()
        if permuted:
            perm = self.permutation()
            M = M[np.ix_(perm, perm)]
        rows, cols = np.nonzero(M)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{M.shape[0]} {M.shape[1]} {len(rows)}\n")
            for r, c in zip(rows, cols):
                fh.write(f"{r + 1} {c + 1} {float(M[r, c])!r}\n")


def gridpoint_blocks(model: OcpModel, U: ControlVector, traj: HorizonTrajectory):
    """Symmetric per-gridpoint Hessian blocks ``W_i``, shape ``(N, s, s)``."""
    d = U.dims
    N, t, dtau = d.N, traj.t, traj.dtau
    u, mu, _, p = U.unpack()
    pb = np.broadcast_to(p, (N, d.m_p))
    tau = traj.tau[:N]
    xs = traj.states[:N]
    lam = traj.costates[1:]
    Huu = np.asarray(model.H_uu(t, tau, xs, lam, u, mu, pb)).reshape(N, d.m_u, d.m_u)
    Huu = 0.5 * (Huu + np.swapaxes(Huu, 1, 2))
    W = np.zeros((N, d.block, d.block))
    W[:, : d.m_u, : d.m_u] = Huu
    if d.m_c:
        Cu = np.asarray(model.C_u(t, tau, xs, u, pb)).reshape(N, d.m_c, d.m_u)
        W[:, d.m_u:, : d.m_u] = Cu
        W[:, : d.m_u, d.m_u:] = np.swapaxes(Cu, 1, 2)
    return W * dtau


def border_columns(op, dims: ProblemDims):
    """Last ``l`` columns of the forward-difference Jacobian, corner symmetrized."""
    n0 = dims.m - dims.border
    B = np.zeros((dims.m, dims.border))
    for j in range(dims.border):
        e = np.zeros(dims.m)
        e[n0 + j] = 1.0
        B[:, j] = op.apply(e)
    Z = B[n0:]
    B[n0:] = 0.5 * (Z + Z.T)
    return B


def assemble_preconditioner(model, U: ControlVector, x_j, t_j, traj: HorizonTrajectory, op=None, h=1e-8):
    """Build the sparse preconditioner at the trajectory of ``U``.

    ``op`` is the forward-difference operator for the current step; one is
    built from ``h`` if not given.
    """
    if traj.costates is None or not np.array_equal(traj.U, U.data):
        raise ContractError("trajectory was not computed for this U")
    if op is None:
        from .continuation import ForwardDifferenceOperator
        op = ForwardDifferenceOperator(model, U, x_j, t_j, h)
    return SparsePreconditioner(U.dims, gridpoint_blocks(model, U, traj), border_columns(op, U.dims))


# factorization ---------------------------------------------------------------

@dataclass
class FactoredPreconditioner:
    dims: ProblemDims
    indices: np.ndarray
    lu: np.ndarray
    piv: np.ndarray
    border_blocks: np.ndarray
    solved_border: np.ndarray
    schur_lu: np.ndarray
    schur_piv: np.ndarray
    regularized: np.ndarray

    @property
    def m(self):
        return self.dims.m

    @property
    def any_regularized(self):
        return bool(np.any(self.regularized))

    def solve(self, r):
        return apply_inverse(self, r)


def factorize(M: SparsePreconditioner) -> FactoredPreconditioner:
    """Block-arrow LU: per-gridpoint LU, then the ``l x l`` Schur complement.

    Blocks whose smallest pivot falls below ``PIVOT_TOL`` get a diagonal ridge
    ``1e-8 (1 + max|W_i|)`` and are flagged in ``regularized``.
    """
    d = M.dims
    n0 = d.m - d.border
    idx = M.gridpoint_indices()
    W = M.blocks.copy()
    lu, piv, min_pivot = lu_batched(W)
    bad = min_pivot < PIVOT_TOL
    if np.any(bad):
        ridge = 1e-8 * (1.0 + np.max(np.abs(W[bad]), axis=(1, 2)))
        W[bad] += ridge[:, None, None] * np.eye(d.block)
        lu[bad], piv[bad], min_pivot[bad] = lu_batched(W[bad])
        if np.any(min_pivot[bad] < PIVOT_TOL):
            raise FactorizationError("gridpoint block singular after regularization")

    Bb = M.border[idx]                                   # (N, s, l)
    X = lu_solve_batched(lu, piv, Bb)                    # W_i^{-1} B_i
    S = M.corner - np.einsum("nsi,nsj->ij", Bb, X)
    if d.border:
        slu, spiv, smin = lu_batched(S[None])
        if not np.isfinite(smin[0]) or smin[0] <= SCHUR_RTOL * max(1.0, np.max(np.abs(S))):
            raise FactorizationError("singular Schur complement")
    else:
        slu, spiv = np.zeros((1, 0, 0)), np.zeros((1, 0), dtype=np.intp)
    return FactoredPreconditioner(d, idx, lu, piv, Bb, X, slu, spiv, bad)


def apply_inverse(F: FactoredPreconditioner, r):
    """``M^{-1} r`` by block forward/back substitution."""
    d = F.dims
    n0 = d.m - d.border
    r = np.asarray(r, dtype=float)
    y = lu_solve_batched(F.lu, F.piv, r[F.indices])
    out = np.empty(d.m)
    if d.border:
        rhs = r[n0:] - np.einsum("nsi,ns->i", F.border_blocks, y)
        zb = lu_solve_batched(F.schur_lu, F.schur_piv, rhs[None])[0]
        y = y - F.solved_border @ zb
        out[n0:] = zb
    out[F.indices] = y
    return out


def closed_form_block_inverse(m11, m13, m22, m23, m31=None, m32=None):
    """Inverse of ``[[m11, 0, m13], [0, m22, m23], [m31, m32, 0]]`` in closed form.

    Uses ``D = 1 / (m11 m23 m32 + m13 m22 m31)``; raises
    ``SingularBlockError`` when that denominator vanishes.
    """
    m31 = m13 if m31 is None else m31
    m32 = m23 if m32 is None else m32
    den = m11 * m23 * m32 + m13 * m22 * m31
    if abs(den) < CLOSED_FORM_TOL:
        raise SingularBlockError("constraint gradient vanishes in this block")
    adj = np.array([
        [m23 * m32, -m13 * m32, m13 * m22],
        [-m23 * m31, m13 * m31, m11 * m23],
        [m22 * m31, m11 * m32, -m11 * m22],
    ])
    return adj / den
