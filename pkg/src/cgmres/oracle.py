"""Dense brute-force references: explicit Jacobians and direct solves."""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

from .horizon import ControlVector, assemble_F

MAX_DENSE_SIZE = 2000


class OracleSizeError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def build_dense_jacobian(model, U: ControlVector, x_j, t_j, h=1e-8, central=False, base=None, chunk=128):
    """Materialize the Jacobian of F column by column.

    Column ``k`` is ``(F(U + h e_k) - F(U)) / h``, the same quotient the
    continuation operator applies; central mode uses
    ``(F(U + h e_k) - F(U - h e_k)) / 2h``.  Perturbed vectors are pushed
    through the horizon sweeps ``chunk`` at a time as one batch.
    """
    m = U.dims.m
    if m > MAX_DENSE_SIZE:
        raise OracleSizeError(f"dense oracle refuses m={m} > {MAX_DENSE_SIZE}")
    F = lambda data: assemble_F(model, U.with_data(data), x_j, t_j)
    if not central and base is None:
        base = F(U.data)
    A = np.empty((m, m))
    for start in range(0, m, chunk):
        cols = np.arange(start, min(m, start + chunk))
        E = np.zeros((len(cols), m))
        E[np.arange(len(cols)), cols] = h
        if central:
            A[:, cols] = ((F(U.data + E) - F(U.data - E)) / (2 * h)).T
        else:
            A[:, cols] = ((F(U.data + E) - base) / h).T
    return A


def dense_solve(A, b):
    """Gaussian elimination with partial pivoting (LAPACK getrf/getrs)."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or b.shape[0] != A.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    with warnings.catch_warnings():
        # exact zero pivots are reported below as SingularMatrixError
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * scale:
        raise SingularMatrixError("matrix is singular to working precision")
    return sla.lu_solve((lu, piv), b)


def symmetry_defect(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    return float(np.max(np.abs(A - A.T), initial=0.0))


def write_dense(A, path):
    np.savetxt(path, np.asarray(A), fmt="%.17g")
