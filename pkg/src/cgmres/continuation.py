"""Continuation time stepping: one preconditioned GMRES solve per sample."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .gmres import GmresReport, SolverFailure, gmres_solve
from .horizon import (ControlVector, assemble_F, compute_trajectory,
                      residual_from_trajectory)
from .oracle import build_dense_jacobian, dense_solve
from .precond import FactorizationError, assemble_preconditioner, factorize

log = logging.getLogger(__name__)

PRECOND_MODES = ("none", "sparse")
NEWTON_FD_STEP = 1e-6
FRACTION_TO_BOUNDARY = 0.995


class InitializationError(RuntimeError):
    pass


class StepError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class ContinuationConfig:
    N: int = 100
    h: float = 1e-8
    dt: float = 1 / 500
    tol: float = 1e-5
    k_max: int = 100
    precond: str = "sparse"
    strict: bool = False

    def __post_init__(self):
        if self.h <= 0 or self.dt <= 0 or self.tol <= 0:
            raise ValueError("h, dt and tol must be positive")
        if self.k_max < 1 or self.N < 1:
            raise ValueError("k_max and N must be at least 1")
        if self.precond not in PRECOND_MODES:
            raise ValueError(f"precond must be one of {PRECOND_MODES}")


@dataclass
class StepResult:
    U: ControlVector
    u_applied: np.ndarray
    norm_F: float
    report: GmresReport
    precond_seconds: float
    solve_seconds: float
    regularized: bool = False
    fallback: bool = False


class ForwardDifferenceOperator:
    """``a(V) = (F[U + hV] - F[U]) / h`` with ``F[U]`` computed once."""

    def __init__(self, model, U: ControlVector, x_j, t_j, h, base=None):
        self.model = model
        self.U = U
        self.x = np.asarray(x_j, dtype=float)
        self.t = t_j
        self.h = h
        self.m = U.dims.m
        self.base = assemble_F(model, U, self.x, t_j) if base is None else base

    def apply(self, v):
        Uh = self.U.with_data(self.U.data + self.h * np.asarray(v, dtype=float))
        return (assemble_F(self.model, Uh, self.x, self.t) - self.base) / self.h


def residual_b(model, U_prev: ControlVector, x_j, t_j):
    return -assemble_F(model, U_prev, x_j, t_j)


def fd_operator(model, U_prev, x_j, t_j, h):
    return ForwardDifferenceOperator(model, U_prev, x_j, t_j, h)


def continuation_step(model, U_prev: ControlVector, x_j, t_j, cfg: ContinuationConfig, precond=None):
    """Advance the unknowns to sample ``t_j``.

    Solves ``a(V) = b / h`` from ``V = 0`` and sets ``U = U_prev + h V``.  The
    trajectory computed for ``b`` also feeds the preconditioner.  If the
    preconditioner cannot be factored the step runs unpreconditioned and
    ``fallback`` is set.
    """
    precond = cfg.precond if precond is None else precond
    traj = compute_trajectory(model, U_prev, x_j, t_j)
    F0 = residual_from_trajectory(model, U_prev, traj)
    op = ForwardDifferenceOperator(model, U_prev, x_j, t_j, cfg.h, base=F0)

    M = None
    regularized = fallback = False
    t0 = time.perf_counter()
    if precond == "sparse":
        try:
            M = factorize(assemble_preconditioner(model, U_prev, x_j, t_j, traj, op=op))
            regularized = M.any_regularized
        except FactorizationError as exc:
            log.warning("t=%.6g: preconditioner unavailable (%s); solving unpreconditioned", t_j, exc)
            M, fallback = None, True
    t1 = time.perf_counter()
    try:
        report = gmres_solve(op, -F0 / cfg.h, None, cfg.k_max, cfg.tol, M, strict=cfg.strict)
    except SolverFailure as exc:
        raise StepError(f"GMRES failed at t={t_j}: {exc}") from exc
    t2 = time.perf_counter()

    U_new = U_prev.with_data(U_prev.data + cfg.h * report.x)
    norm_F = float(np.linalg.norm(assemble_F(model, U_new, x_j, t_j)))
    if not np.isfinite(norm_F):
        raise StepError(f"non-finite residual after update at t={t_j}", report)
    return StepResult(U_new, U_new.u[0].copy(), norm_F, report, t1 - t0, t2 - t1, regularized, fallback)


def propagate_state(model, x_j, u_j, t_j, dt, p=None):
    """One explicit Euler step of the plant dynamics."""
    x_j = np.asarray(x_j, dtype=float)
    x_next = x_j + np.asarray(model.plant(t_j, x_j, np.asarray(u_j, dtype=float), p)) * dt
    if not np.all(np.isfinite(x_next)):
        raise ArithmeticError(f"non-finite state after propagation at t={t_j}")
    return x_next


def initialize_U0(model, x0, t0, cfg: ContinuationConfig, *, tol=1e-6, max_iter=50, fail_above=1e-3):
    """Model heuristic guess refined by damped Newton on the dense Jacobian.

    Armijo backtracking on ``||F||`` halves the step down to ``2**-20``.
    Entries flagged by ``model.positive_unknowns`` never move more than
    99.5% of the way to zero, which keeps Newton on the intended branch.
    Raises ``InitializationError`` unless ``||F|| <= fail_above`` at exit.
    """
    dims = model.dims(cfg.N)
    positive = model.positive_unknowns(cfg.N)
    U = ControlVector(model.initial_guess(t0, np.asarray(x0, float), cfg.N), dims)
    F = assemble_F(model, U, x0, t0)
    nF = np.linalg.norm(F)
    for it in range(max_iter):
        if nF <= tol:
            break
        J = build_dense_jacobian(model, U, x0, t0, h=NEWTON_FD_STEP, central=True)
        try:
            dU = dense_solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise InitializationError(f"singular Jacobian during initialization: {exc}") from exc
        alpha = 1.0
        shrinking = positive & (dU < 0)
        if np.any(shrinking):
            alpha = min(1.0, float(np.min(-FRACTION_TO_BOUNDARY * U.data[shrinking] / dU[shrinking])))
        while alpha >= 2.0**-20:
            trial = U.with_data(U.data + alpha * dU)
            try:
                Ft = assemble_F(model, trial, x0, t0)
                nFt = np.linalg.norm(Ft)
            except ArithmeticError:
                nFt = np.inf
            if nFt <= (1 - 1e-4 * alpha) * nF:
                break
            alpha *= 0.5
        else:
            log.debug("Newton line search stalled at iteration %d, |F|=%.3e", it, nF)
            break
        U, F, nF = trial, Ft, nFt
        log.debug("Newton %d: alpha=%g |F|=%.3e", it, alpha, nF)
    if not nF <= fail_above:
        raise InitializationError(f"Newton initialization stalled at |F|={nF:.3e}")
    return U
