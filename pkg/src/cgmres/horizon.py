"""Horizon trajectories and the optimality residual F[U, x, t].

The unknown vector is stacked as ``[u_0..u_{N-1}, mu_0..mu_{N-1}, nu, p]``.
States come from an explicit Euler forward sweep, costates from the matching
backward sweep, and F collects the derivatives of the discrete Lagrangian
with respect to the unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContractError, OcpModel, ProblemDims


class NumericOverflowError(ArithmeticError):
    """A recursion produced a non-finite value at gridpoint ``index``."""

    def __init__(self, what, index):
        super().__init__(f"non-finite {what} at gridpoint {index}")
        self.index = index


@dataclass
class ControlVector:
    """Flat unknown vector plus the dimensions that define its layout.

    ``data`` may carry leading batch axes; the block views keep them.
    """

    data: np.ndarray
    dims: ProblemDims

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim < 1 or self.data.shape[-1] != self.dims.m:
            raise ContractError(f"U: expected trailing length {self.dims.m}, got shape {self.data.shape}")

    @classmethod
    def pack(cls, dims, u, mu, nu, p):
        u = np.asarray(u, float).reshape(dims.N, dims.m_u)
        mu = np.asarray(mu, float).reshape(dims.N, dims.m_c)
        data = np.concatenate([u.ravel(), mu.ravel(), np.ravel(nu), np.ravel(p)])
        return cls(data, dims)

    def with_data(self, data):
        return ControlVector(data, self.dims)

    @property
    def _cuts(self):
        d = self.dims
        a = d.N * d.m_u
        b = a + d.N * d.m_c
        c = b + d.m_psi
        return a, b, c

    @property
    def u(self):
        """View of shape ``(..., N, m_u)``."""
        a, _, _ = self._cuts
        return self.data[..., :a].reshape(self.data.shape[:-1] + (self.dims.N, self.dims.m_u))

    @property
    def mu(self):
        a, b, _ = self._cuts
        return self.data[..., a:b].reshape(self.data.shape[:-1] + (self.dims.N, self.dims.m_c))

    @property
    def nu(self):
        _, b, c = self._cuts
        return self.data[..., b:c]

    @property
    def p(self):
        _, _, c = self._cuts
        return self.data[..., c:]

    def unpack(self):
        return self.u, self.mu, self.nu, self.p

    def gridpoint_indices(self):
        """Flat indices of ``(u_i, mu_i)`` for each gridpoint, shape ``(N, m_u + m_c)``."""
        d = self.dims
        i = np.arange(d.N)[:, None]
        ui = i * d.m_u + np.arange(d.m_u)
        mi = d.N * d.m_u + i * d.m_c + np.arange(d.m_c)
        return np.hstack([ui, mi])


@dataclass
class HorizonTrajectory:
    """Predicted states and costates on the horizon grid.

    ``states[i]`` and ``costates[i]`` for ``i = 0..N``; ``tau`` holds the grid
    coordinates.  ``U`` is a copy of the unknowns the trajectory was built
    from, so consumers can detect stale trajectories.
    """

    states: np.ndarray
    costates: np.ndarray | None
    tau: np.ndarray
    dtau: float
    t: float
    U: np.ndarray


def _check_finite(arr, what):
    ok = np.isfinite(arr).all(axis=-1)
    if not ok.all():
        raise NumericOverflowError(what, int(np.nonzero(~ok)[-1][0]))


def _grid(model: OcpModel, N: int):
    dtau = model.horizon_step(N)
    return dtau, np.arange(N + 1) * dtau


def _as_state(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_x,):
        raise ContractError(f"state: expected shape ({model.n_x},), got {x.shape}")
    return x


def forward_states(model: OcpModel, U: ControlVector, x_current, t) -> HorizonTrajectory:
    x0 = _as_state(model, x_current)
    N = U.dims.N
    dtau, tau = _grid(model, N)
    u, p = U.u, U.p
    batch = U.data.shape[:-1]
    xs = np.empty(batch + (N + 1, model.n_x))
    xs[..., 0, :] = x0
    if batch:
        for i in range(N):
            xs[..., i + 1, :] = xs[..., i, :] + model.f(t, tau[i], xs[..., i, :], u[..., i, :], p) * dtau
    else:
        f = model.f
        for i in range(N):
            xs[i + 1] = xs[i] + f(t, tau[i], xs[i], u[i], p) * dtau
    _check_finite(xs, "state")
    return HorizonTrajectory(xs, None, tau, dtau, t, U.data.copy())


def _terminal_costate(model, xN, nu, p):
    lam = np.asarray(model.phi_x(xN, p), dtype=float)
    if model.m_psi:
        lam = lam + np.einsum("...ij,...i->...j", model.psi_x(xN, p), nu)
    return np.broadcast_to(lam, xN.shape)


def backward_costates(model: OcpModel, U: ControlVector, traj: HorizonTrajectory, t=None) -> HorizonTrajectory:
    t = traj.t if t is None else t
    N = U.dims.N
    u, mu, nu, p = U.unpack()
    xs, tau, dtau = traj.states, traj.tau, traj.dtau
    lam = np.empty_like(xs)
    lam[..., N, :] = _terminal_costate(model, xs[..., N, :], nu, p)
    if U.data.ndim > 1:
        for i in range(N - 1, -1, -1):
            lam[..., i, :] = lam[..., i + 1, :] + model.H_x(
                t, tau[i], xs[..., i, :], lam[..., i + 1, :], u[..., i, :], mu[..., i, :], p) * dtau
    else:
        H_x = model.H_x
        for i in range(N - 1, -1, -1):
            lam[i] = lam[i + 1] + H_x(t, tau[i], xs[i], lam[i + 1], u[i], mu[i], p) * dtau
    _check_finite(lam, "costate")
    traj.costates = lam
    return traj


def compute_trajectory(model: OcpModel, U: ControlVector, x_current, t) -> HorizonTrajectory:
    return backward_costates(model, U, forward_states(model, U, x_current, t), t)


def residual_from_trajectory(model: OcpModel, U: ControlVector, traj: HorizonTrajectory) -> np.ndarray:
    """Stack the optimality rows using an already computed trajectory."""
    d = U.dims
    N, t, dtau = d.N, traj.t, traj.dtau
    u, mu, nu, p = U.unpack()
    batch = U.data.shape[:-1]
    tau = traj.tau[:N]
    xs = traj.states[..., :N, :]
    lam = traj.costates[..., 1:, :]
    pb = np.broadcast_to(p[..., None, :], batch + (N, d.m_p))
    flat = lambda a: a.reshape(batch + (-1,))
    rows = [flat(model.H_u(t, tau, xs, lam, u, mu, pb) * dtau)]
    if d.m_c:
        rows.append(flat(np.asarray(model.C(t, tau, xs, u, pb)) * dtau))
    xN = traj.states[..., N, :]
    if d.m_psi:
        rows.append(np.broadcast_to(np.asarray(model.psi(xN, p), dtype=float), batch + (d.m_psi,)))
    if d.m_p:
        prow = np.asarray(model.phi_p(xN, p), dtype=float)
        if d.m_psi:
            prow = prow + np.einsum("...ij,...i->...j", model.psi_p(xN, p), nu)
        prow = prow + np.sum(model.H_p(t, tau, xs, lam, u, mu, pb), axis=-2) * dtau
        rows.append(np.broadcast_to(prow, batch + (d.m_p,)))
    F = np.concatenate(rows, axis=-1)
    if not np.all(np.isfinite(F)):
        bad = np.nonzero(~np.isfinite(F))[-1][0]
        raise NumericOverflowError("residual", int(bad))
    return F


def assemble_F(model: OcpModel, U: ControlVector, x_current, t) -> np.ndarray:
    """F[U, x, t]; a batched ``U`` gives one residual row per batch entry."""
    return residual_from_trajectory(model, U, compute_trajectory(model, U, x_current, t))
