"""Optimal control problem definitions.

A model describes one finite-horizon problem: dynamics ``f``, equality
constraints ``C``, terminal constraints ``psi``, terminal cost ``phi`` and
running cost ``L``.  Derivatives of the Hamiltonian ``H = L + lam.f + mu.C``
default to central finite differences and are overridden with closed forms
where available (``MinTimeModel`` supplies all of them).

All evaluators must broadcast over leading axes: ``x`` may be a single
state of shape ``(n_x,)`` or a stack such as ``(N, n_x)`` or ``(B, N, n_x)``
with ``tau`` of shape ``(N,)``.  Matrix-valued derivatives append their two
axes last, e.g. ``psi_x`` has shape ``(..., m_psi, n_x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FD_GRADIENT_STEP = 1e-6
_SQRT_EPS = np.sqrt(np.finfo(float).eps)


class ContractError(ValueError):
    """Raised when arguments do not match the model's declared dimensions."""


@dataclass(frozen=True)
class ProblemDims:
    n_x: int
    m_u: int
    m_c: int
    m_psi: int
    m_p: int
    N: int

    def __post_init__(self):
        for name in ("n_x", "m_u", "m_c", "m_psi", "m_p", "N"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.N < 1:
            raise ContractError("N must be at least 1")
        if self.m_u < 1:
            raise ContractError("m_u must be at least 1")

    @property
    def block(self) -> int:
        """Unknowns per gridpoint: controls plus constraint multipliers."""
        return self.m_u + self.m_c

    @property
    def border(self) -> int:
        return self.m_psi + self.m_p

    @property
    def m(self) -> int:
        return self.N * self.block + self.border


def _fd_last_axis(fun, arg, step):
    """Central differences of ``fun`` w.r.t. the last axis of ``arg``.

    Output has the derivative index appended as the last axis, so a scalar
    function yields a gradient and a vector function yields ``(..., out, in)``.
    """
    arg = np.asarray(arg, dtype=float)
    cols = []
    for k in range(arg.shape[-1]):
        e = np.zeros_like(arg)
        e[..., k] = step
        cols.append((np.asarray(fun(arg + e)) - np.asarray(fun(arg - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def _forward_fd_last_axis(fun, arg):
    """Forward differences with step sqrt(eps) scaled by argument magnitude."""
    arg = np.asarray(arg, dtype=float)
    base = np.asarray(fun(arg))
    cols = []
    for k in range(arg.shape[-1]):
        step = _SQRT_EPS * np.maximum(1.0, np.abs(arg[..., k]))
        e = np.zeros_like(arg)
        e[..., k] = step
        diff = np.asarray(fun(arg + e)) - base
        if diff.ndim > np.ndim(step):
            step = np.expand_dims(step, -1)
        cols.append(diff / step)
    return np.stack(cols, axis=-1)


class OcpModel:
    """Base class for a discretized optimal control problem.

    Subclasses set the dimension attributes and implement ``f``, ``C``,
    ``psi``, ``phi`` and ``L``.  Every derivative method has a finite
    difference fallback; override with analytic versions when known.
    """

    name = "model"
    n_x = 0
    m_u = 1
    m_c = 0
    m_psi = 0
    m_p = 0
    horizon_length = 1.0
    state_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()

    def dims(self, N: int) -> ProblemDims:
        return ProblemDims(self.n_x, self.m_u, self.m_c, self.m_psi, self.m_p, N)

    def horizon_step(self, N: int) -> float:
        return self.horizon_length / N

    def state_labels(self) -> tuple[str, ...]:
        return self.state_names or tuple(f"x{i}" for i in range(self.n_x))

    def control_labels(self) -> tuple[str, ...]:
        return self.control_names or tuple(f"u{i}" for i in range(self.m_u))

    # problem functions -------------------------------------------------

    def f(self, t, tau, x, u, p):
        raise NotImplementedError

    def C(self, t, tau, x, u, p):
        return np.zeros(np.shape(u)[:-1] + (0,))

    def psi(self, x, p):
        return np.zeros(np.shape(x)[:-1] + (0,))

    def phi(self, x, p):
        return np.zeros(np.shape(x)[:-1])

    def L(self, t, tau, x, u, p):
        return np.zeros(np.shape(u)[:-1])

    def plant(self, t, x, u, p):
        """Real-time dynamics used to propagate the controlled system."""
        return self.f(t, 0.0, x, u, p)

    def initial_state(self):
        """Plant state at t = 0."""
        return np.zeros(self.n_x)

    def initial_guess(self, t0, x0, N):
        """Starting point for the Newton initialization (flat U vector)."""
        return np.zeros(self.dims(N).m)

    def positive_unknowns(self, N):
        """Boolean mask over U of entries the initialization keeps positive."""
        return np.zeros(self.dims(N).m, dtype=bool)

    # Hamiltonian and its derivatives ---------------------------------

    def hamiltonian(self, t, tau, x, lam, u, mu, p):
        H = np.asarray(self.L(t, tau, x, u, p), dtype=float)
        H = H + np.sum(lam * self.f(t, tau, x, u, p), axis=-1)
        if self.m_c:
            H = H + np.sum(mu * self.C(t, tau, x, u, p), axis=-1)
        return H

    def H_x(self, t, tau, x, lam, u, mu, p):
        return _fd_last_axis(lambda z: self.hamiltonian(t, tau, z, lam, u, mu, p), x, FD_GRADIENT_STEP)

    def H_u(self, t, tau, x, lam, u, mu, p):
        return _fd_last_axis(lambda z: self.hamiltonian(t, tau, x, lam, z, mu, p), u, FD_GRADIENT_STEP)

    def H_p(self, t, tau, x, lam, u, mu, p):
        return _fd_last_axis(lambda z: self.hamiltonian(t, tau, x, lam, u, mu, z), p, FD_GRADIENT_STEP)

    def phi_x(self, x, p):
        return _fd_last_axis(lambda z: self.phi(z, p), x, FD_GRADIENT_STEP)

    def phi_p(self, x, p):
        return _fd_last_axis(lambda z: self.phi(x, z), p, FD_GRADIENT_STEP)

    def psi_x(self, x, p):
        """Terminal constraint Jacobian, shape ``(..., m_psi, n_x)``."""
        return _fd_last_axis(lambda z: self.psi(z, p), x, FD_GRADIENT_STEP)

    def psi_p(self, x, p):
        return _fd_last_axis(lambda z: self.psi(x, z), p, FD_GRADIENT_STEP)

    # second-order blocks used by the preconditioner ----------------------

    def H_uu(self, t, tau, x, lam, u, mu, p):
        """Shape ``(..., m_u, m_u)``."""
        return _forward_fd_last_axis(lambda z: self.H_u(t, tau, x, lam, z, mu, p), u)

    def C_u(self, t, tau, x, u, p):
        """Shape ``(..., m_c, m_u)``."""
        return _forward_fd_last_axis(lambda z: self.C(t, tau, x, z, p), u)


def _pair(a, b):
    if np.shape(a) != np.shape(b):
        a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape + (2,))
    out[..., 0] = a
    out[..., 1] = b
    return out


class MinTimeModel(OcpModel):
    """Minimum-time transfer between two points with a banded heading.

    The heading ``u`` is kept inside ``c_u(t) +/- r_u`` by the circle
    constraint ``(u - c_u)^2 + u_d^2 = r_u^2`` with slack ``u_d``.  The
    horizon is normalized to ``[0, 1]`` and scaled by the single parameter
    ``p = t_f``, so ``f`` and ``L`` carry a factor ``p``.
    """

    name = "mintime"
    n_x = 2
    m_u = 2
    m_c = 1
    m_psi = 2
    m_p = 1
    horizon_length = 1.0
    state_names = ("x", "y")
    control_names = ("u", "u_d")

    def __init__(self, A=1.0, B=1.0, x_f=1.0, y_f=1.0, c0=0.8, c1=0.3,
                 omega=20.0, r_u=0.2, w_d=0.005, t_f_guess=1.0):
        self.A = A
        self.B = B
        self.x_f = x_f
        self.y_f = y_f
        self.c0 = c0
        self.c1 = c1
        self.omega = omega
        self.r_u = r_u
        self.w_d = w_d
        self.t_f_guess = t_f_guess

    def band_center(self, t, tau, p):
        """c_u = c0 + c1 sin(omega (t + tau p))."""
        return self.c0 + self.c1 * np.sin(self.omega * (t + tau * p))

    def _dcenter_dp(self, t, tau, p):
        return self.c1 * np.cos(self.omega * (t + tau * p)) * self.omega * tau

    def _speed(self, x):
        return self.A * x[..., 0] + self.B

    def f(self, t, tau, x, u, p):
        if x.ndim == 1 and u.ndim == 1 and p.ndim == 1:
            # single gridpoint: scalar math is far cheaper inside the sweeps
            s = p[0] * (self.A * float(x[0]) + self.B)
            a = float(u[0])
            return np.array((s * math.cos(a), s * math.sin(a)))
        s = p[..., 0] * self._speed(x)
        return _pair(s * np.cos(u[..., 0]), s * np.sin(u[..., 0]))

    def plant(self, t, x, u, p=None):
        s = self._speed(x)
        return _pair(s * np.cos(u[..., 0]), s * np.sin(u[..., 0]))

    def C(self, t, tau, x, u, p):
        du = u[..., 0] - self.band_center(t, tau, p[..., 0])
        return (du**2 + u[..., 1] ** 2 - self.r_u**2)[..., None]

    def psi(self, x, p):
        return x - np.array([self.x_f, self.y_f])

    def phi(self, x, p):
        return p[..., 0]

    def L(self, t, tau, x, u, p):
        return -self.w_d * p[..., 0] * u[..., 1]

    def H_x(self, t, tau, x, lam, u, mu, p):
        if x.ndim == 1 and lam.ndim == 1 and u.ndim == 1 and p.ndim == 1:
            a = float(u[0])
            return np.array((float(p[0]) * self.A * (math.cos(a) * float(lam[0]) + math.sin(a) * float(lam[1])), 0.0))
        c, s = np.cos(u[..., 0]), np.sin(u[..., 0])
        hx = p[..., 0] * self.A * (c * lam[..., 0] + s * lam[..., 1]) + 0.0 * x[..., 0]
        return _pair(hx, np.zeros_like(hx))

    def H_u(self, t, tau, x, lam, u, mu, p):
        c, s = np.cos(u[..., 0]), np.sin(u[..., 0])
        pp = p[..., 0]
        du = u[..., 0] - self.band_center(t, tau, pp)
        hu = pp * self._speed(x) * (-s * lam[..., 0] + c * lam[..., 1]) + 2 * du * mu[..., 0]
        hud = 2 * mu[..., 0] * u[..., 1] - self.w_d * pp
        return _pair(hu, hud)

    def H_p(self, t, tau, x, lam, u, mu, p):
        c, s = np.cos(u[..., 0]), np.sin(u[..., 0])
        pp = p[..., 0]
        du = u[..., 0] - self.band_center(t, tau, pp)
        hp = (self._speed(x) * (c * lam[..., 0] + s * lam[..., 1])
              - 2 * du * mu[..., 0] * self._dcenter_dp(t, tau, pp)
              - self.w_d * u[..., 1])
        return hp[..., None]

    def phi_x(self, x, p):
        return np.zeros(2)

    def phi_p(self, x, p):
        return np.ones(1)

    def psi_x(self, x, p):
        return np.eye(2)

    def psi_p(self, x, p):
        return np.zeros((2, 1))

    def H_uu(self, t, tau, x, lam, u, mu, p):
        c, s = np.cos(u[..., 0]), np.sin(u[..., 0])
        m2 = 2 * mu[..., 0]
        h11 = m2 - p[..., 0] * self._speed(x) * (c * lam[..., 0] + s * lam[..., 1])
        zero = np.zeros_like(h11)
        return np.stack([np.stack([h11, zero], -1), np.stack([zero, m2 + zero], -1)], -2)

    def C_u(self, t, tau, x, u, p):
        du = u[..., 0] - self.band_center(t, tau, p[..., 0])
        return np.stack([2 * du, 2 * u[..., 1]], axis=-1)[..., None, :]

    def initial_guess(self, t0, x0, N):
        """Controls on the band circle with multipliers cancelling the slack rows."""
        p = self.t_f_guess
        tau = np.arange(N) / N
        u = np.empty((N, 2))
        u[:, 0] = self.band_center(t0, tau, p)
        u[:, 1] = self.r_u
        mu = np.full(N, self.w_d * p / (2 * self.r_u))
        return np.concatenate([u.ravel(), mu, np.zeros(2), [p]])

    def positive_unknowns(self, N):
        """Slack ``u_d`` and multiplier ``mu`` (the minimizing branch of the circle)."""
        mask = np.zeros(self.dims(N).m, dtype=bool)
        mask[1:2 * N:2] = True
        mask[2 * N:3 * N] = True
        return mask


class ZeroDynamicsModel(OcpModel):
    """Stub with ``f = 0``, no constraints and zero costs; handy for tests."""

    name = "zero"

    def __init__(self, n_x=2, m_u=1):
        self.n_x = n_x
        self.m_u = m_u

    def f(self, t, tau, x, u, p):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u)[:-1] + (self.n_x,)))


MODELS = {
    "mintime": MinTimeModel,
}


def get_model(name: str, **kwargs) -> OcpModel:
    try:
        return MODELS[name](**kwargs)
    except KeyError:
        raise ContractError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None


def _check(arr, size, what):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (size,):
        raise ContractError(f"{what}: expected shape ({size},), got {arr.shape}")
    return arr


def eval_dynamics(model, t, tau, x, u, p):
    x = _check(x, model.n_x, "state")
    u = _check(u, model.m_u, "control")
    p = _check(p, model.m_p, "parameters")
    return np.asarray(model.f(t, tau, x, u, p), dtype=float)


def eval_constraint(model, t, tau, x, u, p):
    x = _check(x, model.n_x, "state")
    u = _check(u, model.m_u, "control")
    p = _check(p, model.m_p, "parameters")
    return np.asarray(model.C(t, tau, x, u, p), dtype=float).reshape(model.m_c)


def eval_hamiltonian_gradients(model, t, tau, x, lam, u, mu, p):
    """Return ``(H_x, H_u, H_p)`` at a single gridpoint."""
    x = _check(x, model.n_x, "state")
    lam = _check(lam, model.n_x, "costate")
    u = _check(u, model.m_u, "control")
    mu = _check(mu, model.m_c, "multiplier")
    p = _check(p, model.m_p, "parameters")
    return (model.H_x(t, tau, x, lam, u, mu, p),
            model.H_u(t, tau, x, lam, u, mu, p),
            model.H_p(t, tau, x, lam, u, mu, p))


def gradient_errors(model, rng, n_points=50, step=FD_GRADIENT_STEP):
    """Worst relative mismatch between the model's derivatives and central
    differences of the composite Hamiltonian and terminal functions.

    Returns a dict keyed by derivative name.  The relative error is measured
    as ``|analytic - fd| / max(1, |fd|)``.
    """
    errs = {k: 0.0 for k in ("H_x", "H_u", "H_p", "phi_x", "phi_p", "psi_x", "psi_p")}

    def rel(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0))

    for _ in range(n_points):
        t = rng.uniform(0, 2)
        tau = rng.uniform(0, 1)
        x = rng.uniform(-2, 2, model.n_x)
        lam = rng.uniform(-2, 2, model.n_x)
        u = rng.uniform(-2, 2, model.m_u)
        mu = rng.uniform(-1, 1, model.m_c)
        p = rng.uniform(0.5, 2, model.m_p)
        H = lambda x_, u_, p_: model.hamiltonian(t, tau, x_, lam, u_, mu, p_)
        errs["H_x"] = max(errs["H_x"], rel(model.H_x(t, tau, x, lam, u, mu, p),
                                           _fd_last_axis(lambda z: H(z, u, p), x, step)))
        errs["H_u"] = max(errs["H_u"], rel(model.H_u(t, tau, x, lam, u, mu, p),
                                           _fd_last_axis(lambda z: H(x, z, p), u, step)))
        errs["H_p"] = max(errs["H_p"], rel(model.H_p(t, tau, x, lam, u, mu, p),
                                           _fd_last_axis(lambda z: H(x, u, z), p, step)))
        errs["phi_x"] = max(errs["phi_x"], rel(model.phi_x(x, p),
                                               _fd_last_axis(lambda z: model.phi(z, p), x, step)))
        errs["phi_p"] = max(errs["phi_p"], rel(model.phi_p(x, p),
                                               _fd_last_axis(lambda z: model.phi(x, z), p, step)))
        if model.m_psi:
            errs["psi_x"] = max(errs["psi_x"], rel(model.psi_x(x, p),
                                                   _fd_last_axis(lambda z: model.psi(z, p), x, step)))
            errs["psi_p"] = max(errs["psi_p"], rel(model.psi_p(x, p),
                                                   _fd_last_axis(lambda z: model.psi(x, z), p, step)))
    return errs
