"""Closed-loop simulation driver, CSV logs and preconditioner comparisons."""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuation import (ContinuationConfig, StepError, continuation_step,
                           initialize_U0, propagate_state)
from .model import get_model

log = logging.getLogger(__name__)

TIMING_FIELDS = ("precond_seconds", "solve_seconds")


@dataclass
class RunConfig:
    model: str = "mintime"
    N: int = 100
    dt: float = 1 / 500
    h: float = 1e-8
    tol: float = 1e-5
    k_max: int = 100
    precond: str = "sparse"
    steps: int = 1000
    out: str | None = None
    seed: int = 0
    timings: bool = True

    def __post_init__(self):
        if self.N < 1 or self.k_max < 1 or self.steps < 0:
            raise ValueError("N and k_max must be >= 1, steps >= 0")
        if not (self.dt > 0 and self.h > 0 and self.tol > 0):
            raise ValueError("dt, h and tol must be positive")
        get_model(self.model)
        self.continuation()

    def continuation(self) -> ContinuationConfig:
        return ContinuationConfig(N=self.N, h=self.h, dt=self.dt, tol=self.tol,
                                  k_max=self.k_max, precond=self.precond)


@dataclass
class StepRecord:
    step: int
    t: float
    x: np.ndarray
    u: np.ndarray
    norm_F: float
    gmres_iters: int
    precond_seconds: float
    solve_seconds: float
    regularized: bool
    fallback: bool = False

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        return (self.step == other.step and self.t == other.t
                and np.array_equal(self.x, other.x) and np.array_equal(self.u, other.u)
                and self.norm_F == other.norm_F and self.gmres_iters == other.gmres_iters
                and self.precond_seconds == other.precond_seconds
                and self.solve_seconds == other.solve_seconds
                and bool(self.regularized) == bool(other.regularized))


@dataclass
class SimulationLog:
    state_names: tuple[str, ...]
    control_names: tuple[str, ...]
    records: list[StepRecord] = field(default_factory=list)
    horizon_end: float | None = None   # t0 + t_f estimate from the initialization

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def header(self):
        return (["step", "t", *self.state_names, *self.control_names]
                + ["normF", "gmres_iters", "precond_seconds", "solve_seconds", "regularized"])

    def column(self, name):
        if name in self.state_names:
            i = self.state_names.index(name)
            return np.array([r.x[i] for r in self.records])
        if name in self.control_names:
            i = self.control_names.index(name)
            return np.array([r.u[i] for r in self.records])
        attr = {"normF": "norm_F"}.get(name, name)
        return np.array([getattr(r, attr) for r in self.records])

    @property
    def times(self):
        return self.column("t")

    @property
    def iterations(self):
        return self.column("gmres_iters")

    @property
    def states(self):
        return np.array([r.x for r in self.records]).reshape(len(self), len(self.state_names))

    @property
    def controls(self):
        return np.array([r.u for r in self.records]).reshape(len(self), len(self.control_names))


def _round_timing(v):
    return float(f"{v:.6f}")


def _fmt(v):
    return repr(float(v))


class CsvLogWriter:
    """Streams records to CSV as they are produced."""

    def __init__(self, path, state_names, control_names):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(SimulationLog(tuple(state_names), tuple(control_names)).header)
        self._fh.flush()

    def write(self, r: StepRecord):
        self._w.writerow([r.step, _fmt(r.t), *map(_fmt, r.x), *map(_fmt, r.u), _fmt(r.norm_F),
                          int(r.gmres_iters), f"{r.precond_seconds:.6f}", f"{r.solve_seconds:.6f}",
                          int(bool(r.regularized))])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(sim_log: SimulationLog, path):
    with CsvLogWriter(path, sim_log.state_names, sim_log.control_names) as w:
        for r in sim_log:
            w.write(r)
    return Path(path)


def read_csv(path) -> SimulationLog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_x = header.index("normF") - 2
        # state/control split is not recoverable from names alone; MinTime-style
        # logs put states first, and the control block ends right before normF.
        names = header[2:header.index("normF")]
        sim_log = None
        rows = list(reader)
    k = _state_count(names)
    sim_log = SimulationLog(tuple(names[:k]), tuple(names[k:]))
    for row in rows:
        vals = row[2:2 + n_x]
        tail = row[2 + n_x:]
        sim_log.records.append(StepRecord(
            step=int(row[0]), t=float(row[1]),
            x=np.array([float(v) for v in vals[:k]]), u=np.array([float(v) for v in vals[k:]]),
            norm_F=float(tail[0]), gmres_iters=int(tail[1]),
            precond_seconds=float(tail[2]), solve_seconds=float(tail[3]), regularized=bool(int(tail[4]))))
    return sim_log


def _state_count(names):
    # generic labels are x0.. and u0..; named models register their labels
    from .model import MODELS
    for cls in MODELS.values():
        if tuple(names) == tuple(cls.state_names) + tuple(cls.control_names):
            return len(cls.state_names)
    return sum(1 for n in names if not n.startswith("u"))


def run_simulation(cfg: RunConfig, on_step=None, model=None, on_init=None) -> SimulationLog:
    """Initialize, then run ``cfg.steps`` continuation steps in closed loop.

    ``on_step`` receives every record as soon as it exists and ``on_init``
    gets ``(U0, x0, t0)``.  A step whose preconditioned solve fails is
    retried unpreconditioned.
    """
    model = get_model(cfg.model) if model is None else model
    ccfg = cfg.continuation()
    sim_log = SimulationLog(model.state_labels(), model.control_labels())
    if cfg.steps == 0:
        return sim_log
    t = 0.0
    x = np.asarray(model.initial_state(), dtype=float)
    U = initialize_U0(model, x, t, ccfg)
    if model.m_p:
        sim_log.horizon_end = t + float(U.p[0])
    if on_init is not None:
        on_init(U, x, t)
    for j in range(cfg.steps):
        try:
            res = continuation_step(model, U, x, t, ccfg)
        except StepError as exc:
            if ccfg.precond == "none":
                raise
            log.warning("step %d: %s; retrying unpreconditioned", j, exc)
            res = continuation_step(model, U, x, t, ccfg, precond="none")
            res.fallback = True
        timings = (_round_timing(res.precond_seconds), _round_timing(res.solve_seconds)) if cfg.timings else (0.0, 0.0)
        rec = StepRecord(j, t, x.copy(), res.u_applied.copy(), res.norm_F, res.report.iterations,
                         *timings, res.regularized, res.fallback)
        sim_log.records.append(rec)
        if on_step is not None:
            on_step(rec)
        U = res.U
        x = propagate_state(model, x, res.u_applied, t, ccfg.dt, U.p)
        t = (j + 1) * ccfg.dt
    return sim_log


class ConfigMismatch(ValueError):
    pass


@dataclass
class Comparison:
    steps: np.ndarray
    times: np.ndarray
    iters_a: np.ndarray
    iters_b: np.ndarray

    @property
    def ratio(self):
        a = self.iters_a.astype(float)
        b = self.iters_b.astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = b / a
        r[(a == 0) & (b == 0)] = 1.0
        return r

    def summary(self):
        r = self.ratio
        return {"min": float(np.min(r)), "median": float(np.median(r)), "max": float(np.max(r))}

    def write_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t", "iters_a", "iters_b", "ratio"])
            for row in zip(self.steps, self.times, self.iters_a, self.iters_b, self.ratio):
                w.writerow([int(row[0]), _fmt(row[1]), int(row[2]), int(row[3]), _fmt(row[4])])
        summary_path = path.with_name(path.stem + "_summary.csv")
        with open(summary_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "ratio"])
            for k, v in self.summary().items():
                w.writerow([k, _fmt(v)])
        return path, summary_path


def check_comparable(cfg_a: RunConfig, cfg_b: RunConfig):
    same = dataclasses.replace(cfg_b, precond=cfg_a.precond, out=cfg_a.out)
    if same != cfg_a:
        diff = [f.name for f in dataclasses.fields(cfg_a) if getattr(same, f.name) != getattr(cfg_a, f.name)]
        raise ConfigMismatch(f"configurations differ beyond the preconditioner: {', '.join(diff)}")


def compare_logs(log_a: SimulationLog, log_b: SimulationLog) -> Comparison:
    n = min(len(log_a), len(log_b))
    return Comparison(log_a.column("step")[:n], log_a.times[:n],
                      log_a.iterations[:n], log_b.iterations[:n])


def compare_runs(cfg_a: RunConfig, cfg_b: RunConfig, logs=None):
    """Run both configurations and tabulate ``iters_b / iters_a`` per step.

    The configurations may differ only in the preconditioner (and output
    location).  Pre-computed ``logs`` skip the simulations.
    """
    check_comparable(cfg_a, cfg_b)
    if logs is None:
        logs = run_simulation(cfg_a), run_simulation(cfg_b)
    return compare_logs(*logs), logs
