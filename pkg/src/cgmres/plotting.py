"""Static SVG figures for a simulation log."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "cgmres",
    "svg.fonttype": "path",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def plot_trajectory(sim_log, path, target=None):
    X = sim_log.states
    fig, ax = plt.subplots()
    ax.plot(X[:, 0], X[:, 1], color="C0", label="closed loop")
    ax.plot(X[0, 0], X[0, 1], "o", color="C2", label="start")
    if target is not None:
        ax.plot(*target, "x", color="C3", markersize=8, label="target")
    names = sim_log.state_names
    ax.set_xlabel(names[0])
    ax.set_ylabel(names[1] if len(names) > 1 else "")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    return _save(fig, path)


def plot_control(sim_log, path, model=None):
    t = sim_log.times
    u = sim_log.controls[:, 0]
    fig, ax = plt.subplots()
    if model is not None and hasattr(model, "band_center"):
        tt = np.linspace(t[0], t[-1], max(200, 4 * len(t)))
        c = model.band_center(tt, 0.0, 0.0)
        ax.fill_between(tt, c - model.r_u, c + model.r_u, color="C1", alpha=0.2, lw=0, label="band")
        ax.plot(tt, c, "--", color="C1", lw=0.8)
    ax.plot(t, u, color="C0", label=sim_log.control_names[0])
    ax.set_xlabel("t")
    ax.set_ylabel(sim_log.control_names[0])
    ax.legend(loc="best")
    return _save(fig, path)


def plot_iterations(sim_log, path):
    fig, ax = plt.subplots()
    ax.step(sim_log.column("step"), sim_log.iterations, where="mid", color="C0")
    ax.set_xlabel("step")
    ax.set_ylabel("GMRES iterations")
    ax.set_ylim(bottom=0)
    return _save(fig, path)


def emit_plots(sim_log, outdir, model=None):
    """Write ``trajectory.svg``, ``control.svg`` and ``iterations.svg``."""
    if len(sim_log) == 0:
        raise ValueError("cannot plot an empty log")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    target = None
    if model is not None and hasattr(model, "x_f"):
        target = (model.x_f, model.y_f)
    with plt.rc_context(STYLE):
        return [plot_trajectory(sim_log, outdir / "trajectory.svg", target),
                plot_control(sim_log, outdir / "control.svg", model),
                plot_iterations(sim_log, outdir / "iterations.svg")]
