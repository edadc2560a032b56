"""Command-line closed-loop simulator.

    cgmres-sim run --N 100 --steps 1000 --out results
    cgmres-sim compare --config bench.cfg --out cmp

Exit codes: 0 success, 1 usage error, 2 initialization failure,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .continuation import InitializationError, StepError
from .gmres import SolverFailure
from .horizon import compute_trajectory
from .model import ContractError, get_model
from .plotting import emit_plots
from .precond import assemble_preconditioner
from .simulation import (ConfigMismatch, CsvLogWriter, RunConfig, check_comparable,
                         compare_logs, run_simulation)

EXIT_OK, EXIT_USAGE, EXIT_INIT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cgmres")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _number(text):
    """Float that also accepts fractions such as ``1/500``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


# config key -> (RunConfig field, parser)
CONFIG_KEYS = {
    "model": ("model", str),
    "N": ("N", int),
    "dt": ("dt", _number),
    "h": ("h", _number),
    "tol": ("tol", _number),
    "kmax": ("k_max", int),
    "precond": ("precond", str),
    "steps": ("steps", int),
    "out": ("out", str),
    "seed": ("seed", int),
}


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: cannot parse {raw.strip()!r}")
        field, conv = CONFIG_KEYS[key]
        try:
            values[field] = conv(value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from None
    return values


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--model", help="registered model name (default mintime)")
    common.add_argument("--N", type=int, help="horizon gridpoints")
    common.add_argument("--dt", type=_number, help="sampling period")
    common.add_argument("--h", type=_number, help="forward-difference step")
    common.add_argument("--tol", type=_number, help="GMRES relative tolerance")
    common.add_argument("--kmax", type=int, help="GMRES iteration cap")
    common.add_argument("--steps", type=int, help="closed-loop steps")
    common.add_argument("--out", help="output directory (default results)")
    common.add_argument("--no-timings", action="store_true", help="write zero timing columns")
    common.add_argument("--no-plots", action="store_true", help="skip the SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cgmres-sim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", parents=[common], help="one closed-loop simulation")
    run.add_argument("--precond", choices=["sparse", "none"], help="preconditioner (default sparse)")
    run.add_argument("--dump-pattern", action="store_true",
                     help="write the preconditioner sparsity pattern at t=0")
    cmp = sub.add_parser("compare", parents=[common], help="sparse vs unpreconditioned iteration counts")
    cmp.add_argument("--a", default="sparse", choices=["sparse", "none"], dest="precond_a")
    cmp.add_argument("--b", default="none", choices=["sparse", "none"], dest="precond_b")
    return parser


def make_config(args) -> RunConfig:
    values = read_config(args.config) if args.config else {}
    for key, (field, _) in CONFIG_KEYS.items():
        v = getattr(args, key, None)
        if v is not None:
            values[field] = v
    values.setdefault("out", "results")
    values["timings"] = not args.no_timings
    try:
        return RunConfig(**values)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _simulate(cfg: RunConfig, outdir: Path, plots=True, dump_pattern=False):
    outdir.mkdir(parents=True, exist_ok=True)
    model = get_model(cfg.model)
    ccfg = cfg.continuation()

    def dump(U, x, t):
        traj = compute_trajectory(model, U, x, t)
        M = assemble_preconditioner(model, U, x, t, traj, h=ccfg.h)
        M.write_pattern(outdir / "pattern.txt")
        M.write_pattern(outdir / "pattern_permuted.txt", permuted=True)

    with CsvLogWriter(outdir / "log.csv", model.state_labels(), model.control_labels()) as sink:
        sim_log = run_simulation(cfg, on_step=sink.write, model=model,
                                 on_init=dump if dump_pattern else None)
    if plots and len(sim_log):
        emit_plots(sim_log, outdir, model)
    return sim_log


def _report(sim_log, label=""):
    if not len(sim_log):
        print(f"{label}0 steps")
        return
    it = sim_log.iterations
    nF = sim_log.column("normF")
    x = sim_log.states[-1]
    print(f"{label}{len(sim_log)} steps  mean iters {np.mean(it):.3f}  max |F| {np.max(nF):.3e}  "
          f"final state ({', '.join(f'{v:.4f}' for v in x)})")


def cmd_run(args):
    cfg = make_config(args)
    out = Path(cfg.out)
    sim_log = _simulate(cfg, out, plots=not args.no_plots, dump_pattern=args.dump_pattern)
    _report(sim_log)
    print(f"wrote {out / 'log.csv'}")


def cmd_compare(args):
    base = make_config(args)
    out = Path(base.out)
    cfg_a = dataclasses.replace(base, precond=args.precond_a, out=str(out / f"a_{args.precond_a}"))
    cfg_b = dataclasses.replace(base, precond=args.precond_b, out=str(out / f"b_{args.precond_b}"))
    try:
        check_comparable(cfg_a, cfg_b)
    except ConfigMismatch as exc:
        raise UsageError(str(exc)) from None
    logs = [_simulate(c, Path(c.out), plots=not args.no_plots) for c in (cfg_a, cfg_b)]
    table = compare_logs(*logs)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "comparison.csv")
    _report(logs[0], f"A ({cfg_a.precond}): ")
    _report(logs[1], f"B ({cfg_b.precond}): ")
    if len(table.ratio):
        s = table.summary()
        print(f"iteration ratio B/A  min {s['min']:.3f}  median {s['median']:.3f}  max {s['max']:.3f}")
    print(f"wrote {out / 'comparison.csv'}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        {"run": cmd_run, "compare": cmd_compare}[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InitializationError as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT
    except (StepError, SolverFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
