"""Command line entry point: ``hetcast <task> --config FILE``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys

import numpy as np

from .config import FORMATS, SOLVERS, ConfigError, load_config
from .experiments import TASKS, TaskResult, run_solve, run_sweep
from .mdp import UnichainError
from .model import ModelError, ResourceLimitError
from .sim import SimulationError


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def format_table(result: TaskResult) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(result.columns)
    for row in result.rows:
        out.writerow([_cell(row.get(c)) for c in result.columns])
    return buf.getvalue()


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, set, frozenset)):
        return list(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def format_report(result: TaskResult) -> str:
    return json.dumps({"ok": result.ok, "report": result.report}, indent=2, sort_keys=True,
                      default=_json_default) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetcast",
        description="Solve, approximate, verify and simulate multicast scheduling in cache-enabled "
                    "heterogeneous networks.")
    sub = parser.add_subparsers(dest="task", required=True)
    helps = {
        "solve": "compute an optimal policy (rvia, pia or spia)",
        "subopt": "decompose the base policy's value and run SSA",
        "greedy": "tabulate the greedy policy",
        "simulate": "Monte Carlo costs of the configured policies",
        "verify": "check the structural properties of the solved policies",
        "oracle": "compare every solver against exhaustive policy search",
        "sweep": "simulate policies across a parameter grid",
    }
    for task, text in helps.items():
        p = sub.add_parser(task, help=text)
        p.add_argument("--config", required=True, help="experiment file (YAML)")
        p.add_argument("--out", help="write the result here instead of stdout")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep points")
        p.add_argument("--format", choices=FORMATS, help="csv result table or JSON report")
        if task == "solve":
            p.add_argument("--method", choices=SOLVERS, help="override solver.method")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_config(args.config)
        if args.seed is not None:
            spec = spec.replace(sim=dataclasses.replace(spec.sim, seed=args.seed))
        if args.task == "solve":
            result = run_solve(spec, args.method)
        elif args.task == "sweep":
            result = run_sweep(spec, max(1, args.workers))
        else:
            result = TASKS[args.task](spec)
    except ConfigError as exc:
        print(f"hetcast: config error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, UnichainError, ResourceLimitError, SimulationError, ValueError, OSError) as exc:
        print(f"hetcast: {args.task} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    fmt = args.format or spec.output.format
    text = format_table(result) if fmt == "csv" else format_report(result)
    path = args.out or spec.output.path
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not result.ok:
        print(f"hetcast: {args.task} finished with failed checks", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
