"""Command-line entry point.

Subcommands:

* ``run <config> [--out DIR] [--seeds LIST]`` -- execute an experiment
  config, writing per-seed trace CSVs and a summary.
* ``solve <case>`` -- print the exact dispatch and multiplier for a case.
* ``validate <case>`` -- parse and validate a case file.

Exit codes: 0 success, 2 configuration/validation error, 3 run error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DercoordError
from .experiment import load_case, load_config, run_experiment
from .oracle import solve_bisection


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _cmd_run(args) -> int:
    config = load_config(args.config, out_override=args.out, seeds_override=args.seeds)
    result = run_experiment(config)
    for outcome in result.outcomes:
        if outcome.status == "ok":
            final = outcome.error[-1] if outcome.error is not None else float("nan")
            print(
                f"seed {outcome.seed}: ok  final_error={_fmt(final)}  "
                f"rate={_fmt(outcome.fitted_rate)}"
            )
            for note in outcome.trace.warnings:
                print(f"seed {outcome.seed}: warning: {note}")
        else:
            print(f"seed {outcome.seed}: error: {outcome.message}", file=sys.stderr)
    print(f"artifacts written to {config.out_dir}")
    return 0 if result.ok else 3


def _cmd_solve(args) -> int:
    inst, _graph = load_case(args.case)
    nhat = args.nhat if args.nhat is not None else float(inst.n)
    sol = solve_bisection(inst, xi=args.xi, nhat=nhat, tol=args.tol)
    print(f"lambda_star = {_fmt(sol.lambda_star)}")
    print(f"kkt_residual = {_fmt(sol.kkt_residual)}")
    print("p_star:")
    for i, val in enumerate(sol.p_star):
        print(f"  {i} {_fmt(val)}")
    return 0


def _cmd_validate(args) -> int:
    inst, graph = load_case(args.case)
    mode = "directed" if graph.directed else "undirected"
    print(
        f"ok: {inst.n} agents, {graph.m} {mode} links, "
        f"total load {_fmt(inst.total_load)}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dercoord",
        description="Distributed economic dispatch simulator over time-varying graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to the experiment config file")
    p_run.add_argument("--out", help="output directory (overrides [output] dir)")
    p_run.add_argument("--seeds", help="comma-separated seed list (overrides [run] seeds)")
    p_run.set_defaults(fn=_cmd_run)

    p_solve = sub.add_parser("solve", help="print the exact solution of a case")
    p_solve.add_argument("case", help="path to a case file")
    p_solve.add_argument("--xi", type=float, default=1.0, help="multiplier scaling (default 1)")
    p_solve.add_argument("--nhat", type=float, default=None, help="size estimate (default n)")
    p_solve.add_argument("--tol", type=float, default=1e-12, help="balance tolerance")
    p_solve.set_defaults(fn=_cmd_solve)

    p_val = sub.add_parser("validate", help="parse and validate a case file")
    p_val.add_argument("case", help="path to a case file")
    p_val.set_defaults(fn=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DercoordError as exc:
        if args.command == "run":
            print(f"run error: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
