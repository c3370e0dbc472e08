"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 runtime guard or estimate
failure, 4 benchmark ordering mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

from .bench import REFERENCE_COUNTS, TABLES, BenchError, check_table, run_table, slow_enabled
from .driver import GuardTrip, SolveError, StopPolicy, naive_failure_demo, solve, solve_two_stage, write_csv
from .estimates import (
    EstimateError,
    ExponentError,
    exponent_solve,
    one_sided_bound,
    two_sided_bound,
)
from .expr import ExprError
from .problems import REGISTRY, Kind, Problem, ProblemError, load_problem, registry_get
from .transforms import Method, TransformError, TransformSpec

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3
EXIT_ORDERING = 4

METHOD_CHOICES = [m.value for m in Method] + ["growth-auto"]


class _Invalid(Exception):
    """Bad command-line input."""


def _parse_params(items: Sequence[str] | None) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise _Invalid(f"--param expects name=value, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise _Invalid(f"--param {key}: {value!r} is not a number") from None
    return out


def _load(problem: str, params: dict[str, float]):
    path = Path(problem)
    if problem.endswith(".json") or path.is_file():
        if params:
            raise _Invalid("--param applies to registry problems only")
        return load_problem(path)
    return registry_get(problem, params)


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blowup-ode",
        description="Integrate blow-up ODE problems through regularizing transformations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a problem and export the parametric solution")
    s.add_argument("problem", help="registry name or path to a problem JSON file")
    s.add_argument("--method", default="exp-f-over-y", choices=METHOD_CHOICES)
    s.add_argument("--g", help="gauge expression for nonlocal/constraint (xi spelled 'xi')")
    s.add_argument("--lambda", dest="lam", type=_positive, default=1.0,
                   help="rate of the modified differential method")
    s.add_argument("--k", help="1-based growth component for systems, or 'auto'")
    s.add_argument("--xi0", type=float, default=0.0, help="initial xi for constraints")
    s.add_argument("--integrated", action="store_true",
                   help="integrate the exponential slot instead of using its closed form")
    s.add_argument("--h", type=_positive, default=0.1, help="step in the new variable")
    s.add_argument("--lambda-target", type=_positive, default=50.0)
    s.add_argument("--xi-max", type=_positive, default=1e7, help="hard limit on the parameter")
    s.add_argument("--two-stage", action="store_true",
                   help="naive RK4 until the solution takes off, then exp-f-over-y")
    s.add_argument("--param", action="append", metavar="NAME=VALUE")
    s.add_argument("--out", help="output prefix for .csv and .json (default <problem>_<method>)")

    b = sub.add_parser("bench", help="reproduce a method-comparison table")
    b.add_argument("--table", required=True, choices=sorted(TABLES))
    b.add_argument("--target", type=_positive, action="append",
                   help="error target in percent; repeatable (default: all published)")
    b.add_argument("--out", default=".", help="directory for the CSV files")
    b.add_argument("--slow", action="store_true", help="include the slow arc-length rows of T3")
    b.add_argument("--workers", type=int, default=1)

    e = sub.add_parser("estimate", help="bounds for x* or dominant-balance exponents")
    e.add_argument("problem")
    e.add_argument("--mode", default="auto", choices=["auto", "one-sided", "two-sided", "exponents"])
    e.add_argument("--minorant", help="minorant g(y) <= f for one-sided mode")
    e.add_argument("--param", action="append", metavar="NAME=VALUE")

    d = sub.add_parser("demo-naive", help="integrate the untransformed equation in x")
    d.add_argument("problem")
    d.add_argument("--method", default="rk4", choices=["euler", "midpoint", "rk4"])
    d.add_argument("--h", type=_positive, default=0.01)
    d.add_argument("--x-end", type=float)
    d.add_argument("--param", action="append", metavar="NAME=VALUE")

    sub.add_parser("list-problems", help="list registry problems")
    return parser


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.10g}"


def _spec_from_args(args) -> TransformSpec:
    method = args.method
    k: int | str | None = None
    if method == "growth-auto":
        method, k = "growth", "auto"
    if args.k is not None:
        if args.k == "auto":
            k = "auto"
        else:
            try:
                k = int(args.k)
            except ValueError:
                raise _Invalid(f"--k must be an integer or 'auto', got {args.k!r}") from None
    return TransformSpec(
        Method.parse(method),
        g=args.g,
        lam=args.lam,
        k=k,
        xi0=args.xi0,
        closed_form=not args.integrated,
    )


def _write_outputs(report, prefix: str) -> None:
    write_csv(report.ps, prefix + ".csv")
    with open(prefix + ".json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")


def cmd_solve(args) -> int:
    p, _ = _load(args.problem, _parse_params(args.param))
    stop = StopPolicy(lambda_target=args.lambda_target, hard_xi_max=args.xi_max)
    prefix = args.out or f"{p.name or Path(args.problem).stem}_{args.method}"
    try:
        if args.two_stage:
            report = solve_two_stage(p, stop, args.h)
        else:
            report = solve(p, _spec_from_args(args), stop, args.h)
    except GuardTrip as exc:
        _write_outputs(exc.report, prefix)
        print(f"guard tripped: {exc}", file=sys.stderr)
        print(f"partial solution written to {prefix}.csv")
        return EXIT_RUNTIME
    _write_outputs(report, prefix)
    if not p.is_scalar:
        print(f"growing component: {report.growth_index}")
    print(f"x_star_estimate:     {_fmt(report.x_star_estimate)}")
    print(f"x_star_extrapolated: {_fmt(report.x_star_extrapolated)} ({report.extrapolation_model})")
    print(f"tail 1/beta:         {_fmt(report.tail_inv_beta)}")
    print(f"stop reason:         {report.stop_reason.value} after {len(report.ps) - 1} steps")
    if report.stage_boundary:
        print(f"stage boundary:      x={report.stage_boundary[0]:.10g} y={report.stage_boundary[1]:.10g}")
    print(f"wrote {prefix}.csv and {prefix}.json")
    return EXIT_OK


def cmd_bench(args) -> int:
    targets = args.target or sorted(REFERENCE_COUNTS[args.table], reverse=True)
    slow = args.slow or slow_enabled()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for table in run_table(args.table, targets, slow=slow, workers=args.workers):
        path = out / f"{table.table_id}_{table.target_error_pct:g}.csv"
        table.write_csv(path)
        print(f"{table.table_id} target {table.target_error_pct:g}% -> {path}")
        ranking = " > ".join(f"{c.method_label} [{c.g_label}] {c.n_points}" for c in table.ranked())
        print(f"  ranking: {ranking}")
        if table.target_error_pct not in REFERENCE_COUNTS[table.table_id]:
            print("  no published counts for this target")
            continue
        check = check_table(table)
        for line in check.lines:
            print("  " + line)
        print(f"  ordering: {'PASS' if check.ordering_ok else 'FAIL'}   counts: {'PASS' if check.counts_ok else 'FAIL'}")
        if not check.ordering_ok:
            status = EXIT_ORDERING
    return status


def cmd_estimate(args) -> int:
    p, _ = _load(args.problem, _parse_params(args.param))
    mode = args.mode
    if mode == "auto":
        mode = "exponents" if p.kind is Kind.SYSTEM else "two-sided"
    if mode == "exponents":
        if p.kind is not Kind.SYSTEM:
            raise _Invalid("exponents mode needs a system")
        print(json.dumps(exponent_solve(p).to_json(), indent=2))
        return EXIT_OK
    if p.kind is not Kind.FIRST:
        raise _Invalid(f"{mode} bounds need a first-order equation")
    a = p.initial[0]
    if mode == "two-sided":
        report = two_sided_bound(p.rhs[0], a, p.x0, dict(p.params))
        doc = report.to_json()
    else:
        minorant = args.minorant or (REGISTRY[p.name].minorant if p.name in REGISTRY else None)
        if not minorant:
            raise _Invalid("one-sided mode needs --minorant")
        doc = {"I_g": one_sided_bound(p.rhs[0], minorant, a, p.x0, dict(p.params)), "minorant": minorant}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_demo_naive(args) -> int:
    p, sol = _load(args.problem, _parse_params(args.param))
    traj = naive_failure_demo(p, args.method, args.h, args.x_end)
    print(f"halt reason: {traj.halt_reason.value}")
    print(f"halted at x: {traj.halt_tau:.10g} after {traj.n_steps} steps")
    if sol is not None and sol.x_star is not None:
        print(f"true x_star: {sol.x_star:.10g}")
    return EXIT_OK


def cmd_list_problems(args) -> int:
    for name, entry in REGISTRY.items():
        params = ", ".join(f"{k}={v:g}" for k, v in entry.defaults.items())
        print(f"{name:20s} {entry.kind.value:11s} {entry.description}" + (f" [{params}]" if params else ""))
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "estimate": cmd_estimate,
    "demo-naive": cmd_demo_naive,
    "list-problems": cmd_list_problems,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (_Invalid, ProblemError, TransformError, ExprError, ExponentError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EstimateError, SolveError, BenchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
