"""Command-line entry point.

Exit codes: 0 success, 1 a failed assumption, solver failure or rejected
certificate (details as JSON on stderr), 2 unreadable or malformed input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .analysis import flow_decompose
from .assembly import diagnose, reduce_to_bipartite, solve, verify_equilibrium
from .bipartite import DEFAULT_TOL
from .errors import AssumptionError, EqFlowError, ValidationError
from .io import (dumps, load_outcome, load_problem, outcome_to_dict, read_dimacs,
                 reduction_to_dict, to_dot)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _default_tol() -> float:
    raw = os.environ.get("EQFLOW_TOL")
    if raw is None:
        return DEFAULT_TOL
    try:
        value = float(raw)
    except ValueError:
        raise ValidationError(f"not a number: {raw!r}", field="EQFLOW_TOL") from None
    if not value > 0:
        raise ValidationError("tolerance must be positive", field="EQFLOW_TOL")
    return value


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fail(payload: dict) -> int:
    sys.stderr.write(json.dumps(payload, indent=2, default=str) + "\n")
    return EXIT_FAIL


def _load(path: str):
    if path.endswith((".min", ".dimacs")):
        return read_dimacs(Path(path).read_text()), {}
    return load_problem(path)


def cmd_check(args) -> int:
    fp, _ = _load(args.problem)
    diags = diagnose(fp)
    report = {"assumptions": [d.as_dict() for d in diags], "pass": all(d.ok for d in diags)}
    sys.stdout.write(dumps(report))
    if not report["pass"]:
        return _fail({"error": "assumption", "failed": [d.as_dict() for d in diags if not d.ok]})
    return EXIT_OK


def _solve_text(problem: str, tol: float, ground: str | None, all_diagnostics: bool) -> str:
    fp, _ = _load(problem)
    out = solve(fp, tol=tol, ground=ground, all_diagnostics=all_diagnostics)
    return dumps(outcome_to_dict(fp, out))


def _batch_one(job: tuple[str, str, float, str | None, bool]) -> tuple[str, int, str]:
    problem, target, tol, ground, all_diag = job
    try:
        Path(target).write_text(_solve_text(problem, tol, ground, all_diag))
        return problem, EXIT_OK, ""
    except (ValidationError, OSError) as exc:
        return problem, EXIT_INPUT, str(exc)
    except AssumptionError as exc:
        return problem, EXIT_FAIL, json.dumps(exc.to_dict(), default=str)
    except EqFlowError as exc:
        return problem, EXIT_FAIL, str(exc)


def cmd_solve(args) -> int:
    tol = args.tol if args.tol is not None else _default_tol()
    if args.batch:
        src = Path(args.batch)
        if not src.is_dir():
            raise ValidationError("not a directory", field="--batch")
        dest = Path(args.out) if args.out else src / "outcomes"
        dest.mkdir(parents=True, exist_ok=True)
        jobs = [(str(p), str(dest / (p.stem + ".outcome.json")), tol, args.ground,
                 args.all_diagnostics) for p in sorted(src.glob("*.json"))]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_batch_one, jobs))
        worst = EXIT_OK
        for problem, code, message in results:
            status = "ok" if code == EXIT_OK else f"exit {code}"
            sys.stdout.write(f"{Path(problem).name}: {status}\n")
            if message:
                sys.stderr.write(f"{Path(problem).name}: {message}\n")
            worst = max(worst, code)
        return worst
    if not args.problem:
        raise ValidationError("a problem file or --batch is required", field="problem")
    try:
        text = _solve_text(args.problem, tol, args.ground, args.all_diagnostics)
    except AssumptionError as exc:
        return _fail(exc.to_dict())
    _emit(text, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    tol = args.tol if args.tol is not None else _default_tol()
    fp, _ = _load(args.problem)
    out = load_outcome(fp, args.outcome)
    cert = verify_equilibrium(fp, out, tol)
    sys.stdout.write(dumps(cert.as_dict()))
    if not cert.passed:
        return _fail({"error": "certificate", **cert.as_dict()})
    return EXIT_OK


def cmd_reduce(args) -> int:
    fp, _ = _load(args.problem)
    try:
        red = reduce_to_bipartite(fp)
    except AssumptionError as exc:
        return _fail(exc.to_dict())
    _emit(dumps(reduction_to_dict(red)), args.out)
    return EXIT_OK


def cmd_decompose(args) -> int:
    fp, _ = _load(args.problem)
    out = load_outcome(fp, args.outcome)
    dec = flow_decompose(fp.net, out.mu, out.q)
    names = fp.net.nodes
    sys.stdout.write(dumps({
        "paths": [{"nodes": [names[z] for z in nodes], "mass": mass}
                  for nodes, mass in dec.path_flows],
        "loops": [{"nodes": [names[z] for z in nodes], "mass": mass}
                  for nodes, mass in dec.loop_flows],
    }))
    return EXIT_OK


def cmd_export_dot(args) -> int:
    fp, _ = _load(args.problem)
    out = load_outcome(fp, args.outcome) if args.outcome else None
    _emit(to_dot(fp, out), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqflow",
                                     description="Equilibrium flows on networks with "
                                                 "monotone connection functions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="test the existence assumptions")
    p.add_argument("problem")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="compute an equilibrium outcome")
    p.add_argument("problem", nargs="?")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--ground", default=None, help="node whose price is pinned to 0")
    p.add_argument("--out", default=None)
    p.add_argument("--all-diagnostics", action="store_true",
                   help="run every assumption check before reporting a failure")
    p.add_argument("--batch", default=None, metavar="DIR",
                   help="solve every *.json in DIR; --out names the output directory")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check an outcome's certificate")
    p.add_argument("problem")
    p.add_argument("outcome")
    p.add_argument("--tol", type=float, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reduce", help="emit the associated bipartite problem")
    p.add_argument("problem")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("decompose", help="split an outcome's flow into paths and loops")
    p.add_argument("problem")
    p.add_argument("outcome")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("export-dot", help="write the network in DOT")
    p.add_argument("problem")
    p.add_argument("outcome", nargs="?")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": "input", "message": str(exc),
                                     "field": getattr(exc, "field", None)}) + "\n")
        return EXIT_INPUT
    except AssumptionError as exc:
        return _fail(exc.to_dict())
    except EqFlowError as exc:
        return _fail({"error": type(exc).__name__, "message": str(exc),
                      **getattr(exc, "diagnostics", {})})


if __name__ == "__main__":
    sys.exit(main())
