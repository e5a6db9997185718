"""Command-line front end: ``solve``, ``bench``, ``profile`` and ``check``.

Exit codes: 0 success, 1 at least one run failed, 2 configuration error.
``MLSQP_OUTPUT_DIR`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import METHODS
from .harness import (PlanError, Budgets, branch_statistics, cost_table, dolan_more_profile,
                      load_manifest, load_plan, morales_profile, read_config_file, run_plan,
                      run_single)
from .problem_core import finite_difference_check
from .problem_suite import UnknownProblem, ParseError, resolve_problem
from .solver import CONVERGED, read_trace_csv

ENV_OUTPUT = "MLSQP_OUTPUT_DIR"
EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


def _default_out() -> str:
    return os.environ.get(ENV_OUTPUT, "mlsqp-output")


def _cmd_solve(args) -> int:
    overrides = read_config_file(args.config) if args.config else {}
    budgets = Budgets(iterations=overrides.pop("max_iterations", 100))
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    entry = run_single(args.problem, args.method, args.seed, overrides, budgets, out)
    trace = read_trace_csv(out / entry["trace"])
    stats = branch_statistics(trace) if trace else {}
    print(json.dumps({**entry, **stats}, indent=2))
    return EXIT_OK if entry["status"] == CONVERGED else EXIT_RUN_FAILURE


def _cmd_bench(args) -> int:
    plan = load_plan(args.plan)
    manifest = run_plan(plan, args.out or _default_out(), workers=args.workers)
    failed = [r for r in manifest["runs"] if r["status"] != CONVERGED]
    print(f"{len(manifest['runs'])} runs ({manifest['executed']} executed), "
          f"{len(failed)} not converged")
    for r in failed:
        print(f"  {r['problem']} {r['method']} seed={r['seed']}: {r['status']}")
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def _cmd_profile(args) -> int:
    manifest = load_manifest(args.input)
    if not manifest["runs"]:
        raise PlanError(f"no runs recorded in {args.input}")
    costs = cost_table(manifest, args.metric)
    if args.kind == "dolan-more":
        if len(costs) < 2:
            raise PlanError("Dolan-More profiles need at least two methods")
        data = {"kind": "dolan-more", "metric": args.metric,
                **dolan_more_profile(costs).to_dict()}
    else:
        if len(costs) != 2:
            raise PlanError("Morales profiles need exactly two methods")
        a, b = sorted(costs)
        try:
            values = morales_profile(costs[a], costs[b])
        except ValueError as exc:
            raise PlanError(str(exc)) from exc
        data = {"kind": "morales", "metric": args.metric, "method_a": a, "method_b": b,
                "values": [{"problem": p, "value": v} for p, v in values]}
    with open(args.out, "w") as fh:
        json.dump(data, fh, indent=2)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_check(args) -> int:
    oracle = resolve_problem(args.problem)
    rng = np.random.default_rng(args.seed)
    x0 = oracle.x0 if oracle.x0 is not None else np.zeros(oracle.n)
    points = [x0] + [x0 + rng.standard_normal(oracle.n) for _ in range(args.points)]
    ok = True
    for i, x in enumerate(points):
        rep = finite_difference_check(oracle, x)
        passed = rep.passes()
        ok &= passed
        print(f"point {i}: grad={rep.grad:.1e} jac={rep.jac:.1e} hess={rep.hess:.1e} "
              f"cons_hess={rep.cons_hess:.1e} {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUN_FAILURE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlsqp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one method on one problem")
    s.add_argument("--problem", required=True)
    s.add_argument("--method", default="ours", choices=METHODS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_solve)

    b = sub.add_parser("bench", help="run an experiment plan")
    b.add_argument("--plan", required=True)
    b.add_argument("--out")
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=_cmd_bench)

    pr = sub.add_parser("profile", help="performance profiles from a bench directory")
    pr.add_argument("--kind", choices=("dolan-more", "morales"), required=True)
    pr.add_argument("--metric", choices=("iters", "fevals", "hess"), default="iters")
    pr.add_argument("--in", dest="input", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=_cmd_profile)

    c = sub.add_parser("check", help="finite-difference derivative audit")
    c.add_argument("--problem", required=True)
    c.add_argument("--points", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PlanError, UnknownProblem, ParseError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
