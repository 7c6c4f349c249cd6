"""
gradcheck: compare every analytic loss gradient with central differences.
"""

import argparse
from pathlib import Path

from cli.common import add_config_arg, config_from, print_table
from core.gradcheck import DEFAULT_EPS, DEFAULT_TOL, run_gradcheck
from core.pipeline import write_json
from core.schemas import GradCheckReport, rows_from_results


def register(subparsers) -> None:
    p = subparsers.add_parser("gradcheck", help="Finite-difference check of the loss gradients.")
    add_config_arg(p)
    p.add_argument("--cases", type=int, default=100, help="Random cases per term.")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out", type=Path, default=None, help="Also write the table as JSON.")
    p.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from(args)
    results = run_gradcheck(config.loss, n_cases=args.cases, seed=config.seed, eps=args.eps, tol=args.tol)
    print_table(
        f"{'term':<16}{'argument':<12}{'max rel err':>14}  result",
        [f"{r.term:<16}{r.argument:<12}{r.max_error:>14.3e}  {'PASS' if r.passed else 'FAIL'}" for r in results],
    )
    if args.out is not None:
        report = GradCheckReport(eps=args.eps, tol=args.tol, rows=rows_from_results(results))
        write_json(args.out, report.model_dump_json(indent=2))
    return 0 if all(r.passed for r in results) else 1
