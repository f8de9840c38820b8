"""Command-line entry point.

    compaudit --plan PATH [--out DIR] [--workers N] [--seed-base U64]
              [--stage {train|compress|attack|evaluate|report}]

Without --stage the whole pipeline runs and the report is rendered.
Environment overrides are limited to paths and thread count:
COMPAUDIT_OUT supplies the default output directory and COMPAUDIT_WORKERS
the default worker count. Exit code 0 on success, 1 when attack cells
failed (with a per-cell listing), 2 on plan or dependency errors.
"""

import argparse
import os
import sys

from .errors import CompauditError
from .pipeline import STAGES, run_plan, run_stage
from .plan import parse_plan


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compaudit",
        description="Membership-leakage audit for compressed classifiers.",
    )
    parser.add_argument("--plan", required=True, help="path to the experiment plan (INI)")
    parser.add_argument(
        "--out",
        default=os.environ.get("COMPAUDIT_OUT", "audit_out"),
        help="output directory (default: $COMPAUDIT_OUT or ./audit_out)",
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=int(os.environ.get("COMPAUDIT_WORKERS", "0")) or None,
        help="concurrent repetition workers (default: plan value)",
    )
    parser.add_argument("--seed-base", type=int, default=None, help="override the plan's seed base")
    parser.add_argument("--stage", choices=STAGES, default=None, help="run a single stage")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = parse_plan(args.plan)
        if args.seed_base is not None:
            plan.seed_base = args.seed_base
        if args.stage is None:
            report = run_plan(plan, args.out, workers=args.workers)
        else:
            result = run_stage(plan, args.out, args.stage, workers=args.workers)
            report = result if args.stage == "report" else None
    except CompauditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if report is not None:
        print(f"report written to {os.path.join(args.out, 'report', 'report.json')}")
        for cell_key, agg in report["aggregates"].items():
            print(
                f"  {cell_key}: balanced accuracy {agg['balanced_accuracy_median']:.4f}, "
                f"auc {agg['auc_median']:.4f}"
            )
        if report["failures"]:
            print("failed cells:", file=sys.stderr)
            for f in report["failures"]:
                print(f"  rep{f['rep']} {f['cell']}: {f['error']}", file=sys.stderr)
            return 1
    else:
        print(f"stage {args.stage} complete")
    return 0


if __name__ == "__main__":
    sys.exit(main())
