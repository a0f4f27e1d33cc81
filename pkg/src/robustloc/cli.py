"""Command-line entry point.

Subcommands:
  simulate   dump raw synthetic measurements per trial as CSV
  evaluate   run a Monte Carlo campaign and write records plus summary
  report     re-aggregate a saved record table into a fresh summary

All failures exit nonzero with a one-line JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import Scenario, load_scenario
from .harness import (
    METHODS,
    VARIANTS,
    default_method_list,
    emit_report,
    load_records,
    run_campaign,
    summarize,
    trial_seed,
)
from .simulator import default_scenario, measurement_rows, synthesize, write_measurement_csv


def parse_methods(spec: str) -> list[tuple[str, str]]:
    """Parse a method list like ``joint:init,toa`` (``all`` = every pair).

    A bare method name selects all three variants for that method.
    """
    pairs: list[tuple[str, str]] = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "all":
            pairs.extend(default_method_list())
        elif ":" in token:
            method, variant = token.split(":", 1)
            if method not in METHODS or variant not in VARIANTS:
                raise ValueError(f"unknown method token {token!r}")
            pairs.append((method, variant))
        else:
            if token not in METHODS:
                raise ValueError(f"unknown method token {token!r}")
            pairs.extend((token, variant) for variant in VARIANTS)
    if not pairs:
        raise ValueError("empty method list")
    seen = set()
    unique = []
    for pair in pairs:
        if pair not in seen:
            seen.add(pair)
            unique.append(pair)
    return unique


def _load_or_default(path: str | None) -> Scenario:
    if path is None:
        return default_scenario()
    return load_scenario(path)


def _cmd_simulate(args) -> int:
    scenario = _load_or_default(args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    trial_id = 0
    for point_index in range(len(scenario.ground_truth_points)):
        for _rep in range(args.trials):
            seed = trial_seed(args.seed, trial_id)
            toa, aoa, truth = synthesize(
                scenario, scenario.ground_truth_points[point_index], seed
            )
            rows.extend(measurement_rows(trial_id, toa, aoa, truth))
            trial_id += 1
    path = out_dir / "measurements.csv"
    write_measurement_csv(path, rows)
    print(f"wrote {path} ({trial_id} trials)")
    return 0


def _cmd_evaluate(args) -> int:
    scenario = _load_or_default(args.scenario)
    methods = parse_methods(args.methods)
    summary, records = run_campaign(
        scenario,
        trials_per_point=args.trials,
        campaign_seed=args.seed,
        methods=methods,
        workers=args.workers,
    )
    paths = emit_report(summary, records, args.out, fmt=args.format)
    print(f"wrote {paths['records']} and {paths['summary']}")
    return 0


def _cmd_report(args) -> int:
    records = load_records(args.records)
    central = None
    if args.scenario is not None:
        from .harness import central_point_indices

        central = central_point_indices(load_scenario(args.scenario))
    summary = summarize(records, central_indices=central)
    paths = emit_report(summary, records, args.out, fmt=args.format)
    print(f"wrote {paths['records']} and {paths['summary']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustloc",
        description="Robust ToA/AoA indoor positioning simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="dump raw synthetic measurements as CSV")
    simulate.add_argument("--scenario", help="scenario JSON (default: built-in layout)")
    simulate.add_argument("--trials", type=int, default=1, help="trials per ground-truth point")
    simulate.add_argument("--seed", type=int, default=0, help="campaign seed")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.set_defaults(func=_cmd_simulate)

    evaluate = sub.add_parser("evaluate", help="run a Monte Carlo campaign")
    evaluate.add_argument("--scenario", help="scenario JSON (default: built-in layout)")
    evaluate.add_argument("--trials", type=int, default=100, help="trials per ground-truth point")
    evaluate.add_argument("--seed", type=int, default=0, help="campaign seed")
    evaluate.add_argument("--methods", default="all", help="e.g. 'joint:init,joint:no_init_1'")
    evaluate.add_argument("--out", required=True, help="output directory")
    evaluate.add_argument("--format", choices=("csv", "json"), default="csv")
    evaluate.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    evaluate.set_defaults(func=_cmd_evaluate)

    report = sub.add_parser("report", help="re-aggregate saved records")
    report.add_argument("--records", required=True, help="records.csv or records.json")
    report.add_argument("--scenario", help="scenario JSON for the central-area definition")
    report.add_argument("--out", required=True, help="output directory")
    report.add_argument("--format", choices=("csv", "json"), default="csv")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
