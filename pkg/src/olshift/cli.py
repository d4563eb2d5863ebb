"""Command-line entry points.

``olshift run --config cfg.json [--seed N --out DIR --algo NAME --shift NAME]``
runs an experiment from a JSON config and writes rounds/summary/manifest
files.  ``olshift verify --suite NAME`` runs a verification oracle suite and
writes its report next to a human-readable summary.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .core import (
    DegenerateConfusionError,
    InvalidInputError,
    NumericalError,
    ParseError,
    SchemaError,
)
from .harness import ALGORITHMS, RunConfig, run_many, write_outputs
from .shiftsim import SCHEDULE_KINDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

VERIFY_SUITES = ("projection", "unbiasedness", "bias-decay", "replay", "all")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="olshift",
        description="Online label-shift benchmark harness and verification oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the JSON run config")
    run_p.add_argument("--seed", type=int, default=None, help="override: single seed")
    run_p.add_argument("--out", default=None, help="override: output directory")
    run_p.add_argument("--algo", default=None, choices=ALGORITHMS,
                       help="override: algorithm id")
    run_p.add_argument("--shift", default=None, choices=SCHEDULE_KINDS,
                       help="override: shift schedule kind")
    run_p.add_argument("--serial", action="store_true",
                       help="disable parallel multi-seed execution")

    ver_p = sub.add_parser("verify", help="run a verification oracle suite")
    ver_p.add_argument("--suite", required=True, choices=VERIFY_SUITES)
    ver_p.add_argument("--seed", type=int, default=0)
    ver_p.add_argument("--out", default=None, help="directory for the CSV report")
    return parser


def _load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc}") from None
    return RunConfig.from_dict(raw)


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.algo is not None:
        overrides["algorithm"] = args.algo
    if args.shift is not None:
        overrides["schedule_kind"] = args.shift
    if overrides:
        config = RunConfig.from_dict({**config.to_dict(), **overrides})
    results = run_many(config, parallel=not args.serial)
    for res in results:
        print(
            f"seed {res.seed}: {config.algorithm} on {config.schedule_kind} -> "
            f"average error {res.summary['final_avg_error']:.4f} "
            f"(V_T = {res.summary['variation']:.2f}, "
            f"{res.summary['wall_time_s']:.1f}s)"
        )
    if config.out_dir:
        written = write_outputs(results, config)
        for name in sorted(written):
            print(f"wrote {written[name]}")
    return EXIT_OK


def _verify_reports(suite: str, seed: int):
    from . import verify

    reports = []
    if suite in ("projection", "all"):
        reports.append(verify.projection_oracle_suite(seed=seed))
    if suite in ("unbiasedness", "all"):
        from .core import PriorVector
        from .harness import RunConfig as _RC, prepare_offline

        off = prepare_offline(_RC(algorithm="fix", seeds=(seed,)), seed)
        from .shiftsim import default_gaussian_model

        model = default_gaussian_model()
        exact_c = verify.exact_gaussian_confusion(off.f0, model)
        reports.append(
            verify.monte_carlo_unbiasedness(
                off.f0, off.f0, PriorVector([0.5, 0.3, 0.2]), model,
                exact_c, off.provider, n_trials=10000, batch_size=10, seed=seed,
            )
        )
    if suite in ("bias-decay", "all"):
        reports.append(verify.bias_decay_experiment((100, 1000, 10000), seed=seed))
    if suite in ("replay", "all"):
        reports.append(verify.replay_small_instance(verify.ReplayConfig(seed=seed)))
        reports.append(
            verify.replay_small_instance(
                verify.ReplayConfig(
                    variant="atlas_ada", hint="periodic", fixed_eps=None, seed=seed
                )
            )
        )
    return reports


def _cmd_verify(args) -> int:
    reports = _verify_reports(args.suite, args.seed)
    for rep in reports:
        print(rep.summary_line())
        if rep.notes:
            print(f"       note: {rep.notes}")
        for failure in rep.failures[:5]:
            print(f"       failure: {failure}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"verify_{args.suite}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "passed", "statistics", "tolerances", "notes"])
            for rep in reports:
                writer.writerow(
                    [rep.name, rep.passed, json.dumps(rep.statistics),
                     json.dumps(rep.tolerances), rep.notes]
                )
        print(f"wrote {path}")
    return EXIT_OK if all(r.passed is not False for r in reports) else EXIT_NUMERICAL


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_verify(args)
    except (SchemaError, ParseError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateConfusionError, NumericalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
