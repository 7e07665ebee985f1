"""Command-line entry point: ``anderson-lab <experiment> [--config FILE] [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure budget
exceeded, 1 anything else raised by the package (for example unreadable
report files in ``aggregate``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import AndersonLabError, ConfigError, FailureBudgetExceeded
from .ensemble.config import EXPERIMENTS, config_schema, load_config, parse_config
from .ensemble.report import aggregate, load_report
from .ensemble.runner import run_experiment

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anderson-lab",
                                     description="Monte Carlo experiments on the 1D Anderson model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=_seed, help="master seed (overrides config)")
        p.add_argument("--realizations", type=int, help="number of realizations M")
        p.add_argument("--size", type=int, help="box size |Lambda|")
        p.add_argument("--out", help="JSON report path")
        p.add_argument("--csv", help="per-sample CSV path")
        p.add_argument("--threads", type=int, help="worker processes")
        p.add_argument("--print", dest="print_report", action="store_true",
                       help="write the report to stdout as well")
    agg = sub.add_parser("aggregate", help="merge reports of one experiment")
    agg.add_argument("reports", nargs="+")
    agg.add_argument("--out", required=True)
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def config_from_args(args: argparse.Namespace):
    data = load_config(args.config) if args.config else {}
    if data.get("experiment", args.command) != args.command:
        raise ConfigError(f"config is for experiment {data['experiment']!r}, not {args.command!r}")
    data["experiment"] = args.command
    overrides = {
        "master_seed": args.seed,
        "realizations": args.realizations,
        "threads": args.threads,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.size is not None:
        data["model"] = {**data.get("model", {}), "size": args.size}
    out = {"path": args.out, "csv": args.csv}
    if any(v is not None for v in out.values()):
        data["output"] = {**data.get("output", {}), **{k: v for k, v in out.items() if v is not None}}
    return parse_config(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "schema":
            print(json.dumps(config_schema(), indent=1))
            return EXIT_OK
        if args.command == "aggregate":
            aggregate([load_report(p) for p in args.reports]).save(args.out)
            return EXIT_OK
        cfg = config_from_args(args)
        report = run_experiment(cfg)
        if args.print_report or not cfg.output.path:
            print(report.to_json())
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FailureBudgetExceeded as exc:
        print(f"numerical failure budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (AndersonLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
