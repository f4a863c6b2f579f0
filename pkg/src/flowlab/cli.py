"""Command-line front end: one subcommand per experiment scenario.

Usage::

    flowlab <scenario> [--config FILE] [--out DIR] [--seed-count N]
                       [--override key=value ...]

``--config`` loads a JSON document with ExperimentConfig fields; omitted
fields fall back to the scenario defaults.  ``--override`` patches single
fields (values parsed as JSON, falling back to plain strings).  Exit status
is 0 iff every property verdict passed, 1 on a failed verdict, 2 on an
invalid config.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import SCENARIOS, ConfigError, ExperimentConfig, default_config, run


def _parse_override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowlab",
        description="Property-based experiments for guided flow-ODE sampling.",
    )
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", help="JSON config file (fields override defaults)")
        p.add_argument("--out", help="output directory for report and CSVs")
        p.add_argument("--seed-count", type=int, help="number of seeds to run")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            type=_parse_override,
            metavar="KEY=VALUE",
            help="patch a single config field (repeatable)",
        )
    return parser


def load_config(args):
    data = default_config(args.scenario).to_dict()
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    data["scenario"] = args.scenario
    for key, value in args.override:
        if key not in data:
            raise ConfigError([f"{key}: unknown field"])
        data[key] = value
    if args.out:
        data["out_dir"] = args.out
    if args.seed_count is not None:
        data["seed_count"] = args.seed_count
    return ExperimentConfig.from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        report = run(config)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    for name, ok in report.verdicts.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {report.scenario}: {name}")
    print(f"report: {config.out_dir}/report.json")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
