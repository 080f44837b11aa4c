"""Command line entry point: ``equivar-nehari <subcommand> --config <path>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .census import EXPERIMENTS, ExperimentConfig

log = logging.getLogger("equivar_nehari")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equivar-nehari",
                                     description="Equivariant sign-changing solutions on symmetric surfaces.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="flat key = value config file")
        cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override one config key (repeatable)")
        cmd.add_argument("--csv", type=Path, help="CSV output path (overrides output_csv)")
        cmd.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> ExperimentConfig:
    mapping: dict[str, str] = {}
    if args.config is not None:
        base = ExperimentConfig.from_file(args.config)
        mapping = {k: v for k, v in vars(base).items()}
    for item in args.set:
        key, _, value = item.partition("=")
        mapping[key.strip()] = value.strip()
    if args.csv is not None:
        mapping["output_csv"] = str(args.csv)
    return ExperimentConfig.from_mapping(mapping)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        report = EXPERIMENTS[args.command](config)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime error
        print(f"error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    text = report.text()
    sys.stdout.write(text)
    if config.output_report:
        Path(config.output_report).write_text(text)
    if config.output_csv:
        Path(config.output_csv).write_text(report.csv())
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
