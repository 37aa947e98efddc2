"""Command line entry point: ``ddtau <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import EXPERIMENTS, ConfigError, default_config, load_config, run_experiment
from .report import FORMATS, emit_report

log = logging.getLogger("ddtau")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (defaults built in per experiment)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=FORMATS, default="csv", help="extra output besides CSV")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ddtau", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            config = load_config(args.config)
            if config.experiment != args.experiment:
                raise ConfigError(f"config is for {config.experiment!r}, not {args.experiment!r}")
        else:
            config = default_config(args.experiment)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("seed must fit in an unsigned 64-bit integer")
            config.seed = args.seed
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or config.out_dir
    log.info("running %s", config.experiment)
    result = run_experiment(config, threads=max(1, args.threads))
    paths = emit_report(result, out, formats=(args.format,))
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {config.experiment}: {name}")
    for p in paths:
        log.info("wrote %s", p)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
