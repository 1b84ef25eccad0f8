"""Command line: ``run``, ``report`` and ``verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import ConfigError, ExperimentConfig, build_report, run
from .verification import SUITES

EXIT_OK, EXIT_ERROR, EXIT_CHECKS = 0, 1, 2

log = logging.getLogger("bxi")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bxi", description="Brownian intersection exponent experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--output-dir", type=Path, default=None, help="overrides output_dir in the config")
    r.add_argument("--workers", type=int, default=None, help="overrides workers in the config")
    rep = sub.add_parser("report", help="merge results.csv files and refit exponents")
    rep.add_argument("csv", nargs="*", type=Path)
    rep.add_argument("--output", type=Path, default=None)
    v = sub.add_parser("verify", help="run a fast check suite")
    v.add_argument("--suite", required=True, choices=sorted(SUITES))
    v.add_argument("--seed", type=int, default=0)
    return p


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = run(cfg, args.workers, args.output_dir)
    for c in out.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
    print(f"status: {out.status} ({out.excluded}/{out.trials} excluded)")
    return EXIT_OK if out.status == "PASS" else EXIT_CHECKS


def _cmd_report(args) -> int:
    text, _ = build_report(args.csv)
    if args.output:
        args.output.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(args) -> int:
    checks = SUITES[args.suite](seed=args.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return {"run": _cmd_run, "report": _cmd_report, "verify": _cmd_verify}[args.command](args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
