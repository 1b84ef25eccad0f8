"""Run the acceptance criteria (all, or those given) and write their results as JSON."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from bxi.acceptance import run_all, to_json


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("numbers", nargs="*", type=int, help="criterion numbers (default: all)")
    p.add_argument("--output", type=Path, default=Path("results/acceptance.json"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    results = run_all(set(args.numbers) or None)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_text(to_json(results) + "\n")
    print(f"{sum(c.passed for c in results)}/{len(results)} criteria passed")


if __name__ == "__main__":
    main()
