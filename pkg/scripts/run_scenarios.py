"""Run the calibrated scenarios in ``configs/`` through the command-line entry point.

Usage::

    python scripts/run_scenarios.py                 # all scenarios
    python scripts/run_scenarios.py nw_clt decay    # a selection
    python scripts/run_scenarios.py --out results --threads 4
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from lsrf.cli import main as lsrf_main

HERE = Path(__file__).resolve().parent

COMMANDS = {
    "nw_rate": ["experiment", "rate"],
    "backfit_rate": ["experiment", "rate"],
    "nw_clt": ["experiment", "clt"],
    "additive_clt": ["experiment", "additive"],
    "decay": ["experiment", "mn-dep"],
    "ci_coverage": ["ci"],
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help=f"scenarios to run (default: all of {', '.join(sorted(COMMANDS))})")
    ap.add_argument("--out", default="results", help="output root; one sub-directory per scenario")
    ap.add_argument("--threads", type=int, help="worker processes")
    args = ap.parse_args(argv)
    unknown = sorted(set(args.names) - set(COMMANDS))
    if unknown:
        ap.error(f"unknown scenarios: {', '.join(unknown)}")
    status = 0
    for name in args.names or sorted(COMMANDS):
        out = Path(args.out) / name
        cmd = COMMANDS[name] + ["--config", str(HERE / "configs" / f"{name}.json"), "--out", str(out)]
        if args.threads:
            cmd += ["--threads", str(args.threads)]
        code = lsrf_main(cmd)
        print(f"{name}: exit {code}")
        for summary in sorted(out.glob("*_summary.txt")):
            print(summary.read_text())
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
