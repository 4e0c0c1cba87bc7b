"""Command line entry point: ``flowerreach simulate|batch|report``.

Exit codes: 0 when a simulated mission reaches Done or a batch completes,
1 when a mission ends Failed or Diverged, 2 for bad input.
"""
from __future__ import annotations

import argparse
import logging
import re
import sys

from .core import ValidationError
from .harness import report, run_batch, run_trial
from .scenario import ScenarioParseError, load_scenario

EXIT_OK, EXIT_MISSION, EXIT_INPUT = 0, 1, 2


def parse_seed_range(text: str) -> list[int]:
    """``"3..7"`` -> [3, 4, 5, 6, 7]; a single integer is a one-seed range."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected n..m, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) is not None else lo
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowerreach",
                                     description="Aerial manipulator standoff simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one trial and write its logs")
    sim.add_argument("--scenario", required=True, help="scenario JSON file or bundled name")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--duration", type=float, default=None,
                     help="override the mission timeout (s)")

    batch = sub.add_parser("batch", help="run one trial per seed and aggregate")
    batch.add_argument("--scenario", required=True)
    batch.add_argument("--seeds", required=True, type=parse_seed_range, help="range n..m")
    batch.add_argument("--out", required=True)
    batch.add_argument("--duration", type=float, default=None)
    batch.add_argument("--jobs", type=int, default=1, help="worker processes")

    rep = sub.add_parser("report", help="summarize a batch directory")
    rep.add_argument("--in", dest="in_dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            sc = load_scenario(args.scenario)
            result = run_trial(sc, args.seed, out_dir=args.out, duration=args.duration)
            print(f"seed {result.seed}: {result.outcome}  time to done {result.time_to_done:.2f} s  "
                  f"final error {result.final_error:.4f} m  log {result.log_path}")
            return EXIT_OK if result.done else EXIT_MISSION
        if args.command == "batch":
            sc = load_scenario(args.scenario)
            rep = run_batch(sc, args.seeds, out_dir=args.out, jobs=args.jobs,
                            duration=args.duration)
            print(f"{len(rep.trials)} trials  success rate {rep.success_rate:.2f}  "
                  f"median time to done {rep.median_time_to_done:.2f} s")
            return EXIT_OK
        summary = report(args.in_dir)
        print(summary.text)
        return EXIT_OK
    except (ScenarioParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
