"""Command line: ``vechfl run`` and ``vechfl compare``.

Exit codes: 0 ok, 2 bad config or arguments, 3 some task hit the round cap
(partial outputs are still written), 4 reports cannot be compared.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import SIM_MODES, ConfigError
from .harness import (EXIT_CONFIG, InstanceMismatch, compare, expand_schedulers, format_table, load_run_config,
                      log_level_from_env, run_experiment)

EXIT_COMPARE = 4


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vechfl", description="Multi-task hierarchical FL scheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run schedulers to convergence and write metric files")
    run.add_argument("--config", help="JSON config, full or {\"generator\": {...}}; default: generated instance")
    run.add_argument("--scheduler", default="heart", help="heart|tsso|tspso|tsga|tsgd, comma list, or all")
    run.add_argument("--seed", type=_u64, default=None, help="overrides the config's seed")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--vehicles", type=int, default=None, help="vehicle count (generator configs)")
    run.add_argument("--tasks", type=int, choices=(4, 9), default=None, help="task count (generator configs)")
    run.add_argument("--mode", choices=SIM_MODES, default=None, help="cloud aggregation mode")
    run.add_argument("--events", action="store_true", help="also write events.jsonl")

    cmp_ = sub.add_parser("compare", help="paired deltas and win rates between run directories")
    cmp_.add_argument("reports", nargs="+", help="run directories (searched recursively for run.json)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=log_level_from_env(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    if args.command == "run":
        try:
            cfg = load_run_config(args.config, seed=args.seed, n_vehicles=args.vehicles, n_tasks=args.tasks)
            kinds = expand_schedulers(args.scheduler)
            outcome = run_experiment(cfg, kinds, args.out, mode=args.mode, log_events=args.events)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for r in outcome.results:
            print(f"{r.scheduler}\trounds={len(r.rounds)}\ttime_to_target={r.time_to_target:.6g}"
                  f"\tunconverged={r.unconverged}")
        return outcome.exit_code
    try:
        rows = compare(args.reports)
    except (InstanceMismatch, ValueError, FileNotFoundError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_COMPARE
    sys.stdout.write(format_table(rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
