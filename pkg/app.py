"""
Energy-Based Prioritization Benchmark - Main Entry Point

Command-line front end for training HER agents with uniform, energy-based
or TD-error prioritized replay, analyzing exported traces offline and
comparing runs by sample efficiency.

    python app.py train --env PlanarPush --strategy ebp-her --seeds 0 1 2 --out runs/ebp
    python app.py replay-analyze --trace runs/ebp/trace_seed0.jsonl --e-tran-max 0.5
    python app.py compare --runs runs/uniform runs/ebp
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

# Add the project root for imports when run from elsewhere
current_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, current_dir)

from backend.config import load_run_config
from backend.energy import EnergyParams
from backend.harness import train
from backend.metrics import compare, median_ratio
from backend.trace_loader import analyze_trace
from utils.constants import ENV_NAMES, STRATEGIES, TIMESTEP
from utils.errors import EbpError
from utils.helpers import configure_logging, export_to_csv

logger = logging.getLogger("app")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Energy-based prioritization for hindsight experience replay")
    parser.add_argument("--log-level", default="INFO", help="Logging level (DEBUG, INFO, WARNING)")
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="Train one strategy on one environment")
    train_cmd.add_argument("--env", choices=ENV_NAMES, help="Desk environment")
    train_cmd.add_argument("--strategy", choices=STRATEGIES, help="Replay strategy")
    train_cmd.add_argument("--seeds", type=int, nargs="+", help="Seeds to run")
    train_cmd.add_argument("--epochs", type=int, help="Training epochs per seed")
    train_cmd.add_argument("--config", help="key = value config file; flags override it")
    train_cmd.add_argument("--out", required=True, help="Output directory for CSV, logs and checkpoints")

    analyze_cmd = commands.add_parser("replay-analyze", help="Recompute trajectory energies of a trace")
    analyze_cmd.add_argument("--trace", required=True, help="JSON-lines trace file")
    analyze_cmd.add_argument("--e-tran-max", type=float, required=True, help="Transition energy clip")
    analyze_cmd.add_argument("--dt", type=float, default=TIMESTEP, help="Seconds between trace records")
    analyze_cmd.add_argument("--out", help="Optional CSV destination")

    compare_cmd = commands.add_parser("compare", help="Sample-efficiency ratios of baselines against ebp-her")
    compare_cmd.add_argument("--runs", nargs="+", required=True, help="Run directories written by train")
    compare_cmd.add_argument("--out", help="Optional CSV destination")
    return parser


def run_train(args: argparse.Namespace) -> None:
    config = load_run_config(args.config, env=args.env, strategy=args.strategy,
                             seeds=args.seeds, epochs=args.epochs)
    train(config, args.out)


def run_replay_analyze(args: argparse.Namespace) -> None:
    table = analyze_trace(args.trace, EnergyParams(dt=args.dt, e_tran_max=args.e_tran_max))
    if args.out:
        export_to_csv(table, args.out)
    print(table.to_string(index=False))


def run_compare(args: argparse.Namespace) -> None:
    table = compare(args.runs, args.out)
    print(table.to_string(index=False))
    for baseline, ratio in median_ratio(table).items():
        print(f"median efficiency ratio vs {baseline}: {ratio:.2f}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "train":
            run_train(args)
        elif args.command == "replay-analyze":
            run_replay_analyze(args)
        elif args.command == "compare":
            run_compare(args)
    except (EbpError, ValueError, OSError) as e:
        logger.error(f"✗ {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
