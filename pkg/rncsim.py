"""
rncsim - Command-line entry point

  simulate      run a config's λ_sum sweep through the simulator and the estimator
  analyze       estimator only, no simulation
  special-case  one-shot reproduction of the three-pair bottleneck scenario
"""

from dotenv import load_dotenv
load_dotenv()  # Load .env file

import argparse
import os
import sys
from pathlib import Path

from harness import ConfigError, ExperimentError, emit_report, load_config, run_experiment
from version import BUILD_TAG

SPECIAL_CASE_CONFIG = Path(__file__).parent / "config" / "experiments" / "special_case.json"
DEFAULT_OUT = os.getenv("RNCSIM_OUTPUT_DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rncsim",
        description="Delay of random-network-coded broadcast: slotted simulation vs. analytical estimate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Simulate and estimate every grid cell.")
    simulate.add_argument("--config", required=True, help="Experiment JSON file.")
    simulate.add_argument("--seed", type=int, help="Run this single seed instead of the config's list.")
    simulate.add_argument("--out", default=DEFAULT_OUT,
                          help="Report directory (default: config value or $RNCSIM_OUTPUT_DIR).")
    simulate.add_argument("--arrival-policy", choices=["drop", "defer"])
    simulate.add_argument("--topology-file", help="Edge-list file replacing the config's topology.")
    simulate.add_argument("--horizon", type=int, help="Slots per grid cell.")
    simulate.add_argument("--workers", type=int, help="Worker processes for grid cells.")
    simulate.add_argument("--quiet", action="store_true", help="Only print errors.")

    analyze = sub.add_parser("analyze", help="Analytical estimate only.")
    analyze.add_argument("--config", required=True, help="Experiment JSON file.")
    analyze.add_argument("--out", required=True, help="Report directory.")
    analyze.add_argument("--topology-file", help="Edge-list file replacing the config's topology.")
    analyze.add_argument("--quiet", action="store_true", help="Only print errors.")

    special = sub.add_parser("special-case", help="Reproduce the three-pair bottleneck scenario.")
    special.add_argument("--out", required=True, help="Report directory.")
    special.add_argument("--horizon", type=int, help="Slots per grid cell.")
    special.add_argument("--seed", type=int)
    special.add_argument("--quiet", action="store_true", help="Only print errors.")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = not args.quiet
    if verbose:
        print(f"🔧 Build: {BUILD_TAG}")

    try:
        if args.command == "simulate":
            config = load_config(args.config, {
                "seed": args.seed,
                "out": args.out,
                "arrival_policy": args.arrival_policy,
                "topology_file": args.topology_file,
                "horizon": args.horizon,
                "workers": args.workers,
            })
            result = run_experiment(config, simulate=True, verbose=verbose)
        elif args.command == "analyze":
            config = load_config(args.config, {"out": args.out, "topology_file": args.topology_file})
            result = run_experiment(config, simulate=False, verbose=verbose)
        else:
            config = load_config(SPECIAL_CASE_CONFIG, {
                "out": args.out, "horizon": args.horizon, "seed": args.seed,
            })
            result = run_experiment(config, simulate=True, verbose=verbose)
        emit_report(result, config.output_dir, verbose=verbose)
    except (ConfigError, ExperimentError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, LookupError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
