"""
swannlab command line

    python swannlab.py run fig2-composition --seed 0 --seed 1 --out runs/
    python swannlab.py run table1-adaptation --config lab.cfg --set adapt.steps=5
    python swannlab.py verify runs/
"""

import argparse
import json
import sys
from typing import Dict, List, Optional

import config
from experiments import EXPERIMENTS, ExperimentSpec, run_experiment, verify


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    """KEY=VALUE strings to a settings dict"""
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise config.ConfigError(f"Expected KEY=VALUE, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Live-adaptation experiment harness")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--seed", type=int, action="append", help="Seed (repeat for several; default per experiment)")
    run.add_argument("--out", default="runs", help="Output root (default: runs)")
    run.add_argument("--config", help="Key-value config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one setting")

    check = sub.add_parser("verify", help="Re-check acceptance thresholds against emitted outputs")
    check.add_argument("run_dir")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging(args.verbose)

    if args.command == "verify":
        result = verify(args.run_dir)
        for check in result["checks"]:
            mark = "PASS" if check["passed"] else "FAIL"
            print(f"{mark}  {check['name']:<30} {check['detail']}")
        for error in result["errors"]:
            print(f"ERROR {error}")
        print(f"\nWrote {args.run_dir}/verify.json")
        return 0 if result["success"] else 1

    try:
        spec = ExperimentSpec(args.experiment, seeds=args.seed, overrides=parse_overrides(args.set),
                              config_path=args.config)
        result = run_experiment(spec, args.out)
    except config.ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return 2
    print(json.dumps({k: result[k] for k in ("success", "experiment", "out_dir", "config_hash", "errors")}, indent=2))
    return 0 if result["success"] else 1


if __name__ == "__main__":
    sys.exit(main())
