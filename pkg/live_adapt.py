"""
live-adapt command line

    python live_adapt.py --scenario attitude --anchored on --steps 15 --seed 0 --out runs/live
    python live_adapt.py --swap-timing --out runs/live

Pretrains an agent on the attitude sim, flies its real twin and adapts it
live; writes flight logs, the adaptation CSV, FFT spectra and a summary JSON.
--swap-timing instead runs the threaded drone and checks swap atomicity and
tick timing while models are pushed at it.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import config
from experiments import ExperimentSpec, attitude_pretrainer, resolve
from live.realtime import swap_timing_harness
from live.session import adaptation_experiment
from swannlab import parse_overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Live adaptation of a pretrained flight controller")
    parser.add_argument("--scenario", choices=["attitude"], default="attitude")
    parser.add_argument("--anchored", choices=["on", "off"], default="on")
    parser.add_argument("--steps", type=int, help="Adaptation steps (default from config)")
    parser.add_argument("--seed", type=int, action="append", help="Seed (repeat for several, default 0)")
    parser.add_argument("--out", default="runs/live", help="Output directory")
    parser.add_argument("--config", help="Key-value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override one setting")
    parser.add_argument("--drop-prob", type=float, default=0.0, help="Per-frame loss on both link directions")
    parser.add_argument("--corrupt-prob", type=float, default=0.0, help="Per-byte corruption on both directions")
    parser.add_argument("--swap-timing", action="store_true", help="Run the threaded swap timing harness instead")
    parser.add_argument("--rate-hz", type=float, default=500.0, help="Control rate of the timing harness")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging(args.verbose)
    seeds = args.seed or [0]
    overrides = parse_overrides(args.set)
    if args.steps is not None:
        overrides["adapt.steps"] = str(args.steps)
    try:
        res = resolve(ExperimentSpec("table1-adaptation", seeds=seeds, overrides=overrides, config_path=args.config))
    except config.ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = res.to_dict()
    digest = config.config_hash(resolved)
    (out / "resolved_config.json").write_text(json.dumps({"config_hash": digest, "config": resolved}, indent=2))
    pretrain = attitude_pretrainer(res, out)

    if args.swap_timing:
        bundle, _ = pretrain(seeds[0])
        report = swap_timing_harness(bundle.policy, res.attitude, rate_hz=args.rate_hz, settings=res.link,
                                     seed=seeds[0], stochastic=bundle.stochastic)
        report["config_hash"] = digest
        (out / "swap_timing.json").write_text(json.dumps(report, indent=2))
        print(json.dumps({k: report[k] for k in ("success", "ticks", "max_deviation_ticks", "ks_pvalue",
                                                 "versions_ok", "errors")}, indent=2))
        return 0 if report["success"] else 1

    settings = dataclasses.replace(res.adapt, anchored=args.anchored == "on")
    report = adaptation_experiment(seeds, settings.anchored, pretrain, res.attitude, settings, res.link,
                                   drop_prob=args.drop_prob, corrupt_prob=args.corrupt_prob,
                                   out_dir=out, config_hash=digest)
    summary = report["summary"]
    print(f"\nLive adaptation ({'anchored' if settings.anchored else 'unanchored'}, seeds {seeds})\n")
    print(f"{'metric':<8} {'before':>20} {'after':>20} {'ratio':>8}")
    for metric in ("mae", "sm", "power"):
        before = f"{summary[f'{metric}_before_mean']:.4g} +- {summary[f'{metric}_before_std']:.2g}"
        after = f"{summary[f'{metric}_after_mean']:.4g} +- {summary[f'{metric}_after_std']:.2g}"
        print(f"{metric:<8} {before:>20} {after:>20} {summary[f'{metric}_ratio']:>8.3f}")
    print(f"\ndiverged seeds: {summary['diverged']}, crashed seeds: {summary['crashed']}")
    print(f"Saved outputs to {out}\n")
    return 0 if report["success"] else 1


if __name__ == "__main__":
    sys.exit(main())
