"""
Experiment Runner
Maps each experiment id to a deterministic pipeline, writes its CSV/JSON
outputs together with the resolved config, and re-checks acceptance
thresholds against those outputs.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

import config
from envs.attitude import AttitudeConfig, AttitudeEnv
from envs.pendulum import PendulumConfig, PendulumEnv, wrap_angle
from envs.trace_log import PENDULUM_ACTION, PENDULUM_STATE, TrajectoryRecorder
from envs.twin import load_attitude_config, load_pendulum_config, make_real_twin
from live.ground import AdaptSettings, load_adapt_settings
from live.session import adaptation_experiment
from rl.agent import AgentBundle, clone_bundle
from rl.buffer import ReplayBuffer
from rl.objectives import ObjectiveWeights
from rl.sweep import SWEEP_GRIDS, correlation_report, format_correlation, hyperparameter_sweep
from rl.trainer import TrainConfig, TrainingDiverged, load_objective_weights, load_train_config, rollout, train
from swaplink.channel import LinkSettings, load_link_settings

logger = structlog.get_logger(__name__)

EXPERIMENTS = ("fig2-composition", "fig3-pendulum-anchors", "fig8-algo-anchors", "fig5-forgetting",
               "table1-adaptation", "appendixB-sweep")

PENDULUM_TRAIN_DEG = 10.0
HIGH_BAND_FRACTION = 0.2


@dataclass
class HarnessSettings:
    """
    Attributes:
        attitude_steps: Sim training steps per attitude agent
        pendulum_steps: Training steps per pendulum agent on the training target
        pendulum_adapt_steps: Fine-tuning steps on the flipped-target twin
        composition_seeds: Paired seeds per arm of the composition study
        pendulum_seeds: Seeds per algorithm of the pendulum anchor study
        anchor_algos: Algorithms of the multi-algorithm anchor study
        adaptation_seeds: Seeds per arm of the live adaptation study
        adaptation_algo: Algorithm pretrained for live adaptation
        rollouts: Random-start rollouts per pendulum agent
        settle_window_s: Trailing window used for settle angle and speed
        sweep_algos: Algorithms of the hyperparameter sweep
        sweep_samples: Grid samples per algorithm
        sweep_reward_mode: Attitude reward used by the sweep
    """

    attitude_steps: int = 300_000
    pendulum_steps: int = 100_000
    pendulum_adapt_steps: int = 20_000
    composition_seeds: int = 6
    pendulum_seeds: int = 5
    anchor_algos: Tuple[str, ...] = ("ddpg", "sac", "td3")
    adaptation_seeds: int = 5
    adaptation_algo: str = "ddpgx"
    rollouts: int = 5
    settle_window_s: float = 2.0
    sweep_algos: Tuple[str, ...] = ("ddpg", "ddpgx", "sac", "td3")
    sweep_samples: int = 10
    sweep_reward_mode: str = "tracking"


@dataclass
class ExperimentSpec:
    experiment_id: str
    seeds: Optional[List[int]] = None
    overrides: Dict[str, str] = field(default_factory=dict)
    config_path: Optional[str] = None


@dataclass
class Resolved:
    attitude: AttitudeConfig
    pendulum: PendulumConfig
    train: TrainConfig
    objective: ObjectiveWeights
    adapt: AdaptSettings
    link: LinkSettings
    harness: HarnessSettings

    def to_dict(self) -> Dict:
        return {f.name: config.to_dict(getattr(self, f.name)) for f in dataclasses.fields(self)}


def resolve(spec: ExperimentSpec) -> Resolved:
    values = config.load_values(spec.config_path, spec.overrides)
    return Resolved(
        attitude=load_attitude_config(values),
        pendulum=load_pendulum_config(values),
        train=load_train_config(values),
        objective=load_objective_weights(values),
        adapt=load_adapt_settings(values),
        link=load_link_settings(values),
        harness=config.build(HarnessSettings, values, "harness"),
    )


def _seeds(spec: ExperimentSpec, count: int) -> List[int]:
    if spec.seeds:
        return list(spec.seeds)
    return list(range(count))


def _write_csv(frame: pd.DataFrame, path: Path, config_hash: str) -> Path:
    frame = frame.copy()
    frame["config_hash"] = config_hash
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def _write_json(payload: Dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_json_default))
    return path


def _json_default(value):
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.floating):
        return float(value)
    return str(value)


# ------------------------------- Composition -------------------------------

def fig2_composition(res: Resolved, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    """Paired linear-composition vs. multiplicative-composition training on the attitude sim"""
    cfg = dataclasses.replace(res.train, total_steps=res.harness.attitude_steps)
    curves = []
    for arm in ("ddpg_linear_caps", "ddpgx"):
        for seed in seeds:
            result = train(arm, False, AttitudeEnv(res.attitude, "aggressive"), cfg, seed, weights=res.objective,
                           dump_dir=out / "diverged" / f"{arm}_{seed}")
            metrics = result.metrics.copy()
            metrics.insert(0, "seed", seed)
            metrics.insert(0, "arm", arm)
            curves.append(metrics)
    table = pd.concat(curves, ignore_index=True)
    _write_csv(table, out / "curves.csv", config_hash)

    bands = table.groupby(["arm", "step"]).agg(
        reward_mean=("eval_reward", "mean"), reward_std=("eval_reward", lambda s: s.std(ddof=0)),
        r_track_mean=("r_track", "mean"), r_track_std=("r_track", lambda s: s.std(ddof=0)),
        r_smooth_mean=("r_smooth", "mean"), r_smooth_std=("r_smooth", lambda s: s.std(ddof=0)),
        r_act_mean=("r_act", "mean"), r_act_std=("r_act", lambda s: s.std(ddof=0)),
        mae_mean=("mae", "mean"), sm_mean=("sm", "mean"), power_mean=("power", "mean"),
        f_t_mean=("f_t", "mean"), f_s_mean=("f_s", "mean"), f_a_mean=("f_a", "mean"),
    ).reset_index()
    _write_csv(bands, out / "bands.csv", config_hash)

    final = table[table["step"] == table["step"].max()]
    summary = {}
    for arm, group in final.groupby("arm"):
        summary[f"{arm}_end_mean"] = float(group["eval_reward"].mean())
        summary[f"{arm}_end_std"] = float(group["eval_reward"].std(ddof=0))
    return summary


# ------------------------------- Pendulum anchors -------------------------------

def settle_stats(bundle: AgentBundle, cfg: PendulumConfig, rollouts: int, window_s: float,
                 seed: int) -> Tuple[pd.DataFrame, List[Dict]]:
    """Random-start rollouts; settle angle and speed over the trailing window"""
    env = PendulumEnv(cfg)
    rng = np.random.default_rng(seed)
    window = max(1, int(round(window_s / cfg.dt)))
    traces, rows = [], []
    for index in range(rollouts):
        run = rollout(bundle, env, rng)
        recorder = TrajectoryRecorder(PENDULUM_STATE, PENDULUM_ACTION)
        for step, (info, reward) in enumerate(zip(run.infos, run.rewards)):
            recorder.record(step * cfg.dt, (wrap_angle(info["theta"]), info["theta_dot"]), info["torque"],
                            {"reward": reward})
        trace = recorder.to_frame()
        trace.insert(0, "rollout", index)
        traces.append(trace)
        theta = trace["theta"].to_numpy()
        theta_dot = trace["theta_dot"].to_numpy()
        tail = slice(-window, None)
        rows.append({"rollout": index, "settle_deg": float(np.degrees(np.mean(theta[tail]))),
                     "settled": bool(np.max(np.abs(theta_dot[tail])) < 0.1)})
    return pd.concat(traces, ignore_index=True), rows


def pendulum_anchors(res: Resolved, algo: str, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    """Train at +10 deg, adapt to the -10 deg twin with and without an anchor on the training domain"""
    h = res.harness
    train_domain = dataclasses.replace(res.pendulum, target_angle=math.radians(PENDULUM_TRAIN_DEG))
    twin_domain = make_real_twin(train_domain)
    pretrain_cfg = dataclasses.replace(res.train, total_steps=h.pendulum_steps,
                                       eval_interval=min(res.train.eval_interval, h.pendulum_steps))
    adapt_cfg = dataclasses.replace(pretrain_cfg, total_steps=h.pendulum_adapt_steps,
                                    eval_interval=min(res.train.eval_interval, h.pendulum_adapt_steps))
    traces, rows = [], []
    for seed in seeds:
        pre = train(algo, False, PendulumEnv(train_domain), pretrain_cfg, seed, weights=res.objective,
                    dump_dir=out / "diverged" / f"{algo}_{seed}_pre")
        phases = {"pre": (pre.bundle, train_domain)}
        anchored = train(algo, True, PendulumEnv(twin_domain), adapt_cfg, seed + 1, bundle=clone_bundle(pre.bundle),
                         sim_buffer=pre.buffer, reset_anchor_target=res.adapt.reset_anchor_target,
                         dump_dir=out / "diverged" / f"{algo}_{seed}_anchored")
        phases["anchored"] = (anchored.bundle, twin_domain)
        plain = train(algo, False, PendulumEnv(twin_domain), adapt_cfg, seed + 1, bundle=clone_bundle(pre.bundle),
                      dump_dir=out / "diverged" / f"{algo}_{seed}_unanchored")
        phases["unanchored"] = (plain.bundle, twin_domain)

        for phase, (bundle, cfg) in phases.items():
            trace, stats = settle_stats(bundle, cfg, h.rollouts, h.settle_window_s, seed + 500)
            trace.insert(0, "phase", phase)
            trace.insert(0, "seed", seed)
            traces.append(trace)
            rows.append({"algo": algo, "seed": seed, "phase": phase,
                         "settle_deg": float(np.mean([s["settle_deg"] for s in stats])),
                         "settle_min_deg": float(np.min([s["settle_deg"] for s in stats])),
                         "settle_max_deg": float(np.max([s["settle_deg"] for s in stats])),
                         "settled_all": all(s["settled"] for s in stats)})
            logger.info("pendulum settle", algo=algo, seed=seed, phase=phase, settle_deg=round(rows[-1]["settle_deg"], 2))

    _write_csv(pd.concat(traces, ignore_index=True), out / f"traces_{algo}.csv", config_hash)
    table = pd.DataFrame(rows)
    _write_csv(table, out / f"settle_{algo}.csv", config_hash)
    return {f"{algo}_{phase}_settle_deg": float(group["settle_deg"].mean())
            for phase, group in table.groupby("phase")}


def fig3_pendulum_anchors(res: Resolved, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    return pendulum_anchors(res, "ddpg", seeds, out, config_hash)


def fig8_algo_anchors(res: Resolved, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    summary = {}
    for algo in res.harness.anchor_algos:
        summary.update(pendulum_anchors(res, algo, seeds, out, config_hash))
    return summary


# ------------------------------- Live adaptation -------------------------------

def attitude_pretrainer(res: Resolved, out: Optional[Path] = None) -> Callable[[int], Tuple[AgentBundle, ReplayBuffer]]:
    """seed -> (sim-trained bundle, sim buffer); trained once per seed, handed out as copies"""
    cfg = dataclasses.replace(res.train, total_steps=res.harness.attitude_steps)
    cache: Dict[int, Tuple[AgentBundle, ReplayBuffer]] = {}

    def pretrain(seed: int) -> Tuple[AgentBundle, ReplayBuffer]:
        if seed not in cache:
            result = train(res.harness.adaptation_algo, False, AttitudeEnv(res.attitude, "aggressive"), cfg, seed,
                           weights=res.objective,
                           dump_dir=out / "diverged" / f"pretrain_{seed}" if out is not None else None)
            cache[seed] = (result.bundle, result.buffer)
        bundle, buffer = cache[seed]
        return clone_bundle(bundle), buffer

    return pretrain


def table1_and_fig5(res: Resolved, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    """Anchored and unanchored live adaptation from the same pretrained agents"""
    pretrain = attitude_pretrainer(res, out)
    summary = {}
    for anchored in (True, False):
        arm = "anchored" if anchored else "unanchored"
        report = adaptation_experiment(seeds, anchored, pretrain, res.attitude, res.adapt, res.link,
                                       out_dir=out / arm, config_hash=config_hash)
        summary.update({f"{arm}_{k}": v for k, v in report["summary"].items()})
        summary[f"{arm}_probe_ratios"] = [row["probe_ratio"] for row in report["per_seed"]]
        if report["errors"]:
            summary.setdefault("adaptation_errors", []).extend(report["errors"])

    rows = []
    for metric in ("mae", "sm", "power"):
        for arm in ("anchored", "unanchored"):
            rows.append({"arm": arm, "metric": metric,
                         "before_mean": summary[f"{arm}_{metric}_before_mean"],
                         "before_std": summary[f"{arm}_{metric}_before_std"],
                         "after_mean": summary[f"{arm}_{metric}_after_mean"],
                         "after_std": summary[f"{arm}_{metric}_after_std"],
                         "ratio": summary[f"{arm}_{metric}_ratio"]})
    _write_csv(pd.DataFrame(rows), out / "table1.csv", config_hash)
    return summary


# ------------------------------- Sweep -------------------------------

def appendix_b_sweep(res: Resolved, seeds: Sequence[int], out: Path, config_hash: str) -> Dict:
    """Random grid samples per algorithm and Pearson r of each parameter against reward"""
    attitude = dataclasses.replace(res.attitude, reward_mode=res.harness.sweep_reward_mode)
    base_cfg = dataclasses.replace(res.train, total_steps=res.harness.attitude_steps)
    summary = {}
    for algo in res.harness.sweep_algos:
        table = hyperparameter_sweep(algo, SWEEP_GRIDS[algo], lambda: AttitudeEnv(attitude, "aggressive"), seeds,
                                     res.harness.sweep_samples, base_cfg, res.objective)
        _write_csv(table, out / f"sweep_{algo}.csv", config_hash)
        correlation = correlation_report(table)
        _write_csv(correlation, out / f"correlation_{algo}.csv", config_hash)
        logger.info("parameter correlation", algo=algo, table="\n" + format_correlation(correlation))
        rewards = table["reward"].dropna()
        summary[f"{algo}_reward_mean"] = float(rewards.mean()) if len(rewards) else math.nan
        summary[f"{algo}_reward_std"] = float(rewards.std(ddof=0)) if len(rewards) else math.nan
        summary[f"{algo}_reward_best"] = float(rewards.max()) if len(rewards) else math.nan
        summary[f"{algo}_diverged"] = int(table["diverged"].sum())
    return summary


REGISTRY: Dict[str, Tuple[Callable, str]] = {
    "fig2-composition": (fig2_composition, "composition_seeds"),
    "fig3-pendulum-anchors": (fig3_pendulum_anchors, "pendulum_seeds"),
    "fig8-algo-anchors": (fig8_algo_anchors, "pendulum_seeds"),
    "fig5-forgetting": (table1_and_fig5, "adaptation_seeds"),
    "table1-adaptation": (table1_and_fig5, "adaptation_seeds"),
    "appendixB-sweep": (appendix_b_sweep, None),
}


def run_experiment(spec: ExperimentSpec, out_root) -> Dict:
    """
    Run one experiment id

    Args:
        spec: Experiment id, seeds, config file and overrides
        out_root: Parent of the experiment's output directory

    Returns:
        Dictionary with success, errors, output directory, config hash and summary
    """
    if spec.experiment_id not in REGISTRY:
        raise ValueError(f"Unknown experiment {spec.experiment_id!r}, expected one of {EXPERIMENTS}")
    res = resolve(spec)
    resolved = res.to_dict()
    resolved["seeds"] = spec.seeds
    digest = config.config_hash(resolved)
    out = Path(out_root) / spec.experiment_id
    out.mkdir(parents=True, exist_ok=True)
    _write_json({"experiment": spec.experiment_id, "config_hash": digest, "config": resolved},
                out / "resolved_config.json")

    runner, seed_key = REGISTRY[spec.experiment_id]
    seeds = _seeds(spec, getattr(res.harness, seed_key) if seed_key else 1)
    result = {
        "success": False,
        "experiment": spec.experiment_id,
        "seeds": seeds,
        "out_dir": str(out),
        "config_hash": digest,
        "summary": {},
        "errors": [],
    }
    logger.info("experiment started", experiment=spec.experiment_id, seeds=seeds, config_hash=digest,
                started_utc=datetime.now(timezone.utc).isoformat())
    try:
        result["summary"] = runner(res, seeds, out, digest)
        result["success"] = True
    except TrainingDiverged as e:
        result["errors"].append(f"training diverged: {e} (dump: {e.dump_dir})")
    except Exception as e:
        logger.exception("experiment failed", experiment=spec.experiment_id)
        result["errors"].append(f"{type(e).__name__}: {e}")
    result["errors"].extend(result["summary"].pop("adaptation_errors", []))
    _write_json(result, out / "summary.json")
    logger.info("experiment finished", experiment=spec.experiment_id, success=result["success"])
    return result


# ------------------------------- Verify -------------------------------

def _check(name: str, passed: bool, detail: str) -> Dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _high_band(path: Path) -> float:
    frame = pd.read_csv(path)
    band = frame["frequency"] > HIGH_BAND_FRACTION * frame["frequency"].max()
    return float(frame.loc[band, "amplitude"].sum())


def _verify_composition(s: Mapping) -> List[Dict]:
    std_x, std_lin = s.get("ddpgx_end_std"), s.get("ddpg_linear_caps_end_std")
    mean_x, mean_lin = s.get("ddpgx_end_mean"), s.get("ddpg_linear_caps_end_mean")
    if None in (std_x, std_lin, mean_x, mean_lin):
        return []
    return [_check("composition variance", std_x <= 0.5 * std_lin and mean_x >= mean_lin,
                   f"std {std_x:.4f} vs {std_lin:.4f}, mean {mean_x:.4f} vs {mean_lin:.4f}")]


def _verify_pendulum(out: Path) -> List[Dict]:
    checks = []
    targets = {"pre": (PENDULUM_TRAIN_DEG, 3.0), "anchored": (0.0, 4.0), "unanchored": (-PENDULUM_TRAIN_DEG, 3.0)}
    for path in sorted(out.glob("settle_*.csv")):
        table = pd.read_csv(path)
        algo = path.stem[len("settle_"):]
        for phase, (centre, tolerance) in targets.items():
            rows = table[table["phase"] == phase]
            if rows.empty:
                continue
            ok = bool(((rows["settle_min_deg"] - centre).abs() <= tolerance).all()
                      and ((rows["settle_max_deg"] - centre).abs() <= tolerance).all())
            checks.append(_check(f"pendulum {algo} {phase} settle", ok,
                                 f"mean {rows['settle_deg'].mean():.2f} deg, target {centre:+.0f}+-{tolerance:.0f}"))
        checks.append(_check(f"pendulum {algo} settled", bool(table["settled_all"].all()),
                             f"{int(table['settled_all'].sum())}/{len(table)} phase runs settled"))
    return checks


def _verify_adaptation(out: Path, s: Mapping) -> List[Dict]:
    checks = []
    if "unanchored_probe_ratios" in s and "anchored_probe_ratios" in s:
        loose = np.asarray(s["unanchored_probe_ratios"], dtype=np.float64)
        held = np.asarray(s["anchored_probe_ratios"], dtype=np.float64)
        checks.append(_check("forgetting without anchor", np.mean(~(loose <= 3.0)) >= 0.6,
                             f"{int(np.sum(~(loose <= 3.0)))}/{len(loose)} seeds above 3x"))
        checks.append(_check("anchor bounds forgetting", bool(np.all(held <= 2.0)),
                             f"{int(np.sum(held <= 2.0))}/{len(held)} seeds within 2x"))
    if "anchored_sm_ratio" in s:
        checks.append(_check("smoothness improves", s["anchored_sm_ratio"] <= 0.7, f"ratio {s['anchored_sm_ratio']:.3f}"))
        checks.append(_check("power drops", s["anchored_power_ratio"] <= 0.75, f"ratio {s['anchored_power_ratio']:.3f}"))
        checks.append(_check("tracking holds", s["anchored_mae_ratio"] <= 1.5, f"ratio {s['anchored_mae_ratio']:.3f}"))
    before = sorted((out / "anchored").glob("seed*/spectrum_before.csv"))
    if before:
        reduced = [_high_band(b.parent / "spectrum_after.csv") < _high_band(b)
                   for b in before if (b.parent / "spectrum_after.csv").exists()]
        checks.append(_check("high-band amplitude drops", bool(reduced) and all(reduced),
                             f"{sum(reduced)}/{len(reduced)} seeds"))
    return checks


def _verify_sweep(s: Mapping) -> List[Dict]:
    if "ddpgx_reward_mean" not in s or "ddpg_reward_mean" not in s:
        return []
    gap = s["ddpgx_reward_mean"] - s["ddpg_reward_mean"]
    return [_check("algorithm ordering", gap >= 0.2 and s["ddpgx_reward_best"] >= 0.8,
                   f"mean gap {gap:.3f}, best {s['ddpgx_reward_best']:.3f}")]


def _verify_json_reports(root: Path) -> List[Dict]:
    checks = []
    for path in sorted(root.rglob("swaplink_sim.json")):
        report = json.loads(path.read_text())
        checks.append(_check("protocol integrity", report.get("mismatched_images", 1) == 0 and report.get("success", False),
                             f"{report.get('transfers', 0)} transfers, {report.get('mismatched_images')} mismatched"))
    for path in sorted(root.rglob("swap_timing.json")):
        report = json.loads(path.read_text())
        checks.append(_check("swap atomicity and timing", report.get("success", False),
                             f"max deviation {report.get('max_deviation_ticks')} ticks, "
                             f"KS p={report.get('ks_pvalue')}"))
    return checks


def verify(run_dir) -> Dict:
    """
    Re-check every acceptance threshold that has data under run_dir

    Writes verify.json into run_dir and returns the same dictionary.
    """
    root = Path(run_dir)
    result = {"success": False, "run_dir": str(root), "checks": [], "config_hashes": {}, "errors": []}
    if not root.is_dir():
        result["errors"].append(f"No such run directory: {root}")
        return result

    for summary_path in sorted(root.rglob("summary.json")):
        try:
            payload = json.loads(summary_path.read_text())
        except json.JSONDecodeError as e:
            result["errors"].append(f"{summary_path}: {e}")
            continue
        experiment = payload.get("experiment")
        if experiment not in REGISTRY:
            continue
        out = summary_path.parent
        s = payload.get("summary", {})
        result["config_hashes"][experiment] = payload.get("config_hash")
        if experiment == "fig2-composition":
            result["checks"] += _verify_composition(s)
        elif experiment in ("fig3-pendulum-anchors", "fig8-algo-anchors"):
            result["checks"] += _verify_pendulum(out)
        elif experiment in ("fig5-forgetting", "table1-adaptation"):
            result["checks"] += _verify_adaptation(out, s)
        elif experiment == "appendixB-sweep":
            result["checks"] += _verify_sweep(s)
    result["checks"] += _verify_json_reports(root)

    if not result["checks"]:
        result["errors"].append("No experiment outputs found")
    result["success"] = bool(result["checks"]) and all(c["passed"] for c in result["checks"])
    _write_json(result, root / "verify.json")
    return result
