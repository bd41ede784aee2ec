"""
Off-policy training loop

One logical thread: act with exploration noise, store, and every
update_every steps run update_every * update_ratio update cycles.
Evaluation windows append one metrics row each.
"""

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

import config
from metrics import EvalTrace, summarize
from nn.serialization import serialize
from rl.agent import ALGORITHMS, AgentBundle, act, attach_anchor, make_bundle, update_cycle
from rl.buffer import LIVE, SIM, ReplayBuffer
from rl.objectives import AnchorDataError, ObjectiveRangeError, ObjectiveWeights

logger = structlog.get_logger(__name__)

METRIC_COLUMNS = ("step", "mean_j", "q", "q_anchor", "f_t", "f_s", "f_a", "critic_loss",
                  "eval_reward", "r_track", "r_smooth", "r_act", "mae", "sm", "power")
REWARD_PARTS = ("r_track", "r_smooth", "r_act")


class TrainingDiverged(RuntimeError):
    """Non-finite loss; a diagnostic dump was written before raising"""

    def __init__(self, message: str, dump_dir: Optional[Path] = None):
        super().__init__(message)
        self.dump_dir = dump_dir


@dataclass
class TrainConfig:
    """
    Training loop settings

    Attributes:
        total_steps: Environment invocations
        batch_size: Transitions per update
        start_steps: Uniform-random actions before the policy acts (fresh agents only)
        update_after: Steps collected before the first update
        update_every: Steps between update bursts
        update_ratio: Update cycles per environment step
        action_noise: Gaussian exploration std (deterministic policies)
        polyak: Target averaging coefficient rho
        pi_lr, q_lr: Adam learning rates
        hidden: Hidden widths of actor and critics
        sim_buffer_size, live_buffer_size: Replay capacities
        eval_interval: Steps between evaluation windows
        eval_episodes: Episodes per evaluation
        eval_steps: Steps per evaluation episode (0 = environment default)
        target_noise, noise_clip, policy_delay: TD3 settings
    """

    total_steps: int = 300_000
    batch_size: int = 100
    start_steps: int = 5_000
    update_after: int = 1_000
    update_every: int = 50
    update_ratio: float = 1.0
    action_noise: float = 0.05
    polyak: float = 0.995
    pi_lr: float = 1e-4
    q_lr: float = 1e-4
    hidden: Tuple[int, ...] = (32, 32)
    sim_buffer_size: int = 1_000_000
    live_buffer_size: int = 100_000
    eval_interval: int = 10_000
    eval_episodes: int = 5
    eval_steps: int = 0
    target_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2

    def __post_init__(self):
        if self.total_steps <= 0 or self.batch_size <= 0 or self.update_every <= 0:
            raise ValueError("total_steps, batch_size and update_every must be positive")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError(f"polyak must be in [0, 1], got {self.polyak}")
        if self.action_noise < 0 or self.update_ratio <= 0:
            raise ValueError("action_noise must be >= 0 and update_ratio > 0")


@dataclass
class TrainResult:
    bundle: AgentBundle
    metrics: pd.DataFrame
    buffer: ReplayBuffer
    errors: List[str] = field(default_factory=list)


@dataclass
class Rollout:
    rewards: np.ndarray
    infos: List[Dict[str, Any]]
    actions: np.ndarray

    def trace(self, sample_rate: float) -> Optional[EvalTrace]:
        """Attitude traces only; None for plants without rate telemetry"""
        if not self.infos or "target_dps" not in self.infos[0]:
            return None
        return EvalTrace(
            setpoints=np.array([i["target_dps"] for i in self.infos]),
            measured=np.array([i["measured_dps"] for i in self.infos]),
            duty=np.array([i["duty"] for i in self.infos]),
            sample_rate=sample_rate,
        )


def load_train_config(values, base: Optional[TrainConfig] = None) -> TrainConfig:
    return config.build(TrainConfig, values, "train", base=base)


def load_objective_weights(values, base: Optional[ObjectiveWeights] = None) -> ObjectiveWeights:
    return config.build(ObjectiveWeights, values, "objective", base=base)


def rollout(bundle: AgentBundle, env, rng: np.random.Generator, steps: int = 0,
            deterministic: bool = True, reset: bool = True) -> Rollout:
    """Run the policy for one episode (or `steps` steps) without learning"""
    obs = env.reset(rng) if reset else env.observe()
    n = steps or env.max_episode_steps
    rewards, infos, actions = [], [], []
    for _ in range(n):
        action = act(bundle, obs, rng, 0.0 if deterministic else 0.05)
        obs, reward, done, info = env.step(action)
        rewards.append(reward)
        infos.append(info)
        actions.append(np.asarray(action, dtype=np.float64))
        if done and not steps:
            break
    return Rollout(np.asarray(rewards), infos, np.asarray(actions))


def evaluate(bundle: AgentBundle, env, episodes: int, rng: np.random.Generator, steps: int = 0) -> Dict[str, float]:
    """
    Mean per-step reward over deterministic episodes, plus the per-criterion reward parts
    and MAE/Sm/power for attitude plants

    Returns:
        {'eval_reward', 'r_track', 'r_smooth', 'r_act', 'mae', 'sm', 'power'} (NaN where not applicable)
    """
    rewards, summaries = [], []
    parts: Dict[str, List[float]] = {key: [] for key in REWARD_PARTS}
    sample_rate = getattr(getattr(env, "cfg", None), "control_rate_hz", 0.0)
    for _ in range(episodes):
        episode = rollout(bundle, env, rng, steps)
        rewards.append(float(np.mean(episode.rewards)))
        for key in REWARD_PARTS:
            if episode.infos and key in episode.infos[0]:
                parts[key].append(float(np.mean([i[key] for i in episode.infos])))
        trace = episode.trace(sample_rate) if sample_rate else None
        if trace is not None:
            summaries.append(summarize(trace))
    out = {"eval_reward": float(np.mean(rewards))}
    for key in REWARD_PARTS:
        out[key] = float(np.mean(parts[key])) if parts[key] else math.nan
    for key in ("mae", "sm", "power"):
        out[key] = float(np.nanmean([s[key] for s in summaries])) if summaries else math.nan
    return out


def dump_diagnostics(bundle: AgentBundle, rows: List[Dict[str, float]], dump_dir, reason: str) -> Path:
    """Model images plus the tail of the metrics log, for post-mortem"""
    dump_dir = Path(dump_dir)
    dump_dir.mkdir(parents=True, exist_ok=True)
    for name in ("policy", "critic", "anchor"):
        net = getattr(bundle, name)
        if net is None:
            continue
        try:
            (dump_dir / f"{name}.swnn").write_bytes(serialize(net))
        except Exception as e:
            logger.warning("could not serialize network", network=name, error=str(e))
    tail = {"reason": reason, "algo": bundle.algo, "updates": bundle.updates, "metrics_tail": rows[-20:]}
    (dump_dir / "diagnostics.json").write_text(json.dumps(tail, indent=2, default=str))
    return dump_dir


def _window_means(stats: List[Dict[str, float]]) -> Dict[str, float]:
    out = {}
    for key, column in (("j", "mean_j"), ("q", "q"), ("q_anchor", "q_anchor"), ("f_t", "f_t"),
                        ("f_s", "f_s"), ("f_a", "f_a"), ("critic_loss", "critic_loss")):
        values = [s[key] for s in stats if key in s]
        out[column] = float(np.mean(values)) if values else math.nan
    return out


def train(algo: str, anchored: bool, env, cfg: TrainConfig, seed: int,
          weights: Optional[ObjectiveWeights] = None, bundle: Optional[AgentBundle] = None,
          sim_buffer: Optional[ReplayBuffer] = None, eval_env=None, dump_dir=None,
          reset_anchor_target: bool = False,
          on_eval: Optional[Callable[[int, AgentBundle, Dict[str, float]], None]] = None) -> TrainResult:
    """
    Train (or fine-tune) an agent on env

    Args:
        algo: One of ALGORITHMS
        anchored: Fine-tune with an anchor critic trained on sim_buffer
        env: Plant with reset(rng)/step(action)
        cfg: Loop settings
        seed: Seed for initialization, exploration and sampling
        weights: Objective hyperparameters (bundle's or defaults when None)
        bundle: Pretrained agent to continue from; a fresh one is built when None
        sim_buffer: Simulation replay data (required when anchored)
        eval_env: Separate plant for evaluation (a copy of env when None)
        dump_dir: Where to write the diagnostic dump on divergence
        reset_anchor_target: Start the anchor target from the anchor instead of the sim target
        on_eval: Callback per evaluation window (step, bundle, row)

    Returns:
        TrainResult with the agent, one metrics row per window and the filled buffer
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"Unknown algorithm {algo!r}, expected one of {ALGORITHMS}")
    rng = np.random.default_rng(seed)
    fresh = bundle is None
    if fresh:
        bundle = make_bundle(algo, env.observation_size, env.action_size, rng, weights, cfg.hidden,
                             cfg.pi_lr, cfg.q_lr, cfg.target_noise, cfg.noise_clip, cfg.policy_delay)
    elif bundle.algo != algo:
        raise ValueError(f"Bundle was trained with {bundle.algo}, not {algo}")
    elif weights is not None:
        bundle.weights = weights

    if anchored:
        if sim_buffer is None or len(sim_buffer) == 0:
            raise AnchorDataError("anchor without anchor data")
        if not bundle.anchored:
            bundle = attach_anchor(bundle, cfg.q_lr, reset_target=reset_anchor_target)

    role = LIVE if anchored or not fresh else SIM
    capacity = cfg.live_buffer_size if role == LIVE else cfg.sim_buffer_size
    buffer = ReplayBuffer(env.observation_size, env.action_size, min(capacity, cfg.total_steps), role,
                          seed=seed + 1)
    eval_env = eval_env if eval_env is not None else copy.deepcopy(env)
    eval_rng = np.random.default_rng(seed + 2)

    rows: List[Dict[str, float]] = []
    window: List[Dict[str, float]] = []
    obs = env.reset(rng)
    updates_per_burst = max(1, int(round(cfg.update_every * cfg.update_ratio)))

    for t in range(1, cfg.total_steps + 1):
        if fresh and t <= cfg.start_steps:
            action = rng.uniform(-1.0, 1.0, size=env.action_size)
        else:
            action = act(bundle, obs, rng, cfg.action_noise)
        next_obs, reward, done, _ = env.step(action)
        bundle.obs_stats.update(obs)
        # episodes end on time limits only, so never cut the bootstrap
        buffer.add(obs, action, reward, next_obs, False, bundle.version)
        obs = env.reset(rng) if done else next_obs

        if t >= cfg.update_after and t % cfg.update_every == 0 and len(buffer) >= cfg.batch_size:
            for _ in range(updates_per_burst):
                try:
                    stats = update_cycle(bundle, buffer, sim_buffer, cfg.batch_size, cfg.polyak, rng)
                except ObjectiveRangeError as e:
                    _diverged(bundle, rows, dump_dir, f"objective out of range at step {t}: {e}")
                if not all(math.isfinite(v) for v in stats.values()):
                    _diverged(bundle, rows, dump_dir, f"non-finite loss at step {t}: {stats}")
                window.append(stats)

        if t % cfg.eval_interval == 0 or t == cfg.total_steps:
            row = {"step": t, **_window_means(window)}
            row.update(evaluate(bundle, eval_env, cfg.eval_episodes, eval_rng, cfg.eval_steps))
            rows.append(row)
            window = []
            logger.info("evaluation", algo=algo, anchored=anchored, step=t,
                        reward=round(row["eval_reward"], 4), mean_j=row["mean_j"])
            if on_eval is not None:
                on_eval(t, bundle, row)

    metrics = pd.DataFrame(rows, columns=list(METRIC_COLUMNS))
    return TrainResult(bundle=bundle, metrics=metrics, buffer=buffer)


def _diverged(bundle: AgentBundle, rows, dump_dir, reason: str):
    logger.error("training diverged", reason=reason)
    written = dump_diagnostics(bundle, rows, dump_dir, reason) if dump_dir is not None else None
    raise TrainingDiverged(reason, written)
