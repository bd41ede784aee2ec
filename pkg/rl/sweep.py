"""
Hyperparameter sweeps and correlation analysis

Samples random combinations from per-algorithm value grids, trains one agent
per sample and correlates each (numeric-coded) parameter with the final mean
evaluation reward.
"""

import dataclasses
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from scipy.stats import pearsonr

from rl.objectives import ObjectiveWeights
from rl.trainer import TrainConfig, TrainingDiverged, evaluate, train

logger = structlog.get_logger(__name__)

_COMMON = {
    "gamma": [0.8, 0.9, 0.95, 0.99],
    "polyak": [0.5, 0.9, 0.95, 0.99, 0.995],
    "batch_size": [50, 100, 200, 400],
}
_LR = [1e-4, 5e-4, 1e-3, 3e-3, 5e-3]

# tested values per algorithm
SWEEP_GRIDS: Dict[str, Dict[str, list]] = {
    "ddpg": {**_COMMON, "pi_lr": _LR, "q_lr": _LR, "action_noise": [0.01, 0.05, 0.1, 0.2]},
    "ddpgx": {**_COMMON, "pi_lr": _LR, "q_lr": _LR, "action_noise": [0.01, 0.05, 0.1, 0.2]},
    "td3": {**_COMMON, "pi_lr": _LR, "q_lr": _LR, "action_noise": [0.01, 0.05, 0.1, 0.2]},
    "sac": {**_COMMON, "lr": _LR, "alpha": [0.01, 0.05, 0.1, 0.2]},
}

WEIGHT_FIELDS = {f.name for f in dataclasses.fields(ObjectiveWeights)}
TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def sample_grid(grid: Mapping[str, Sequence], n_samples: int, rng: np.random.Generator) -> List[Dict]:
    """n_samples combinations, each parameter drawn uniformly from its value list"""
    if not grid:
        raise ValueError("Empty sweep grid")
    return [{name: values[int(rng.integers(len(values)))] for name, values in grid.items()}
            for _ in range(n_samples)]


def apply_sample(sample: Mapping, base_cfg: TrainConfig, base_weights: ObjectiveWeights):
    """Split a sample into TrainConfig and ObjectiveWeights overrides; 'lr' sets both learning rates"""
    cfg_changes, weight_changes = {}, {}
    for name, value in sample.items():
        if name == "lr":
            cfg_changes.update(pi_lr=value, q_lr=value)
        elif name in TRAIN_FIELDS:
            cfg_changes[name] = value
        elif name in WEIGHT_FIELDS:
            weight_changes[name] = value
        else:
            raise ValueError(f"Unknown sweep parameter {name!r}")
    return dataclasses.replace(base_cfg, **cfg_changes), dataclasses.replace(base_weights, **weight_changes)


def hyperparameter_sweep(algo: str, grid: Mapping[str, Sequence], env_factory: Callable[[], object],
                         seeds: Sequence[int], n_samples: int = 10, base_cfg: Optional[TrainConfig] = None,
                         base_weights: Optional[ObjectiveWeights] = None, eval_episodes: int = 5) -> pd.DataFrame:
    """
    Train one agent per (sample, seed) and record its final mean evaluation reward

    Args:
        algo: Algorithm name
        grid: Parameter -> tested values
        env_factory: Builds a fresh plant per run
        seeds: Seeds; each sample is trained once per seed
        n_samples: Random grid samples
        base_cfg: Settings not covered by the grid
        base_weights: Objective weights not covered by the grid
        eval_episodes: Final evaluation episodes

    Returns:
        One row per run: sample, seed, every grid parameter, reward, diverged
    """
    base_cfg = base_cfg or TrainConfig()
    base_weights = base_weights or ObjectiveWeights()
    samples = sample_grid(grid, n_samples, np.random.default_rng(min(seeds) if seeds else 0))
    rows = []
    for index, sample in enumerate(samples):
        cfg, weights = apply_sample(sample, base_cfg, base_weights)
        for seed in seeds:
            row = {"sample": index, "seed": seed, **sample, "reward": math.nan, "diverged": False}
            try:
                result = train(algo, False, env_factory(), cfg, seed, weights=weights)
                scores = evaluate(result.bundle, env_factory(), eval_episodes, np.random.default_rng(seed + 100))
                row["reward"] = scores["eval_reward"]
            except TrainingDiverged as e:
                logger.warning("sweep run diverged", algo=algo, sample=index, seed=seed, error=str(e))
                row["diverged"] = True
            logger.info("sweep sample", algo=algo, sample=index, seed=seed, reward=row["reward"])
            rows.append(row)
    return pd.DataFrame(rows)


def correlation_report(table: pd.DataFrame, reward_column: str = "reward",
                       exclude: Sequence[str] = ("sample", "seed", "diverged")) -> pd.DataFrame:
    """
    Pearson r of each parameter against reward

    Constant parameters have no defined correlation and report NaN ('n/a').

    Returns:
        Rows of parameter, r, p_value, n
    """
    if reward_column not in table:
        raise KeyError(f"Table has no {reward_column!r} column")
    valid = table[np.isfinite(table[reward_column].astype(float))]
    rows = []
    for column in table.columns:
        if column == reward_column or column in exclude:
            continue
        x = pd.to_numeric(valid[column], errors="coerce")
        keep = x.notna()
        x = x[keep].to_numpy(dtype=np.float64)
        y = valid.loc[keep, reward_column].to_numpy(dtype=np.float64)
        r, p = math.nan, math.nan
        if len(x) >= 2 and np.ptp(x) > 0 and np.ptp(y) > 0:
            r, p = pearsonr(x, y)
        rows.append({"parameter": column, "r": float(r), "p_value": float(p), "n": int(len(x))})
    return pd.DataFrame(rows, columns=["parameter", "r", "p_value", "n"])


def format_correlation(report: pd.DataFrame) -> str:
    """Plain-text table with 'n/a' for undefined correlations"""
    lines = [f"{'parameter':<14} {'r':>8}  n"]
    for row in report.itertuples():
        r = "n/a" if not math.isfinite(row.r) else f"{row.r:+.3f}"
        lines.append(f"{row.parameter:<14} {r:>8}  {row.n}")
    return "\n".join(lines)
