"""
Trajectory logs as CSV (t, state..., action..., extra columns...)
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd


class TrajectoryRecorder:
    """Collects one row per control step"""

    def __init__(self, state_names: Sequence[str], action_names: Sequence[str]):
        self.state_names = list(state_names)
        self.action_names = list(action_names)
        self.rows: List[Dict[str, float]] = []

    def record(self, t: float, state, action, extra: Optional[Dict[str, float]] = None):
        state = np.asarray(state, dtype=np.float64).ravel()
        action = np.asarray(action, dtype=np.float64).ravel()
        if state.size != len(self.state_names) or action.size != len(self.action_names):
            raise ValueError(f"Expected {len(self.state_names)} state and {len(self.action_names)} action values, "
                             f"got {state.size} and {action.size}")
        row = {"t": float(t)}
        row.update(zip(self.state_names, state.tolist()))
        row.update(zip(self.action_names, action.tolist()))
        row.update({k: float(v) for k, v in (extra or {}).items()})
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=None if self.rows else ["t", *self.state_names, *self.action_names])

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


PENDULUM_STATE = ("theta", "theta_dot")
PENDULUM_ACTION = ("torque",)
