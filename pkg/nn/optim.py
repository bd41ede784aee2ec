"""
Adam and target-network averaging
"""

from dataclasses import dataclass, field

import numpy as np

from nn.mlp import ArchitectureMismatch, Mlp


@dataclass
class AdamState:
    """
    Adam moments for one parameter vector

    The step counter only ever increases; adam_step() advances it by one.
    """

    size: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size, dtype=np.float64)
        if self.v is None:
            self.v = np.zeros(self.size, dtype=np.float64)
        if self.m.shape != (self.size,) or self.v.shape != (self.size,):
            raise ArchitectureMismatch("Adam moments must match the parameter length")


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """
    One Adam update

    Args:
        state: Moments, advanced in place
        params: Current parameters (dtype preserved)
        grads: Gradient of the loss to minimize

    Returns:
        Updated parameter vector
    """
    params = np.asarray(params)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (state.size,) or grads.shape != (state.size,):
        raise ArchitectureMismatch(
            f"Adam state sized {state.size}, got params {params.shape} and grads {grads.shape}"
        )

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return (params.astype(np.float64) - update).astype(params.dtype)


def polyak_update(target: Mlp, online: Mlp, rho: float) -> Mlp:
    """target <- rho * target + (1 - rho) * online"""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"Polyak coefficient must be in [0, 1], got {rho}")
    if not target.same_architecture(online):
        raise ArchitectureMismatch(f"Target {target.layer_sizes} vs online {online.layer_sizes}")
    mixed = rho * target.weights.astype(np.float64) + (1.0 - rho) * online.weights.astype(np.float64)
    return target.with_weights(mixed.astype(target.weights.dtype))
