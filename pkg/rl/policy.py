"""
Policy heads and critic evaluation

Deterministic policies are tanh networks with one output per action.
Squashed-Gaussian (SAC) policies are identity networks emitting
(mean, log std) per action; actions are tanh(mean + std * eps).
"""

import math
from typing import Optional, Tuple

import numpy as np

from nn.mlp import Mlp, backward_full, forward, forward_cached, pre_activation_output

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


class DeterministicPass:
    """a = pi(s) for a batch, with the cache needed for exact gradients"""

    stochastic = False

    def __init__(self, policy: Mlp, obs):
        self.policy = policy
        self.actions, self.cache = forward_cached(policy, np.atleast_2d(obs))
        self.pre_activation = self.cache.pre_activation
        self.log_prob = None

    def param_grad(self, grad_actions, grad_pre=None, grad_log_prob=None) -> np.ndarray:
        return backward_full(self.policy, grad_actions, self.cache, grad_pre).params


class SquashedGaussianPass:
    """Reparameterized sample a = tanh(mu + std * eps) with its log-probability"""

    stochastic = True

    def __init__(self, policy: Mlp, obs, rng: Optional[np.random.Generator] = None, eps=None):
        self.policy = policy
        out, self.cache = forward_cached(policy, np.atleast_2d(obs))
        n = out.shape[1] // 2
        self.mu = out[:, :n]
        raw_log_std = out[:, n:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        self._log_std_open = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        self.std = np.exp(log_std)
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng()
            eps = rng.standard_normal(self.mu.shape)
        self.eps = np.asarray(eps, dtype=np.float64).reshape(self.mu.shape)
        self.actions = np.tanh(self.mu + self.std * self.eps)
        self.pre_activation = self.mu
        self.log_prob = np.sum(
            -0.5 * self.eps ** 2 - log_std - 0.5 * _LOG_2PI - np.log(1.0 - self.actions ** 2 + SQUASH_EPS),
            axis=1,
        )

    def param_grad(self, grad_actions, grad_pre=None, grad_log_prob=None) -> np.ndarray:
        a = self.actions
        g_u = np.asarray(grad_actions, dtype=np.float64) * (1.0 - a ** 2)
        g_mu = g_u.copy()
        g_log_std = g_u * self.std * self.eps
        if grad_log_prob is not None:
            c = np.asarray(grad_log_prob, dtype=np.float64)[:, None]
            # d log pi / du through the tanh correction term
            squash = 2.0 * a * (1.0 - a ** 2) / (1.0 - a ** 2 + SQUASH_EPS)
            g_mu += c * squash
            g_log_std += c * (-1.0 + squash * self.std * self.eps)
        if grad_pre is not None:
            g_mu += grad_pre
        g_log_std = g_log_std * self._log_std_open
        return backward_full(self.policy, np.concatenate([g_mu, g_log_std], axis=1), self.cache).params


def policy_pass(policy: Mlp, obs, stochastic: bool, rng: Optional[np.random.Generator] = None):
    if stochastic:
        return SquashedGaussianPass(policy, obs, rng)
    return DeterministicPass(policy, obs)


def policy_output_size(action_size: int, stochastic: bool) -> int:
    return 2 * action_size if stochastic else action_size


def deterministic_action(policy: Mlp, obs, stochastic: bool) -> np.ndarray:
    """Greedy action: pi(s), or tanh(mean) for a squashed-Gaussian head"""
    if not stochastic:
        return forward(policy, obs)
    mean = pre_activation_output(policy, obs)[..., :policy.output_size // 2]
    return np.tanh(mean)


def critic_forward(critic: Mlp, obs, actions) -> np.ndarray:
    """Q(s, a) for a batch, shape (batch,)"""
    x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(actions)], axis=1)
    return forward(critic, x)[:, 0]


def critic_value(critic: Mlp, obs, actions) -> Tuple[np.ndarray, np.ndarray]:
    """
    Q(s, a) and dQ/da per sample

    Returns:
        (q of shape (batch,), dq_da of shape (batch, action size))
    """
    obs = np.atleast_2d(obs)
    x = np.concatenate([obs, np.atleast_2d(actions)], axis=1)
    q, cache = forward_cached(critic, x)
    grads = backward_full(critic, np.ones_like(q), cache).inputs
    return q[:, 0], grads[:, obs.shape[1]:]
