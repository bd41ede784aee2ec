"""
Critic targets and actor objectives

Three actor compositions are supported:
    linear CAPS       Q - lambda_T * L_T - lambda_S * L_S
    multiplicative    (Q * fT * fS * fA) ** (1/4)
    anchored          (Q * Q_anchor ** w * fT * fS * fA) ** (1/5)
where f = w / (w + L) for each regularizer loss L. Geometric means are
evaluated in log space. Every objective returns the loss to minimize and
its exact gradient with respect to the policy parameters.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np

from nn.mlp import Mlp, backward, forward_cached
from rl.buffer import LIVE, SIM, Batch
from rl.policy import DeterministicPass, critic_forward, critic_value, deterministic_action, policy_pass

if TYPE_CHECKING:
    from rl.agent import AgentBundle

REWARD_TOLERANCE = 1e-9
FACTOR_TOLERANCE = 1e-12


class UnscaledRewardError(ValueError):
    """Rewards exceed (1 - gamma): they were not scaled before the critic step"""


class ObjectiveRangeError(FloatingPointError):
    """A composed factor left (0, 1] or became non-finite"""


class AnchorDataError(ValueError):
    """Anchored update requested without simulation data"""


class NotAnchoredError(RuntimeError):
    """Anchor operation on an agent without an anchor critic"""


@dataclass
class ObjectiveWeights:
    """
    Objective hyperparameters

    Attributes:
        gamma: Discount factor
        lambda_t, lambda_s: Linear CAPS weights
        w_t, w_s, w_a: Soft thresholds of the multiplicative factors
        w_anchor: Exponent on the anchor critic factor
        sigma_scale: Spatial perturbation std as a fraction of observation std
        q_floor: Lower clamp for Q factors before the log
        alpha: SAC entropy coefficient (fixed)
    """

    gamma: float = 0.99
    lambda_t: float = 0.1
    lambda_s: float = 0.1
    w_t: float = 0.1
    w_s: float = 0.1
    w_a: float = 1.0
    w_anchor: float = 1.0
    sigma_scale: float = 0.05
    q_floor: float = 1e-6
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if min(self.w_t, self.w_s, self.w_a) <= 0:
            raise ValueError("w_t, w_s and w_a must be positive")
        if self.w_anchor < 0:
            raise ValueError("w_anchor must be non-negative")
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")
        if self.lambda_t < 0 or self.lambda_s < 0 or self.alpha < 0:
            raise ValueError("lambda_t, lambda_s and alpha must be non-negative")
        if not 0.0 < self.q_floor < 1.0:
            raise ValueError("q_floor must be in (0, 1)")

    @property
    def entropy_coef(self) -> float:
        """alpha on the (1 - gamma) reward scale"""
        return self.alpha * (1.0 - self.gamma)


@dataclass
class ObjectiveOutput:
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray
    factors: Dict[str, float] = field(default_factory=dict)


class RunningStats:
    """Per-dimension running mean/std (Welford), used to size spatial noise"""

    MIN_STD = 1e-3

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self._m2 = np.zeros(size)

    def update(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for row in x:
            self.count += 1
            delta = row - self.mean
            self.mean += delta / self.count
            self._m2 += delta * (row - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.maximum(np.sqrt(self._m2 / (self.count - 1)), self.MIN_STD)

    def sigma(self, scale: float) -> np.ndarray:
        return scale * self.std


def threshold_factor(loss, w: float):
    """w / (w + L): 1 at zero loss, 1/2 at L = w"""
    return w / (w + np.asarray(loss, dtype=np.float64))


def compose_multiplicative(q, l_t, l_s, p, weights: ObjectiveWeights) -> np.ndarray:
    """Per-sample J of the multiplicative objective from raw terms"""
    log_j, _ = _log_factors(np.asarray(q, dtype=np.float64), weights)
    log_j = log_j + _log_regularizers(l_t, l_s, p, weights)
    return np.exp(log_j / 4.0)


def compose_anchored(q, q_anchor, l_t, l_s, p, weights: ObjectiveWeights, regularized: bool = True) -> np.ndarray:
    """Per-sample J of the anchored objective from raw terms"""
    log_q, _ = _log_factors(np.asarray(q, dtype=np.float64), weights)
    log_anchor, _ = _log_factors(np.asarray(q_anchor, dtype=np.float64), weights)
    log_sum = log_q + weights.w_anchor * log_anchor
    if not regularized:
        return np.exp(log_sum / 2.0)
    return np.exp((log_sum + _log_regularizers(l_t, l_s, p, weights)) / 5.0)


def _log_factors(q: np.ndarray, weights: ObjectiveWeights) -> Tuple[np.ndarray, np.ndarray]:
    """log of the clamped Q factor and its derivative wrt q (zero where clamped)"""
    clamped = np.clip(q, weights.q_floor, 1.0)
    inside = (q > weights.q_floor) & (q < 1.0)
    return np.log(clamped), np.where(inside, 1.0 / clamped, 0.0)


def _log_regularizers(l_t, l_s, p, weights: ObjectiveWeights) -> np.ndarray:
    return (np.log(threshold_factor(l_t, weights.w_t)) + np.log(threshold_factor(l_s, weights.w_s))
            + np.log(threshold_factor(p, weights.w_a)))


def check_factor_range(factors: Dict[str, np.ndarray]):
    """Every factor must be finite and lie in (0, 1]"""
    for name, values in factors.items():
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ObjectiveRangeError(f"Non-finite {name} factor")
        if np.any(values <= 0.0) or np.any(values > 1.0 + FACTOR_TOLERANCE):
            raise ObjectiveRangeError(
                f"{name} factor outside (0, 1]: min={values.min():.3g}, max={values.max():.3g}"
            )


def bellman_targets(scaled_rewards, done, next_q, gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - done) * Q', clamped to [0, 1]"""
    y = np.asarray(scaled_rewards, dtype=np.float64) + gamma * (1.0 - np.asarray(done, dtype=np.float64)) * next_q
    return np.clip(y, 0.0, 1.0)


def check_scaled_rewards(batch: Batch, gamma: float):
    limit = (1.0 - gamma) + REWARD_TOLERANCE
    if np.any(batch.rewards > limit):
        raise UnscaledRewardError(
            f"Reward {float(np.max(batch.rewards)):.4g} exceeds 1 - gamma = {1.0 - gamma:.4g}; "
            "scale rewards by (1 - gamma) first"
        )


def critic_target(batch: Batch, q_target: Mlp, policy_target: Mlp, gamma: float,
                  stochastic: bool = False) -> np.ndarray:
    """
    Regression targets for a critic step

    Args:
        batch: Transitions with rewards already scaled by (1 - gamma)
        q_target: Target critic
        policy_target: Target policy providing the bootstrap action
        gamma: Discount factor
        stochastic: Policy is a squashed-Gaussian head (greedy action used)

    Returns:
        Targets in [0, 1], shape (batch,)
    """
    _require_next_obs(batch)
    check_scaled_rewards(batch, gamma)
    next_actions = deterministic_action(policy_target, batch.next_obs, stochastic)
    next_q = critic_forward(q_target, batch.next_obs, next_actions)
    return bellman_targets(batch.rewards, batch.done, next_q, gamma)


def _require_next_obs(batch: Batch):
    if batch.next_obs is None or np.shape(batch.next_obs) != np.shape(batch.obs):
        raise ValueError("Batch lacks next states")


class _Smoothness:
    """Temporal, spatial and pre-activation terms of one deterministic batch pass"""

    def __init__(self, bundle: "AgentBundle", batch: Batch, main: DeterministicPass,
                 noise=None, rng: Optional[np.random.Generator] = None):
        _require_next_obs(batch)
        if main.stochastic:
            raise ValueError("Smoothness regularizers need a deterministic policy")
        policy = bundle.policy
        self.next_pass = DeterministicPass(policy, batch.next_obs)
        if noise is None:
            rng = rng if rng is not None else np.random.default_rng()
            noise = rng.standard_normal(batch.obs.shape) * bundle.obs_stats.sigma(bundle.weights.sigma_scale)
        self.perturbed_pass = DeterministicPass(policy, batch.obs + noise)

        a = main.actions
        diff_t = a - self.next_pass.actions
        diff_s = a - self.perturbed_pass.actions
        self.l_t = np.linalg.norm(diff_t, axis=1)
        self.l_s = np.linalg.norm(diff_s, axis=1)
        self._unit_t = _unit(diff_t, self.l_t)
        self._unit_s = _unit(diff_s, self.l_s)
        z = main.pre_activation
        self.p = np.mean(np.abs(z), axis=1)
        self._dp_dz = np.sign(z) / z.shape[1]

    def backprop(self, c_t, c_s, c_p) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Spread per-sample dLoss/dL_T, dLoss/dL_S, dLoss/dP

        Returns:
            (grad on main actions, grad on main pre-activation, parameter grad of the auxiliary passes)
        """
        g_t = np.asarray(c_t)[:, None] * self._unit_t
        g_s = np.asarray(c_s)[:, None] * self._unit_s
        aux = self.next_pass.param_grad(-g_t) + self.perturbed_pass.param_grad(-g_s)
        return g_t + g_s, np.asarray(c_p)[:, None] * self._dp_dz, aux


def _unit(diff: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # zero subgradient where the difference vanishes
    out = np.zeros_like(diff)
    nonzero = norm > 0
    out[nonzero] = diff[nonzero] / norm[nonzero, None]
    return out


def _actor_q(bundle: "AgentBundle", obs, actions) -> Tuple[np.ndarray, np.ndarray]:
    """Q used by the actor: min of the twin critics for SAC, the first critic otherwise"""
    q1, g1 = critic_value(bundle.critic, obs, actions)
    if not bundle.stochastic or bundle.critic2 is None:
        return q1, g1
    q2, g2 = critic_value(bundle.critic2, obs, actions)
    first = q1 <= q2
    return np.where(first, q1, q2), np.where(first[:, None], g1, g2)


def q_objective(batch: Batch, bundle: "AgentBundle", rng: Optional[np.random.Generator] = None) -> ObjectiveOutput:
    """Plain actor loss: -mean Q(s, pi(s)), plus alpha * log pi for SAC"""
    main = policy_pass(bundle.policy, batch.obs, bundle.stochastic, rng)
    q, dq_da = _actor_q(bundle, batch.obs, main.actions)
    n = len(q)
    per_sample = q.copy()
    loss = -float(np.mean(q))
    grad_log_prob = None
    if main.stochastic:
        coef = bundle.weights.entropy_coef
        per_sample = q - coef * main.log_prob
        loss = -float(np.mean(per_sample))
        grad_log_prob = np.full(n, coef / n)
    grad = main.param_grad(-dq_da / n, grad_log_prob=grad_log_prob)
    _check_finite(loss, grad)
    return ObjectiveOutput(loss, grad, per_sample, {"q": float(np.mean(q))})


def caps_linear_objective(batch: Batch, bundle: "AgentBundle", noise=None,
                          rng: Optional[np.random.Generator] = None) -> ObjectiveOutput:
    """
    loss = -mean[Q(s, pi(s)) - lambda_T * L_T - lambda_S * L_S]

    L_T = ||pi(s) - pi(s')||, L_S = ||pi(s) - pi(s + noise)||.
    """
    w = bundle.weights
    main = DeterministicPass(bundle.policy, batch.obs)
    smooth = _Smoothness(bundle, batch, main, noise, rng)
    q, dq_da = critic_value(bundle.critic, batch.obs, main.actions)
    n = len(q)

    per_sample = q - w.lambda_t * smooth.l_t - w.lambda_s * smooth.l_s
    loss = -float(np.mean(per_sample))

    g_a, g_z, aux = smooth.backprop(np.full(n, w.lambda_t / n), np.full(n, w.lambda_s / n), np.zeros(n))
    grad = main.param_grad(-dq_da / n + g_a, g_z) + aux
    _check_finite(loss, grad)
    return ObjectiveOutput(loss, grad, per_sample, {
        "q": float(np.mean(q)),
        "l_t": float(np.mean(smooth.l_t)),
        "l_s": float(np.mean(smooth.l_s)),
    })


def multiplicative_objective(batch: Batch, bundle: "AgentBundle", noise=None,
                             rng: Optional[np.random.Generator] = None) -> ObjectiveOutput:
    """
    loss = -mean (Q * fT * fS * fA) ** (1/4), Q clamped to [q_floor, 1]
    """
    w = bundle.weights
    main = DeterministicPass(bundle.policy, batch.obs)
    smooth = _Smoothness(bundle, batch, main, noise, rng)
    q, dq_da = critic_value(bundle.critic, batch.obs, main.actions)
    n = len(q)

    log_q, dlog_q = _log_factors(q, w)
    factors = {
        "q": np.exp(log_q),
        "f_t": threshold_factor(smooth.l_t, w.w_t),
        "f_s": threshold_factor(smooth.l_s, w.w_s),
        "f_a": threshold_factor(smooth.p, w.w_a),
    }
    check_factor_range(factors)
    j = np.exp((log_q + _log_regularizers(smooth.l_t, smooth.l_s, smooth.p, w)) / 4.0)
    check_factor_range({"J": j})
    loss = -float(np.mean(j))

    # dLoss/dlog-sum per sample
    coef = -j / (4.0 * n)
    g_a, g_z, aux = smooth.backprop(-coef / (w.w_t + smooth.l_t), -coef / (w.w_s + smooth.l_s),
                                    -coef / (w.w_a + smooth.p))
    grad = main.param_grad((coef * dlog_q)[:, None] * dq_da + g_a, g_z) + aux
    _check_finite(loss, grad)
    return ObjectiveOutput(loss, grad, j, _means(factors, j))


def anchored_objective(live_batch: Batch, sim_batch: Optional[Batch], bundle: "AgentBundle",
                       regularized: bool = True, noise=None,
                       rng: Optional[np.random.Generator] = None) -> ObjectiveOutput:
    """
    Anchored actor loss

    With regularizers: loss = -mean (Q_live * Q_anchor ** w * fT * fS * fA) ** (1/5).
    Without (plain DDPG, TD3, SAC actors): loss = -mean (Q_live * Q_anchor ** w) ** (1/2),
    plus alpha * log pi for SAC. Q_live is evaluated on live states, Q_anchor
    with the current policy on simulation states.

    Args:
        live_batch: Batch from the live buffer
        sim_batch: Batch of the same size from the sim buffer
        bundle: Agent with an anchor critic
        regularized: Include the three smoothness factors
        noise: Optional fixed spatial perturbation for the live states
        rng: Generator for perturbations and policy samples
    """
    if bundle.anchor is None:
        raise NotAnchoredError("Agent has no anchor critic")
    if sim_batch is None or len(sim_batch) == 0:
        raise AnchorDataError("anchor without anchor data")
    if live_batch.role != LIVE or sim_batch.role != SIM:
        raise ValueError(f"Expected live and sim batches, got {live_batch.role} and {sim_batch.role}")
    if len(live_batch) != len(sim_batch):
        raise ValueError("Live and sim batches must have the same size")

    w = bundle.weights
    n = len(live_batch)
    main = policy_pass(bundle.policy, live_batch.obs, bundle.stochastic, rng)
    q, dq_da = _actor_q(bundle, live_batch.obs, main.actions)
    sim_pass = policy_pass(bundle.policy, sim_batch.obs, bundle.stochastic, rng)
    q_anchor, dq_anchor_da = critic_value(bundle.anchor, sim_batch.obs, sim_pass.actions)

    log_q, dlog_q = _log_factors(q, w)
    log_anchor, dlog_anchor = _log_factors(q_anchor, w)
    factors = {"q": np.exp(log_q), "q_anchor": np.exp(log_anchor)}
    log_sum = log_q + w.w_anchor * log_anchor
    roots = 2.0
    smooth = None
    if regularized:
        smooth = _Smoothness(bundle, live_batch, main, noise, rng)
        factors.update({
            "f_t": threshold_factor(smooth.l_t, w.w_t),
            "f_s": threshold_factor(smooth.l_s, w.w_s),
            "f_a": threshold_factor(smooth.p, w.w_a),
        })
        log_sum = log_sum + _log_regularizers(smooth.l_t, smooth.l_s, smooth.p, w)
        roots = 5.0
    check_factor_range(factors)
    j = np.exp(log_sum / roots)
    check_factor_range({"J": j})

    per_sample = j
    loss = -float(np.mean(j))
    grad_log_prob = None
    if main.stochastic:
        per_sample = j - w.entropy_coef * main.log_prob
        loss = -float(np.mean(per_sample))
        grad_log_prob = np.full(n, w.entropy_coef / n)

    coef = -j / (roots * n)
    g_live = (coef * dlog_q)[:, None] * dq_da
    g_pre = None
    aux = 0.0
    if smooth is not None:
        g_a, g_pre, aux = smooth.backprop(-coef / (w.w_t + smooth.l_t), -coef / (w.w_s + smooth.l_s),
                                          -coef / (w.w_a + smooth.p))
        g_live = g_live + g_a
    grad = main.param_grad(g_live, g_pre, grad_log_prob) + aux
    grad = grad + sim_pass.param_grad((coef * w.w_anchor * dlog_anchor)[:, None] * dq_anchor_da)
    _check_finite(loss, grad)
    return ObjectiveOutput(loss, grad, per_sample, _means(factors, j))


def _means(factors: Dict[str, np.ndarray], j: np.ndarray) -> Dict[str, float]:
    out = {name: float(np.mean(values)) for name, values in factors.items()}
    out["j"] = float(np.mean(j))
    return out


def _check_finite(loss: float, grad: np.ndarray):
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise ObjectiveRangeError("Non-finite actor loss or gradient")


def regression_step_grad(critic: Mlp, obs, actions, targets) -> Tuple[float, np.ndarray]:
    """
    Mean-squared Bellman error and its gradient

    Returns:
        (0.5 * mean (Q - y)^2, parameter gradient)
    """
    x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(actions)], axis=1)
    q, cache = forward_cached(critic, x)
    residual = q[:, 0] - np.asarray(targets, dtype=np.float64)
    n = len(residual)
    loss = 0.5 * float(np.mean(residual ** 2))
    return loss, backward(critic, (residual / n)[:, None], cache)
