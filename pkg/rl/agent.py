"""
Agent bundles and one update cycle for each supported algorithm

Algorithms:
    ddpg              deterministic policy, Q actor loss
    ddpg_linear_caps  deterministic policy, linear CAPS actor loss
    ddpgx             deterministic policy, multiplicative actor loss
    td3               twin critics, target smoothing, delayed actor updates
    sac               squashed-Gaussian policy, twin critics, fixed entropy coefficient
Any algorithm except ddpg_linear_caps can be anchored: an anchor critic
trained only on simulation data is multiplied into the actor objective.
"""

import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import structlog

from nn.mlp import IDENTITY, TANH, ArchitectureMismatch, Mlp, init_mlp
from nn.optim import AdamState, adam_step, polyak_update
from rl.buffer import LIVE, SIM, Batch, ReplayBuffer
from rl.objectives import (
    AnchorDataError,
    NotAnchoredError,
    ObjectiveOutput,
    ObjectiveWeights,
    RunningStats,
    anchored_objective,
    bellman_targets,
    caps_linear_objective,
    check_scaled_rewards,
    critic_target,
    multiplicative_objective,
    q_objective,
    regression_step_grad,
)
from rl.policy import (
    SquashedGaussianPass,
    critic_forward,
    deterministic_action,
    policy_output_size,
)

logger = structlog.get_logger(__name__)

ALGORITHMS = ("ddpg", "ddpg_linear_caps", "ddpgx", "sac", "td3")
TWIN_CRITIC_ALGORITHMS = ("sac", "td3")
ANCHORABLE = ("ddpg", "ddpgx", "sac", "td3")


@dataclass
class AgentBundle:
    """
    Everything a training or adaptation run updates

    Attributes:
        algo: One of ALGORITHMS
        policy: Actor network (tanh head, or identity mean/log-std head for SAC)
        critic: Live critic Q_pi
        policy_target, critic_target: Polyak-averaged copies
        policy_opt, critic_opt: Adam states
        weights: Objective hyperparameters
        obs_stats: Running observation statistics (spatial noise scale)
        critic2, critic2_target, critic2_opt: Second critic (TD3, SAC)
        anchor, anchor_target, anchor_opt: Anchor critic Q_psi (anchored mode)
        version: Policy version, bumped on every export
        updates: Critic updates performed
    """

    algo: str
    policy: Mlp
    critic: Mlp
    policy_target: Mlp
    critic_target: Mlp
    policy_opt: AdamState
    critic_opt: AdamState
    weights: ObjectiveWeights
    obs_stats: RunningStats
    critic2: Optional[Mlp] = None
    critic2_target: Optional[Mlp] = None
    critic2_opt: Optional[AdamState] = None
    anchor: Optional[Mlp] = None
    anchor_target: Optional[Mlp] = None
    anchor_opt: Optional[AdamState] = None
    target_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    version: int = 1
    updates: int = 0

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"Unknown algorithm {self.algo!r}, expected one of {ALGORITHMS}")
        pairs = [(self.policy, self.policy_target), (self.critic, self.critic_target),
                 (self.critic2, self.critic2_target), (self.anchor, self.anchor_target)]
        for online, target in pairs:
            if (online is None) != (target is None):
                raise ArchitectureMismatch("Online and target networks must both be present")
            if online is not None and not online.same_architecture(target):
                raise ArchitectureMismatch(f"Target {target.layer_sizes} does not match {online.layer_sizes}")
        if (self.algo in TWIN_CRITIC_ALGORITHMS) != (self.critic2 is not None):
            raise ValueError(f"{self.algo} twin critic mismatch")
        if self.anchor is not None and self.algo not in ANCHORABLE:
            raise ValueError(f"{self.algo} does not support an anchor critic")

    @property
    def stochastic(self) -> bool:
        return self.algo == "sac"

    @property
    def anchored(self) -> bool:
        return self.anchor is not None

    @property
    def regularized(self) -> bool:
        return self.algo == "ddpgx"

    @property
    def action_size(self) -> int:
        return self.critic.input_size - self.policy.input_size


def make_bundle(algo: str, obs_size: int, action_size: int, rng: np.random.Generator,
                weights: Optional[ObjectiveWeights] = None, hidden: Sequence[int] = (32, 32),
                pi_lr: float = 1e-4, q_lr: float = 1e-4, target_noise: float = 0.2,
                noise_clip: float = 0.5, policy_delay: int = 2) -> AgentBundle:
    """
    Fresh agent for obs_size -> action_size control

    Args:
        algo: One of ALGORITHMS
        obs_size: Observation width
        action_size: Action width
        rng: Generator for weight initialization
        weights: Objective hyperparameters (defaults when None)
        hidden: Hidden layer widths shared by actor and critics
        pi_lr, q_lr: Adam learning rates
        target_noise, noise_clip, policy_delay: TD3 settings

    Returns:
        AgentBundle with targets equal to the online networks
    """
    if algo not in ALGORITHMS:
        raise ValueError(f"Unknown algorithm {algo!r}, expected one of {ALGORITHMS}")
    stochastic = algo == "sac"
    policy_sizes = (obs_size, *hidden, policy_output_size(action_size, stochastic))
    policy = init_mlp(policy_sizes, rng, IDENTITY if stochastic else TANH, final_scale=1e-2)
    critic_sizes = (obs_size + action_size, *hidden, 1)
    critic = init_mlp(critic_sizes, rng, IDENTITY)

    twin = {}
    if algo in TWIN_CRITIC_ALGORITHMS:
        critic2 = init_mlp(critic_sizes, rng, IDENTITY)
        twin = dict(critic2=critic2, critic2_target=critic2.copy(),
                    critic2_opt=AdamState(critic2.weights.size, lr=q_lr))

    return AgentBundle(
        algo=algo,
        policy=policy,
        critic=critic,
        policy_target=policy.copy(),
        critic_target=critic.copy(),
        policy_opt=AdamState(policy.weights.size, lr=pi_lr),
        critic_opt=AdamState(critic.weights.size, lr=q_lr),
        weights=weights or ObjectiveWeights(),
        obs_stats=RunningStats(obs_size),
        target_noise=target_noise,
        noise_clip=noise_clip,
        policy_delay=policy_delay,
        **twin,
    )


def attach_anchor(bundle: AgentBundle, q_lr: Optional[float] = None, reset_target: bool = False,
                  weights: Optional[ObjectiveWeights] = None) -> AgentBundle:
    """
    Freeze the simulation critic into an anchor for adaptation

    The anchor starts as a copy of the live critic; its target is carried
    over from sim training unless reset_target is set. The returned bundle
    shares no arrays with the input.
    """
    if bundle.algo not in ANCHORABLE:
        raise ValueError(f"{bundle.algo} does not support an anchor critic")
    lr = q_lr if q_lr is not None else bundle.critic_opt.lr
    anchor = bundle.critic.copy()
    anchor_target = anchor.copy() if reset_target else bundle.critic_target.copy()
    return clone_bundle(bundle, anchor=anchor, anchor_target=anchor_target,
                        anchor_opt=AdamState(anchor.weights.size, lr=lr),
                        weights=weights or bundle.weights)


def clone_bundle(bundle: AgentBundle, **changes) -> AgentBundle:
    """Deep copy of networks and optimizer moments, with optional field changes"""
    copied = {}
    for f in dataclasses.fields(bundle):
        value = getattr(bundle, f.name)
        if isinstance(value, Mlp):
            value = value.copy()
        elif isinstance(value, AdamState):
            value = dataclasses.replace(value, m=value.m.copy(), v=value.v.copy())
        elif isinstance(value, RunningStats):
            stats = RunningStats(len(value.mean))
            stats.count, stats.mean, stats._m2 = value.count, value.mean.copy(), value._m2.copy()
            value = stats
        copied[f.name] = value
    copied.update(changes)
    return AgentBundle(**copied)


def act(bundle: AgentBundle, obs, rng: np.random.Generator, noise_std: float = 0.0) -> np.ndarray:
    """Action for one observation; Gaussian exploration noise for deterministic policies, sampling for SAC"""
    obs = np.asarray(obs, dtype=np.float64)
    if bundle.stochastic:
        if noise_std <= 0.0:
            return deterministic_action(bundle.policy, obs, True)
        return SquashedGaussianPass(bundle.policy, obs, rng).actions[0]
    action = deterministic_action(bundle.policy, obs, False)
    if noise_std > 0.0:
        action = action + rng.normal(0.0, noise_std, size=action.shape)
    return np.clip(action, -1.0, 1.0)


def _next_q(bundle: AgentBundle, batch: Batch, rng: np.random.Generator) -> np.ndarray:
    if bundle.algo == "td3":
        next_actions = deterministic_action(bundle.policy_target, batch.next_obs, False)
        smoothing = np.clip(rng.normal(0.0, bundle.target_noise, size=next_actions.shape),
                            -bundle.noise_clip, bundle.noise_clip)
        next_actions = np.clip(next_actions + smoothing, -1.0, 1.0)
        return np.minimum(critic_forward(bundle.critic_target, batch.next_obs, next_actions),
                          critic_forward(bundle.critic2_target, batch.next_obs, next_actions))
    if bundle.algo == "sac":
        sample = SquashedGaussianPass(bundle.policy, batch.next_obs, rng)
        q = np.minimum(critic_forward(bundle.critic_target, batch.next_obs, sample.actions),
                       critic_forward(bundle.critic2_target, batch.next_obs, sample.actions))
        return q - bundle.weights.entropy_coef * sample.log_prob
    next_actions = deterministic_action(bundle.policy_target, batch.next_obs, False)
    return critic_forward(bundle.critic_target, batch.next_obs, next_actions)


def critic_update(bundle: AgentBundle, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
    """
    One Bellman regression step on the live critic(s)

    Args:
        bundle: Agent, updated in place
        batch: Transitions with rewards scaled by (1 - gamma)
        rng: Generator for target smoothing / SAC sampling

    Returns:
        {'critic_loss', 'target_mean'}
    """
    gamma = bundle.weights.gamma
    check_scaled_rewards(batch, gamma)
    if bundle.algo in TWIN_CRITIC_ALGORITHMS:
        targets = bellman_targets(batch.rewards, batch.done, _next_q(bundle, batch, rng), gamma)
    else:
        targets = critic_target(batch, bundle.critic_target, bundle.policy_target, gamma)
    if np.any(targets < 0.0) or np.any(targets > 1.0):
        raise AssertionError("Regression targets left [0, 1]")

    loss, grad = regression_step_grad(bundle.critic, batch.obs, batch.actions, targets)
    bundle.critic = bundle.critic.with_weights(adam_step(bundle.critic_opt, bundle.critic.weights, grad))
    if bundle.critic2 is not None:
        loss2, grad2 = regression_step_grad(bundle.critic2, batch.obs, batch.actions, targets)
        bundle.critic2 = bundle.critic2.with_weights(adam_step(bundle.critic2_opt, bundle.critic2.weights, grad2))
        loss = 0.5 * (loss + loss2)
    return {"critic_loss": loss, "target_mean": float(np.mean(targets))}


def update_anchor_critic(sim_batch: Optional[Batch], bundle: AgentBundle) -> float:
    """
    One Bellman regression step of the anchor critic on simulation data

    Bootstrap actions come from the adapting policy's target network.

    Args:
        sim_batch: Sim-buffer transitions with rewards scaled by (1 - gamma)
        bundle: Anchored agent, updated in place

    Returns:
        Regression loss
    """
    if not bundle.anchored:
        raise NotAnchoredError("update_anchor_critic called on an agent without an anchor critic")
    if sim_batch is None or len(sim_batch) == 0:
        raise AnchorDataError("anchor without anchor data")
    if sim_batch.role != SIM:
        raise ValueError(f"Anchor critic only trains on sim data, got a {sim_batch.role} batch")
    targets = critic_target(sim_batch, bundle.anchor_target, bundle.policy_target, bundle.weights.gamma,
                            stochastic=bundle.stochastic)
    loss, grad = regression_step_grad(bundle.anchor, sim_batch.obs, sim_batch.actions, targets)
    bundle.anchor = bundle.anchor.with_weights(adam_step(bundle.anchor_opt, bundle.anchor.weights, grad))
    return loss


def actor_objective(bundle: AgentBundle, batch: Batch, sim_batch: Optional[Batch],
                    rng: np.random.Generator) -> ObjectiveOutput:
    """Objective selected by algorithm and anchoring"""
    if bundle.anchored:
        return anchored_objective(batch, sim_batch, bundle, regularized=bundle.regularized, rng=rng)
    if bundle.algo == "ddpg_linear_caps":
        return caps_linear_objective(batch, bundle, rng=rng)
    if bundle.algo == "ddpgx":
        return multiplicative_objective(batch, bundle, rng=rng)
    return q_objective(batch, bundle, rng)


def actor_update(bundle: AgentBundle, batch: Batch, sim_batch: Optional[Batch],
                 rng: np.random.Generator) -> ObjectiveOutput:
    out = actor_objective(bundle, batch, sim_batch, rng)
    bundle.policy = bundle.policy.with_weights(adam_step(bundle.policy_opt, bundle.policy.weights, out.grad))
    return out


def update_targets(bundle: AgentBundle, rho: float):
    bundle.policy_target = polyak_update(bundle.policy_target, bundle.policy, rho)
    bundle.critic_target = polyak_update(bundle.critic_target, bundle.critic, rho)
    if bundle.critic2 is not None:
        bundle.critic2_target = polyak_update(bundle.critic2_target, bundle.critic2, rho)
    if bundle.anchor is not None:
        bundle.anchor_target = polyak_update(bundle.anchor_target, bundle.anchor, rho)


def update_cycle(bundle: AgentBundle, buffer: ReplayBuffer, sim_buffer: Optional[ReplayBuffer],
                 batch_size: int, rho: float, rng: np.random.Generator) -> Dict[str, float]:
    """
    Critic step, anchor step (anchored mode), actor step and target averaging

    TD3 skips the actor and target steps except every policy_delay updates.
    """
    gamma = bundle.weights.gamma
    batch = buffer.sample(batch_size).scaled(gamma)
    stats = critic_update(bundle, batch, rng)

    sim_batch = None
    if bundle.anchored:
        if sim_buffer is None or len(sim_buffer) == 0:
            raise AnchorDataError("anchor without anchor data")
        if buffer.role != LIVE:
            raise ValueError("Anchored updates draw the live batch from a live buffer")
        sim_batch = sim_buffer.sample(batch_size).scaled(gamma)
        stats["anchor_loss"] = update_anchor_critic(sim_batch, bundle)

    bundle.updates += 1
    if bundle.algo == "td3" and bundle.updates % bundle.policy_delay != 0:
        return stats

    out = actor_update(bundle, batch, sim_batch, rng)
    update_targets(bundle, rho)
    stats["actor_loss"] = out.loss
    stats.update(out.factors)
    return stats
