import math

import numpy as np
import pytest

from nn.mlp import IDENTITY, init_mlp
from rl.agent import attach_anchor, clone_bundle, make_bundle
from rl.buffer import LIVE, SIM, Batch
from rl.objectives import (
    AnchorDataError,
    NotAnchoredError,
    ObjectiveRangeError,
    ObjectiveWeights,
    UnscaledRewardError,
    anchored_objective,
    bellman_targets,
    caps_linear_objective,
    check_factor_range,
    compose_anchored,
    compose_multiplicative,
    critic_target,
    multiplicative_objective,
    q_objective,
    threshold_factor,
)

W = ObjectiveWeights()


def make_batch(rng, n=16, role=LIVE, reward=0.005):
    obs = rng.normal(size=(n, 4))
    return Batch(obs=obs, actions=rng.uniform(-1, 1, size=(n, 1)), rewards=np.full(n, reward),
                 next_obs=obs + 0.3 * rng.normal(size=(n, 4)), done=np.zeros(n), role=role)


def in_range_critic(rng):
    """Critic whose outputs stay well inside (q_floor, 1)"""
    critic = init_mlp((5, 8, 8, 1), rng, IDENTITY, final_scale=0.02)
    weights = critic.weights.astype(np.float64)
    weights[-1] = 0.5
    return critic.with_weights(weights)


def prepared_bundle(algo, rng, anchored=False):
    bundle = make_bundle(algo, 4, 1, rng, hidden=(8, 8))
    critic = in_range_critic(rng)
    bundle = clone_bundle(bundle, critic=critic, critic_target=critic.copy(),
                          policy=bundle.policy.with_weights(bundle.policy.weights.astype(np.float64)))
    return attach_anchor(bundle) if anchored else bundle


def numeric_grad(loss_of, bundle, indices, eps=1e-6):
    base = bundle.policy.weights.astype(np.float64).copy()
    out = []
    for i in indices:
        step = np.zeros_like(base)
        step[i] = eps
        bundle.policy = bundle.policy.with_weights(base + step)
        plus = loss_of(bundle)
        bundle.policy = bundle.policy.with_weights(base - step)
        minus = loss_of(bundle)
        out.append((plus - minus) / (2 * eps))
    bundle.policy = bundle.policy.with_weights(base)
    return np.array(out)


def assert_gradient_matches(loss_fn, bundle, rng):
    out = loss_fn(bundle)
    indices = rng.choice(bundle.policy.weights.size, size=12, replace=False)
    expected = numeric_grad(lambda b: loss_fn(b).loss, bundle, indices)
    assert out.grad[indices] == pytest.approx(expected, rel=1e-4, abs=1e-7)


# ------------------------------- Composition -------------------------------

def test_threshold_factor_half_at_w():
    assert threshold_factor(0.3, 0.3) == pytest.approx(0.5)
    assert threshold_factor(0.0, 0.3) == 1.0


def test_all_unit_factors_give_one():
    assert compose_multiplicative(1.0, 0.0, 0.0, 0.0, W) == pytest.approx(1.0)
    assert compose_anchored(1.0, 1.0, 0.0, 0.0, 0.0, W) == pytest.approx(1.0)


def test_every_factor_at_half():
    j = compose_multiplicative(0.5, W.w_t, W.w_s, W.w_a, W)
    assert j == pytest.approx(0.5)


def test_anchor_factor_alone():
    assert compose_anchored(1.0, 0.64, 0.0, 0.0, 0.0, W) == pytest.approx(0.64 ** 0.2)
    assert compose_anchored(1.0, 0.64, 0.0, 0.0, 0.0, W) == pytest.approx(0.9146, abs=1e-4)


def test_zero_anchor_weight_reduces_to_multiplicative(rng):
    weights = ObjectiveWeights(w_anchor=0.0)
    q = rng.uniform(0.05, 1.0, size=20)
    l_t, l_s, p = rng.uniform(0, 1, size=(3, 20))
    j = compose_multiplicative(q, l_t, l_s, p, weights)
    anchored = compose_anchored(q, rng.uniform(0.05, 1.0, size=20), l_t, l_s, p, weights)
    assert anchored == pytest.approx(j ** 0.8)


def test_unregularized_anchored_is_square_root():
    assert compose_anchored(0.81, 0.25, 5.0, 5.0, 5.0, W, regularized=False) == pytest.approx(0.45)


def test_q_clamped_before_log():
    assert compose_multiplicative(-3.0, 0.0, 0.0, 0.0, W) == pytest.approx(W.q_floor ** 0.25)
    assert compose_multiplicative(4.0, 0.0, 0.0, 0.0, W) == pytest.approx(1.0)


def test_factor_range_checks():
    check_factor_range({"q": [1e-6, 1.0]})
    for bad in ([0.0], [1.5], [math.nan], [math.inf]):
        with pytest.raises(ObjectiveRangeError):
            check_factor_range({"f_t": bad})


def test_weight_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(gamma=1.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(w_t=0.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(w_anchor=-1.0)


# ------------------------------- Critic targets -------------------------------

def test_bellman_targets_clamped():
    y = bellman_targets([0.01, 0.01, 0.01], [0.0, 0.0, 1.0], np.array([2.0, -1.0, 5.0]), 0.99)
    assert y.tolist() == pytest.approx([1.0, 0.0, 0.01])


def test_unscaled_rewards_rejected(rng):
    bundle = make_bundle("ddpg", 4, 1, rng, hidden=(8, 8))
    with pytest.raises(UnscaledRewardError):
        critic_target(make_batch(rng, reward=0.5), bundle.critic_target, bundle.policy_target, 0.99)


def test_scaled_targets_in_unit_interval(rng):
    bundle = make_bundle("ddpg", 4, 1, rng, hidden=(8, 8))
    y = critic_target(make_batch(rng, reward=0.01), bundle.critic_target, bundle.policy_target, 0.99)
    assert np.all((y >= 0.0) & (y <= 1.0))


def test_batch_without_next_states(rng):
    bundle = make_bundle("ddpg", 4, 1, rng, hidden=(8, 8))
    batch = make_batch(rng)
    batch.next_obs = None
    with pytest.raises(ValueError):
        critic_target(batch, bundle.critic_target, bundle.policy_target, 0.99)


# ------------------------------- Exact gradients -------------------------------

def test_q_objective_gradient(rng):
    bundle = prepared_bundle("ddpg", rng)
    batch = make_batch(rng)
    assert_gradient_matches(lambda b: q_objective(batch, b), bundle, rng)


def test_linear_caps_gradient(rng):
    bundle = prepared_bundle("ddpg_linear_caps", rng)
    batch = make_batch(rng)
    noise = 0.05 * rng.normal(size=batch.obs.shape)
    assert_gradient_matches(lambda b: caps_linear_objective(batch, b, noise=noise), bundle, rng)


def test_multiplicative_gradient(rng):
    bundle = prepared_bundle("ddpgx", rng)
    batch = make_batch(rng)
    noise = 0.05 * rng.normal(size=batch.obs.shape)
    out = multiplicative_objective(batch, bundle, noise=noise)
    assert set(out.factors) == {"q", "f_t", "f_s", "f_a", "j"}
    assert_gradient_matches(lambda b: multiplicative_objective(batch, b, noise=noise), bundle, rng)


def test_anchored_gradient(rng):
    bundle = prepared_bundle("ddpgx", rng, anchored=True)
    live = make_batch(rng, role=LIVE)
    sim = make_batch(rng, role=SIM)
    noise = 0.05 * rng.normal(size=live.obs.shape)
    out = anchored_objective(live, sim, bundle, noise=noise)
    assert 0.0 < out.factors["q_anchor"] <= 1.0
    assert_gradient_matches(lambda b: anchored_objective(live, sim, b, noise=noise), bundle, rng)


def test_unregularized_anchored_gradient(rng):
    bundle = prepared_bundle("ddpg", rng, anchored=True)
    live = make_batch(rng, role=LIVE)
    sim = make_batch(rng, role=SIM)
    out = anchored_objective(live, sim, bundle, regularized=False)
    assert "f_t" not in out.factors
    assert_gradient_matches(lambda b: anchored_objective(live, sim, b, regularized=False), bundle, rng)


def test_multiplicative_matches_composition(rng):
    bundle = prepared_bundle("ddpgx", rng)
    batch = make_batch(rng)
    out = multiplicative_objective(batch, bundle, noise=np.zeros_like(batch.obs))
    # zero perturbation leaves the spatial factor at one
    assert out.factors["f_s"] == pytest.approx(1.0)
    assert out.loss == pytest.approx(-np.mean(out.per_sample))


# ------------------------------- Anchor preconditions -------------------------------

def test_anchor_requires_anchor_critic(rng):
    bundle = prepared_bundle("ddpgx", rng)
    with pytest.raises(NotAnchoredError):
        anchored_objective(make_batch(rng), make_batch(rng, role=SIM), bundle)


def test_anchor_requires_sim_data(rng):
    bundle = prepared_bundle("ddpgx", rng, anchored=True)
    with pytest.raises(AnchorDataError):
        anchored_objective(make_batch(rng), None, bundle)


def test_anchor_batches_must_have_roles(rng):
    bundle = prepared_bundle("ddpgx", rng, anchored=True)
    with pytest.raises(ValueError):
        anchored_objective(make_batch(rng, role=SIM), make_batch(rng, role=SIM), bundle)
    with pytest.raises(ValueError):
        anchored_objective(make_batch(rng, n=8), make_batch(rng, n=16, role=SIM), bundle)
