import math

import numpy as np
import pytest

from nn.mlp import ArchitectureMismatch, init_mlp
from nn.optim import AdamState, adam_step, polyak_update


def scalar_adam(values, grads_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    out = []
    for x0, g_list in zip(values, zip(*grads_seq)):
        x, m, v = x0, 0.0, 0.0
        for t, g in enumerate(g_list, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(x)
    return np.array(out)


def test_adam_matches_scalar_reference(rng):
    params = rng.normal(size=5)
    grads_seq = [rng.normal(size=5) for _ in range(4)]
    state = AdamState(5, lr=1e-3)
    x = params.copy()
    for g in grads_seq:
        x = adam_step(state, x, g)
    assert state.step == 4
    assert x == pytest.approx(scalar_adam(params, grads_seq), abs=1e-12)


def test_first_step_moves_by_lr():
    state = AdamState(3, lr=0.01)
    out = adam_step(state, np.zeros(3), np.array([2.0, -5.0, 0.3]))
    assert out == pytest.approx([-0.01, 0.01, -0.01], rel=1e-6)


def test_adam_preserves_dtype():
    state = AdamState(2)
    out = adam_step(state, np.zeros(2, dtype=np.float32), np.ones(2))
    assert out.dtype == np.float32


def test_adam_shape_mismatch():
    with pytest.raises(ArchitectureMismatch):
        adam_step(AdamState(3), np.zeros(4), np.zeros(4))


def test_polyak_edges(rng):
    target = init_mlp((2, 3, 1), rng)
    online = init_mlp((2, 3, 1), rng)
    assert polyak_update(target, online, 1.0) == target
    assert polyak_update(target, online, 0.0) == online
    mixed = polyak_update(target, online, 0.5)
    expected = 0.5 * target.weights.astype(np.float64) + 0.5 * online.weights.astype(np.float64)
    assert mixed.weights == pytest.approx(expected.astype(np.float32))


def test_polyak_rejects_bad_rho_and_shapes(rng):
    a = init_mlp((2, 3, 1), rng)
    with pytest.raises(ValueError):
        polyak_update(a, a.copy(), 1.5)
    with pytest.raises(ArchitectureMismatch):
        polyak_update(a, init_mlp((2, 4, 1), rng), 0.5)
