import numpy as np
import pytest

from nn.mlp import (
    IDENTITY,
    ArchitectureMismatch,
    MissingForwardCache,
    Mlp,
    backward,
    backward_full,
    forward,
    forward_cached,
    init_mlp,
    param_count,
    pre_activation_output,
)


def numeric_grad(f, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = eps
        grad[i] = (f(x + step) - f(x - step)) / (2 * eps)
    return grad


def test_param_count():
    assert param_count((13, 32, 32, 4)) == 13 * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4


def test_forward_matches_manual(rng):
    net = init_mlp((3, 5, 2), rng)
    x = rng.normal(size=3)
    (w1, b1), (w2, b2) = net.layers(np.asarray(net.weights, dtype=np.float64))
    expected = np.tanh(np.tanh(x @ w1 + b1) @ w2 + b2)
    assert forward(net, x) == pytest.approx(expected, abs=1e-12)


def test_batch_and_single_agree(rng):
    net = init_mlp((4, 6, 3), rng, output_activation=IDENTITY)
    x = rng.normal(size=(5, 4))
    batch = forward(net, x)
    for i in range(5):
        assert forward(net, x[i]) == pytest.approx(batch[i])


def test_zero_net_outputs_zero():
    net = Mlp((4, 8, 2), np.zeros(param_count((4, 8, 2)), dtype=np.float32))
    assert forward(net, np.ones(4)) == pytest.approx(np.zeros(2))


def test_bad_input_width_raises(rng):
    net = init_mlp((4, 8, 2), rng)
    with pytest.raises(ArchitectureMismatch):
        forward(net, np.ones(5))


def test_bad_weight_length_raises():
    with pytest.raises(ArchitectureMismatch):
        Mlp((4, 8, 2), np.zeros(10))


def test_backward_without_cache_raises(rng):
    net = init_mlp((2, 3, 1), rng)
    with pytest.raises(MissingForwardCache):
        backward(net, np.ones(1), None)


@pytest.mark.parametrize("activation", ["tanh", "identity"])
def test_param_gradient_matches_finite_differences(rng, activation):
    net = init_mlp((3, 4, 4, 2), rng, output_activation=activation)
    net = net.with_weights(np.asarray(net.weights, dtype=np.float64))
    x = rng.normal(size=(6, 3))
    upstream = rng.normal(size=(6, 2))

    def loss(w):
        return float(np.sum(forward(net.with_weights(w), x) * upstream))

    _, cache = forward_cached(net, x)
    analytic = backward(net, upstream, cache)
    numeric = numeric_grad(loss, net.weights.copy())
    assert np.max(np.abs(analytic - numeric)) / (np.max(np.abs(numeric)) + 1e-12) < 1e-5


def test_input_gradient_matches_finite_differences(rng):
    net = init_mlp((3, 5, 1), rng, output_activation=IDENTITY)
    x = rng.normal(size=3)
    _, cache = forward_cached(net, x)
    analytic = backward_full(net, np.ones(1), cache).inputs
    numeric = numeric_grad(lambda v: float(forward(net, v)[0]), x)
    assert analytic == pytest.approx(numeric, abs=1e-6)


def test_equality_is_bitwise(rng):
    net = init_mlp((2, 3, 1), rng)
    twin = net.copy()
    assert net == twin
    twin.weights[0] = np.nextafter(twin.weights[0], np.float32(10))
    assert net != twin


def test_pre_activation_of_scalar_net():
    net = Mlp((1, 1), np.array([1.0, 0.0], dtype=np.float32))
    assert pre_activation_output(net, np.array([2.0])) == pytest.approx([2.0])
    assert forward(net, np.array([2.0])) == pytest.approx([np.tanh(2.0)])


def test_pre_activation_consistent_with_forward(rng):
    net = init_mlp((4, 8, 8, 2), rng)
    x = rng.normal(size=(20, 4))
    assert np.tanh(pre_activation_output(net, x)) == pytest.approx(forward(net, x), abs=1e-12)
    zero = Mlp((4, 8, 2), np.zeros(param_count((4, 8, 2)), dtype=np.float32))
    assert pre_activation_output(zero, x[0]) == pytest.approx(np.zeros(2))
