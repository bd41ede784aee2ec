"""
Dense tanh networks with exact gradients

Weights live in one flat vector in layer-major order. For each layer the
weight matrix (n_in x n_out, row-major) comes first, then the bias vector.
Hidden layers use tanh; the output layer uses tanh (policies) or identity
(critics, squashed-Gaussian heads).
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

TANH = "tanh"
IDENTITY = "identity"
ACTIVATIONS = (IDENTITY, TANH)


class ArchitectureMismatch(ValueError):
    """Raised when two networks or a network and an input disagree on shape"""


class MissingForwardCache(ValueError):
    """Raised when backward() is called without the matching forward cache"""


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(eq=False)
class Mlp:
    """
    Fixed-architecture feedforward network

    Attributes:
        layer_sizes: (input, hidden..., output) widths
        weights: Flat parameter vector (float32 for shipped networks)
        output_activation: 'tanh' or 'identity'
    """

    layer_sizes: Tuple[int, ...]
    weights: np.ndarray
    output_activation: str = TANH

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ArchitectureMismatch(f"Bad layer sizes {self.layer_sizes}")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"Unknown output activation {self.output_activation!r}")
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 1 or self.weights.size != param_count(self.layer_sizes):
            raise ArchitectureMismatch(
                f"Weight vector has {self.weights.size} entries, "
                f"layers {self.layer_sizes} need {param_count(self.layer_sizes)}"
            )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, weights: Optional[np.ndarray] = None) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) into the flat vector, one pair per layer"""
        flat = self.weights if weights is None else weights
        out = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = flat[offset:offset + n_in * n_out].reshape(n_in, n_out)
            offset += n_in * n_out
            b = flat[offset:offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.weights.copy(), self.output_activation)

    def with_weights(self, weights: np.ndarray) -> "Mlp":
        return Mlp(self.layer_sizes, weights, self.output_activation)

    def same_architecture(self, other: "Mlp") -> bool:
        return self.layer_sizes == other.layer_sizes and self.output_activation == other.output_activation

    def __eq__(self, other) -> bool:
        # bit-exact: NaN payloads and signed zeros count
        if not isinstance(other, Mlp) or not self.same_architecture(other):
            return False
        return np.asarray(self.weights, dtype="<f4").tobytes() == np.asarray(other.weights, dtype="<f4").tobytes()


@dataclass
class ForwardCache:
    """Activations remembered by forward() for the matching backward()"""

    activations: List[np.ndarray] = field(default_factory=list)
    pre_activation: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    batched: bool = True


class Backprop(NamedTuple):
    params: np.ndarray
    inputs: np.ndarray


def init_mlp(layer_sizes: Sequence[int], rng: np.random.Generator,
             output_activation: str = TANH, final_scale: float = 1.0) -> Mlp:
    """
    Xavier-uniform initialization with zero biases

    Args:
        layer_sizes: (input, hidden..., output) widths
        rng: Seeded generator
        output_activation: 'tanh' or 'identity'
        final_scale: Multiplier on the last weight matrix (1e-2 for policies)

    Returns:
        New float32 network
    """
    chunks = []
    pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
    for index, (n_in, n_out) in enumerate(pairs):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_in, n_out))
        if index == len(pairs) - 1:
            w = w * final_scale
        chunks.append(w.ravel())
        chunks.append(np.zeros(n_out))
    return Mlp(tuple(layer_sizes), np.concatenate(chunks).astype(np.float32), output_activation)


def _as_batch(net: Mlp, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if not batched:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != net.input_size:
        raise ArchitectureMismatch(f"Input width {x.shape[-1]} does not match network input {net.input_size}")
    return x, batched


def forward_cached(net: Mlp, x) -> Tuple[np.ndarray, ForwardCache]:
    """Forward pass that also returns the cache backward() needs"""
    a, batched = _as_batch(net, x)
    weights = np.asarray(net.weights, dtype=np.float64)
    cache = ForwardCache(activations=[a], batched=batched)
    layers = net.layers(weights)
    for index, (w, b) in enumerate(layers):
        z = a @ w + b
        if index < len(layers) - 1:
            a = np.tanh(z)
            cache.activations.append(a)
        else:
            cache.pre_activation = z
            a = np.tanh(z) if net.output_activation == TANH else z
    cache.output = a
    return (a if batched else a[0]), cache


def forward(net: Mlp, x) -> np.ndarray:
    """a = net(x) for a single input vector or a (batch, width) array"""
    out, _ = forward_cached(net, x)
    return out


def pre_activation_output(net: Mlp, x) -> np.ndarray:
    """Last layer's affine output before the output activation"""
    _, cache = forward_cached(net, x)
    return cache.pre_activation if cache.batched else cache.pre_activation[0]


def backward_full(net: Mlp, upstream_grad, cache: Optional[ForwardCache],
                  pre_activation_grad=None) -> Backprop:
    """
    Exact gradients of a scalar loss through the network

    Args:
        net: Network the cache was produced with
        upstream_grad: dLoss/dOutput, same shape as the forward output
        cache: Cache returned by forward_cached() for the same input
        pre_activation_grad: Optional extra dLoss/dPreActivation term

    Returns:
        Backprop(params=flat parameter gradient, inputs=dLoss/dInput)
    """
    if cache is None or cache.output is None:
        raise MissingForwardCache("backward() needs the cache from forward_cached()")

    upstream = np.asarray(upstream_grad, dtype=np.float64).reshape(cache.output.shape)
    if net.output_activation == TANH:
        delta = upstream * (1.0 - cache.output ** 2)
    else:
        delta = upstream.copy()
    if pre_activation_grad is not None:
        delta = delta + np.asarray(pre_activation_grad, dtype=np.float64).reshape(delta.shape)

    weights = np.asarray(net.weights, dtype=np.float64)
    layers = net.layers(weights)
    if len(cache.activations) != len(layers):
        raise MissingForwardCache("Forward cache does not belong to this network")

    grads = np.zeros(weights.size, dtype=np.float64)
    offsets = []
    offset = 0
    for n_in, n_out in zip(net.layer_sizes[:-1], net.layer_sizes[1:]):
        offsets.append(offset)
        offset += n_in * n_out + n_out

    for index in range(len(layers) - 1, -1, -1):
        w, _ = layers[index]
        a_prev = cache.activations[index]
        n_in, n_out = w.shape
        start = offsets[index]
        grads[start:start + n_in * n_out] = (a_prev.T @ delta).ravel()
        grads[start + n_in * n_out:start + n_in * n_out + n_out] = delta.sum(axis=0)
        upstream_prev = delta @ w.T
        if index > 0:
            delta = upstream_prev * (1.0 - a_prev ** 2)
        else:
            delta = upstream_prev

    inputs = delta if cache.batched else delta[0]
    return Backprop(params=grads, inputs=inputs)


def backward(net: Mlp, upstream_grad, cache: Optional[ForwardCache]) -> np.ndarray:
    """Parameter gradient only"""
    return backward_full(net, upstream_grad, cache).params
