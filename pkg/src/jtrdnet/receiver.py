"""Non-coherent feed-forward receiver with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingCache

RELU = "relu"
SIGMOID = "sigmoid"
PROB_CLAMP = 1e-12
DEFAULT_HIDDEN = (1024, 512, 256)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in (RELU, SIGMOID):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionMismatch("bias length differs from layer width")


@dataclass
class ReceiverNetwork:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers or self.layers[-1].activation != SIGMOID:
            raise ValueError("final layer must use a sigmoid")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[0] != b.weights.shape[1]:
                raise DimensionMismatch("consecutive layer sizes do not chain")
            if a.activation != RELU:
                raise ValueError("hidden layers must use ReLU")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "ReceiverNetwork":
        return ReceiverNetwork([DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
                                for l in self.layers])


def build_receiver(input_dim: int, output_dim: int, hidden=DEFAULT_HIDDEN,
                   rng: np.random.Generator | None = None) -> ReceiverNetwork:
    """Glorot-uniform weights, zero biases."""
    if rng is None:
        rng = np.random.default_rng(0)
    sizes = [input_dim, *hidden, output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = SIGMOID if i == len(sizes) - 2 else RELU
        layers.append(DenseLayer(W, np.zeros(fan_out), act))
    return ReceiverNetwork(layers)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None
    single: bool = False


def rx_forward(net: ReceiverNetwork, y: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Forward a single vector (2NT,) or a batch (B, 2NT)."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    h = y[None, :] if single else y
    if h.shape[-1] != net.input_dim:
        raise DimensionMismatch(f"input has {h.shape[-1]} features, network expects {net.input_dim}")
    cache = ForwardCache(single=single)
    for layer in net.layers:
        cache.inputs.append(h)
        a = h @ layer.weights.T + layer.bias
        cache.preacts.append(a)
        h = np.maximum(a, 0.0) if layer.activation == RELU else sigmoid(a)
    cache.output = h
    return (h[0] if single else h), cache


def bce_loss(s_hat: np.ndarray, s_all: np.ndarray) -> float:
    """Binary cross-entropy summed over bits and averaged over the batch."""
    s_hat = np.atleast_2d(np.clip(s_hat, PROB_CLAMP, 1.0 - PROB_CLAMP))
    s = np.atleast_2d(np.asarray(s_all, dtype=float))
    if s.shape != s_hat.shape:
        raise DimensionMismatch(f"prediction {s_hat.shape} vs target {s.shape}")
    ll = s * np.log(s_hat) + (1.0 - s) * np.log(1.0 - s_hat)
    return float(-np.sum(ll) / s.shape[0])


def bce_grad(s_hat: np.ndarray, s_all: np.ndarray) -> np.ndarray:
    """d(bce_loss)/d(s_hat) on the unclamped interior."""
    s_hat = np.atleast_2d(np.asarray(s_hat, dtype=float))
    s = np.atleast_2d(np.asarray(s_all, dtype=float))
    return -(s / s_hat - (1.0 - s) / (1.0 - s_hat)) / s.shape[0]


def rx_backward(net: ReceiverNetwork, cache: ForwardCache | None,
                s_all: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of :func:`bce_loss` for all parameters and the input.

    Returns ``(grads, grad_y)``; ``grads`` follows the order of
    ``net.params()``.  The sigmoid and cross-entropy are differentiated
    together, giving ``(s_hat - s) / B`` at the output pre-activation.
    """
    if cache is None or cache.output is None:
        raise MissingCache("rx_backward needs the cache from rx_forward")
    s = np.atleast_2d(np.asarray(s_all, dtype=float))
    B = s.shape[0]
    delta = (cache.output - s) / B
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == RELU:
            delta = delta * (cache.preacts[i] > 0)
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ cache.inputs[i])
        delta = delta @ layer.weights
    grads.reverse()
    return grads, (delta[0] if cache.single else delta)


def hard_decision(s_hat: np.ndarray) -> np.ndarray:
    """Bit is 1 iff ``s_hat >= 0.5``."""
    return (np.asarray(s_hat) >= 0.5).astype(np.int8)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              lr: float) -> None:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params, grads and optimizer state disagree in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
