"""Minimal dense feed-forward network with reverse-mode differentiation.

Hidden layers share one activation (tanh, silu, or gelu); the output layer is
linear. Parameters live in plain numpy arrays so checkpoints round-trip
bit-exactly through JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError
from .rng import as_generator

ACTIVATIONS = ("tanh", "silu", "gelu")

# Chunk very large batches so matmuls stay in the cache-friendly regime.
_MAX_ROWS = 8192


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "silu":
        return z / (1.0 + np.exp(-z))
    if name == "gelu":
        u = math.sqrt(2.0 / math.pi) * (z + 0.044715 * z**3)
        return 0.5 * z * (1.0 + np.tanh(u))
    raise ValueError(f"unknown activation {name!r}")


def _act_deriv(name, z):
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if name == "gelu":
        c = math.sqrt(2.0 / math.pi)
        u = c * (z + 0.044715 * z**3)
        th = np.tanh(u)
        return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th**2) * c * (1.0 + 3 * 0.044715 * z**2)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseNet:
    """Parameter container; weights[i] has shape (sizes[i], sizes[i+1])."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        sizes = self.layer_sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes")

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def init_dense_net(layer_sizes, rng, activation: str = "tanh") -> DenseNet:
    """Fan-in-scaled uniform weights U(+-1/sqrt(fan_in)), zero biases."""
    gen = as_generator(rng)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / math.sqrt(n_in)
        weights.append(gen.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return DenseNet(list(layer_sizes), weights, biases, activation)


def zeros_like_params(net: DenseNet) -> Gradients:
    return Gradients(
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(b) for b in net.biases],
    )


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the network on x of shape (d_in,) or (n, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != net.layer_sizes[0]:
        raise ValueError(
            f"input width {h.shape[-1]} != layer size {net.layer_sizes[0]}"
        )
    if h.shape[0] > _MAX_ROWS:
        out = np.concatenate(
            [forward(net, h[i : i + _MAX_ROWS]) for i in range(0, h.shape[0], _MAX_ROWS)]
        )
        return out
    for i in range(net.n_layers):
        h = h @ net.weights[i] + net.biases[i]
        if i < net.n_layers - 1:
            h = _act(net.activation, h)
    return h[0] if single else h


def _forward_cache(net: DenseNet, x):
    """Forward pass keeping per-layer inputs and pre-activations."""
    h = x
    inputs, preacts = [], []
    for i in range(net.n_layers):
        inputs.append(h)
        z = h @ net.weights[i] + net.biases[i]
        if i < net.n_layers - 1:
            preacts.append(z)
            h = _act(net.activation, z)
        else:
            h = z
    return h, (inputs, preacts)


def _backward_cache(net: DenseNet, cache, cotangent):
    inputs, preacts = cache
    g_w = [None] * net.n_layers
    g_b = [None] * net.n_layers
    delta = cotangent
    for i in reversed(range(net.n_layers)):
        g_w[i] = inputs[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * _act_deriv(net.activation, preacts[i - 1])
    return Gradients(g_w, g_b), delta


def backward(net: DenseNet, x, cotangent):
    """Reverse-mode pass: returns (parameter gradients, input gradient).

    Gradients are of sum(cotangent * forward(net, x)); batch rows accumulate.
    """
    x = np.asarray(x, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, cot = x[None, :], cot[None, :]
    if x.shape[-1] != net.layer_sizes[0] or cot.shape[-1] != net.layer_sizes[-1]:
        raise ValueError("input/cotangent widths do not match the network")
    _, cache = _forward_cache(net, x)
    grads, input_grad = _backward_cache(net, cache, cot)
    return grads, input_grad[0] if single else input_grad


@dataclass
class OptimizerState:
    """Adam accumulators shaped like the network parameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def init_optimizer_state(net: DenseNet, learning_rate: float = 1e-3,
                         beta1: float = 0.9, beta2: float = 0.999,
                         epsilon: float = 1e-8) -> OptimizerState:
    z = zeros_like_params(net)
    z2 = zeros_like_params(net)
    return OptimizerState(
        learning_rate, beta1, beta2, epsilon, 0,
        z.weights, z.biases, z2.weights, z2.biases,
    )


def optimizer_step(net: DenseNet, grads: Gradients,
                   state: OptimizerState) -> tuple[DenseNet, OptimizerState]:
    """Bias-corrected adaptive-moment update, applied in place."""
    for gl in (grads.weights, grads.biases):
        for g in gl:
            if not np.all(np.isfinite(g)):
                raise DivergenceError("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    params = net.weights + net.biases
    gs = grads.weights + grads.biases
    ms = state.m_weights + state.m_biases
    vs = state.v_weights + state.v_biases
    for p, g, m, v in zip(params, gs, ms, vs):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        if not np.all(np.isfinite(p)):
            raise DivergenceError("parameters became non-finite")
    return net, state


def _net_to_dict(net: DenseNet) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(data: dict) -> DenseNet:
    return DenseNet(
        list(data["layer_sizes"]),
        [np.array(w, dtype=np.float64) for w in data["weights"]],
        [np.array(b, dtype=np.float64) for b in data["biases"]],
        data["activation"],
    )


def save_checkpoint(net: DenseNet, path, optimizer: OptimizerState | None = None,
                    extra: dict | None = None) -> None:
    doc = _net_to_dict(net)
    if optimizer is not None:
        doc["optimizer"] = {
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
            "m_weights": [a.tolist() for a in optimizer.m_weights],
            "m_biases": [a.tolist() for a in optimizer.m_biases],
            "v_weights": [a.tolist() for a in optimizer.v_weights],
            "v_biases": [a.tolist() for a in optimizer.v_biases],
        }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[DenseNet, OptimizerState | None, dict]:
    """Returns (net, optimizer-or-None, full document)."""
    with open(path) as fh:
        doc = json.load(fh)
    net = _net_from_dict(doc)
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = OptimizerState(
            o["learning_rate"], o["beta1"], o["beta2"], o["epsilon"],
            o["step_count"],
            [np.array(a) for a in o["m_weights"]],
            [np.array(a) for a in o["m_biases"]],
            [np.array(a) for a in o["v_weights"]],
            [np.array(a) for a in o["v_biases"]],
        )
    return net, opt, doc
