"""Feed-forward layers, losses, and the adaptive optimizer.

All parameters live in ordered ``{name: Tensor}`` dicts so that the
optimizer, checkpoints, and gradient checks can address them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .tensor import Tensor, as_tensor, parameter

EPS_CLAMP = 1e-12  # floor for log / denominator arguments

_ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")


def _apply_activation(x: Tensor, act: str) -> Tensor:
    if act == "relu":
        return x.relu()
    if act == "leaky_relu":
        return x.leaky_relu(0.2)
    if act == "tanh":
        return x.tanh()
    if act == "identity":
        return x
    raise ValueError(f"unknown activation '{act}' (expected one of {_ACTIVATIONS})")


@dataclass
class MLPParams:
    """Weights, biases, and activation tags of a stack of dense layers.

    weights[i] has shape (in_i, out_i); consecutive layers must chain.
    """

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must have equal lengths")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation '{act}'")
        for i in range(1, len(self.weights)):
            if self.weights[i - 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError(
                    f"layer {i - 1} output width {self.weights[i - 1].shape[1]} does not "
                    f"chain into layer {i} input width {self.weights[i].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


def init_mlp(dims: list[int], activations: list[str], rng: np.random.Generator) -> MLPParams:
    """Uniform +-1/sqrt(fan_in) init for each layer."""
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        ws.append(parameter(rng.uniform(-bound, bound, size=(d_in, d_out))))
        bs.append(parameter(np.zeros(d_out)))
    return MLPParams(ws, bs, list(activations))


def mlp_forward(params: MLPParams, x: Tensor | np.ndarray) -> Tensor:
    """Run x (vector or batch of rows) through the layer stack."""
    h = as_tensor(x)
    width = h.shape[-1] if h.data.ndim > 0 else 1
    if width != params.in_dim:
        raise ValueError(f"input width {width} != first-layer width {params.in_dim}")
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _apply_activation(h @ w + b, act)
    return h


# -- losses ---------------------------------------------------------------------


def mse_loss(predicted: Tensor, target: Tensor | np.ndarray) -> Tensor:
    predicted = as_tensor(predicted)
    target = as_tensor(target)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {target.shape}")
    diff = predicted - target
    return (diff * diff).mean()


def bce_loss(probs: Tensor, targets: Tensor | np.ndarray) -> Tensor:
    """Binary cross-entropy; probabilities clamped to [EPS_CLAMP, 1-EPS_CLAMP]."""
    probs = as_tensor(probs)
    targets = as_tensor(targets)
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {targets.shape}")
    # Clamp as constants on the forward values; gradients flow through the
    # unclamped branch only where the probability is interior.
    p = _clamp01(probs)
    t = targets
    return -(t * p.log() + (1.0 - t) * (1.0 - p).log()).mean()


def _clamp01(p: Tensor) -> Tensor:
    lo = np.maximum(p.data, EPS_CLAMP)
    hi = np.minimum(lo, 1.0 - EPS_CLAMP)
    # Piece together clamp via tape-friendly ops: p + (const corrections).
    correction = hi - p.data
    return p + Tensor(correction)


def gaussian_kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over all elements."""
    mu = as_tensor(mu)
    logvar = as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    return 0.5 * (mu * mu + logvar.exp() - 1.0 - logvar).sum()


# -- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators for one named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected adaptive update, in place.

    `grads` defaults to each parameter's accumulated `.grad`; parameters
    without a gradient are treated as zero-gradient (left unchanged by
    the math, moments still decay).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter '{name}' "
                             f"shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
