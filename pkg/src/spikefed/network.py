"""Integrate-and-fire spiking network with time-unrolled training.

The network is a stack of spiking layers (dense or small conv). A static
input is injected as the input current of the first layer at every
timestep (direct encoding); every layer emits binary spikes, and the
class scores are the summed spike counts of the last layer pushed
through a softmax. Gradients are computed by backpropagation through
time with an arctan surrogate standing in for the derivative of the
spike nonlinearity.

All functions are pure: parameters go in, new parameters come out, and
every source of randomness is an explicit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Dense",
    "Conv",
    "NetworkConfig",
    "NetworkParams",
    "TrainConfig",
    "ForwardResult",
    "heaviside",
    "surrogate_grad",
    "smooth_spike",
    "if_step",
    "init_params",
    "forward",
    "forward_batch",
    "loss",
    "backward",
    "sgd_step",
    "train_local",
    "count_flops",
]

PROB_EPS = 1e-12  # clamp before log so a zero probability cannot blow up


# ---------------------------------------------------------------------------
# Layer specs and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dense:
    """Fully connected synapse layer; flattens whatever comes in."""

    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError("dense layer sizes must be positive")

    @property
    def out_shape(self) -> tuple[int, ...]:
        return (self.out_features,)

    @property
    def in_size(self) -> int:
        return self.in_features

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_features, self.in_features)

    @property
    def macs(self) -> int:
        return self.in_features * self.out_features


@dataclass(frozen=True)
class Conv:
    """Valid (no-padding, stride-1) convolution with optional average
    pooling applied to the layer's spike output."""

    in_channels: int
    out_channels: int
    kernel: int
    in_height: int
    in_width: int
    pool: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel) < 1:
            raise ValueError("conv layer sizes must be positive")
        if self.kernel > min(self.in_height, self.in_width):
            raise ValueError("kernel larger than input")
        if self.pool < 1:
            raise ValueError("pool factor must be >= 1")
        if self.conv_height % self.pool or self.conv_width % self.pool:
            raise ValueError("pool factor must divide the conv output size")

    @property
    def conv_height(self) -> int:
        return self.in_height - self.kernel + 1

    @property
    def conv_width(self) -> int:
        return self.in_width - self.kernel + 1

    @property
    def out_shape(self) -> tuple[int, ...]:
        # shape of the spiking output (before pooling)
        return (self.out_channels, self.conv_height, self.conv_width)

    @property
    def pooled_shape(self) -> tuple[int, ...]:
        return (
            self.out_channels,
            self.conv_height // self.pool,
            self.conv_width // self.pool,
        )

    @property
    def in_size(self) -> int:
        return self.in_channels * self.in_height * self.in_width

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def macs(self) -> int:
        kernel_volume = self.kernel * self.kernel * self.in_channels
        return kernel_volume * self.conv_height * self.conv_width * self.out_channels


LayerSpec = Dense | Conv


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture plus neuron constants shared by all layers."""

    layers: tuple[LayerSpec, ...]
    t_steps: int = 12
    u_theta: float = 1.0
    u_reset: float = 0.0
    surrogate_alpha: float = 2.0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if not self.u_theta > self.u_reset:
            raise ValueError("u_theta must exceed u_reset")
        if not self.surrogate_alpha > 0:
            raise ValueError("surrogate_alpha must be positive")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            prev_shape = (
                prev.pooled_shape if isinstance(prev, Conv) else prev.out_shape
            )
            if isinstance(nxt, Dense):
                if nxt.in_features != int(np.prod(prev_shape)):
                    raise ValueError(
                        f"dense layer expects {nxt.in_features} inputs, "
                        f"previous layer emits {int(np.prod(prev_shape))}"
                    )
            else:
                if prev_shape != (nxt.in_channels, nxt.in_height, nxt.in_width):
                    raise ValueError("conv layer shape mismatch with previous layer")

    @property
    def input_shape(self) -> tuple[int, ...]:
        first = self.layers[0]
        if isinstance(first, Dense):
            return (first.in_features,)
        return (first.in_channels, first.in_height, first.in_width)

    @property
    def out_features(self) -> int:
        last = self.layers[-1]
        if isinstance(last, Dense):
            return last.out_features
        return int(np.prod(last.pooled_shape))

    def layer_sizes(self) -> list[int]:
        """Neuron count of each spiking layer (pre-pooling output)."""
        return [int(np.prod(spec.out_shape)) for spec in self.layers]


@dataclass(frozen=True)
class NetworkParams:
    """Per-layer weight tensors; value semantics (never mutated in place)."""

    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        for w in self.weights:
            if not np.all(np.isfinite(w)):
                raise ValueError("non-finite weight")

    def copy(self) -> "NetworkParams":
        return NetworkParams(tuple(w.copy() for w in self.weights))

    def allclose(self, other: "NetworkParams", atol: float = 0.0) -> bool:
        return len(self.weights) == len(other.weights) and all(
            np.allclose(a, b, rtol=0.0, atol=atol)
            for a, b in zip(self.weights, other.weights)
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


# ---------------------------------------------------------------------------
# Neuron primitives
# ---------------------------------------------------------------------------

def heaviside(x):
    """Spike nonlinearity: 1 where x >= 0 else 0."""
    return np.where(np.asarray(x) >= 0.0, 1.0, 0.0)


def surrogate_grad(x, alpha: float):
    """Derivative stand-in for heaviside: alpha / (2 (1 + ((pi/2) alpha x)^2)).

    This is the exact derivative of the arctan sigmoid used by
    :func:`smooth_spike`, evaluated at the pre-threshold potential.
    """
    z = (math.pi / 2.0) * alpha * np.asarray(x)
    return alpha / (2.0 * (1.0 + z * z))


def smooth_spike(x, alpha: float):
    """Arctan sigmoid relaxation of heaviside; used by the smoothed twin
    network for gradient checking."""
    return np.arctan((math.pi / 2.0) * alpha * np.asarray(x)) / math.pi + 0.5


def if_step(membrane: np.ndarray, input_current: np.ndarray, config: NetworkConfig):
    """One integrate-and-fire update: charge, spike, hard reset.

    Returns (spikes, new_membrane).
    """
    membrane = np.asarray(membrane, dtype=float)
    input_current = np.asarray(input_current, dtype=float)
    if membrane.shape != input_current.shape:
        raise ValueError(
            f"membrane shape {membrane.shape} != current shape {input_current.shape}"
        )
    v = membrane + input_current
    o = heaviside(v - config.u_theta)
    u = v * (1.0 - o) + config.u_reset * o
    return o, u


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def _fans(spec: LayerSpec) -> tuple[int, int]:
    if isinstance(spec, Dense):
        return spec.in_features, spec.out_features
    k2 = spec.kernel * spec.kernel
    return spec.in_channels * k2, spec.out_channels * k2


def init_params(config: NetworkConfig, seed: int) -> NetworkParams:
    """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)) per layer."""
    rng = np.random.default_rng(seed)
    weights = []
    for spec in config.layers:
        fan_in, fan_out = _fans(spec)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=spec.weight_shape))
    return NetworkParams(tuple(weights))


# ---------------------------------------------------------------------------
# Linear transforms (shared by forward and backward)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    # x: (B, C, H, W) -> (B, Ho*Wo, C*k*k)
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    b, c, ho, wo, _, _ = windows.shape
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kernel * kernel)


def _col2im(gcols: np.ndarray, x_shape: tuple, kernel: int) -> np.ndarray:
    # gcols: (B, Ho*Wo, C*k*k) -> gradient wrt x of shape x_shape
    b, c, h, w = x_shape
    ho, wo = h - kernel + 1, w - kernel + 1
    g = gcols.reshape(b, ho, wo, c, kernel, kernel)
    gx = np.zeros(x_shape, dtype=gcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            gx[:, :, i:i + ho, j:j + wo] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gx


def _apply_linear(spec: LayerSpec, w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Input current of a layer given its (pooled) input activation."""
    b = a.shape[0]
    if isinstance(spec, Dense):
        return a.reshape(b, -1) @ w.T
    cols = _im2col(a.reshape(b, spec.in_channels, spec.in_height, spec.in_width),
                   spec.kernel)
    cur = cols @ w.reshape(spec.out_channels, -1).T
    return cur.transpose(0, 2, 1).reshape(b, *spec.out_shape)


def _linear_backward(spec: LayerSpec, w: np.ndarray, a: np.ndarray,
                     g_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (wrt weights, wrt input) of one linear transform."""
    b = a.shape[0]
    if isinstance(spec, Dense):
        a2 = a.reshape(b, -1)
        gw = g_out.T @ a2
        ga = (g_out @ w).reshape(a.shape)
        return gw, ga
    a4 = a.reshape(b, spec.in_channels, spec.in_height, spec.in_width)
    cols = _im2col(a4, spec.kernel)  # (B, P, Cin*k*k)
    g2 = g_out.reshape(b, spec.out_channels, -1).transpose(0, 2, 1)  # (B, P, Cout)
    gw = np.einsum("bpo,bpi->oi", g2, cols).reshape(w.shape)
    gcols = g2 @ w.reshape(spec.out_channels, -1)  # (B, P, Cin*k*k)
    ga = _col2im(gcols, a4.shape, spec.kernel).reshape(a.shape)
    return gw, ga


def _avg_pool(x: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return x
    b, c, h, w = x.shape
    return x.reshape(b, c, h // p, p, w // p, p).mean(axis=(3, 5))


def _avg_unpool(g: np.ndarray, p: int, out_shape: tuple) -> np.ndarray:
    if p == 1:
        return g
    rep = np.repeat(np.repeat(g, p, axis=2), p, axis=3) / (p * p)
    return rep.reshape(out_shape)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    class_probs: np.ndarray        # (B, C)
    layer_rates: np.ndarray        # (B, L): mean spikes per neuron-timestep
    spike_counts: np.ndarray       # (B, C): summed output spikes over time
    spikes: list[np.ndarray] | None = None  # per layer (T, B, *shape)


def _unrolled_forward(params: NetworkParams, x: np.ndarray, config: NetworkConfig,
                      smooth: bool = False):
    """Run the T-step simulation on a batch.

    Returns (inputs, potentials, outputs) with, per layer l:
      inputs[l][t]     activation fed to layer l at step t (pooled spikes)
      potentials[l][t] charged membrane v before thresholding
      outputs[l][t]    spike output (binary, or smooth relaxation)
    The first layer's input is the static sample at every step.
    """
    if len(params.weights) != len(config.layers):
        raise ValueError("params do not match config layer count")
    b = x.shape[0]
    if x.reshape(b, -1).shape[1] != int(np.prod(config.input_shape)):
        raise ValueError(
            f"sample shape {x.shape[1:]} incompatible with input shape "
            f"{config.input_shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input sample")
    n_layers = len(config.layers)
    t_steps = config.t_steps
    inputs = [[None] * t_steps for _ in range(n_layers)]
    potentials = [[None] * t_steps for _ in range(n_layers)]
    outputs = [[None] * t_steps for _ in range(n_layers)]

    x0 = x.reshape(b, *config.input_shape).astype(float)
    membranes = [np.zeros((b, *spec.out_shape)) for spec in config.layers]
    for t in range(t_steps):
        a = x0
        for l, (spec, w) in enumerate(zip(config.layers, params.weights)):
            inputs[l][t] = a
            current = _apply_linear(spec, w, a)
            v = membranes[l] + current
            if smooth:
                o = smooth_spike(v - config.u_theta, config.surrogate_alpha)
            else:
                o = heaviside(v - config.u_theta)
            membranes[l] = v * (1.0 - o) + config.u_reset * o
            potentials[l][t] = v
            outputs[l][t] = o
            if isinstance(spec, Conv) and spec.pool > 1:
                a = _avg_pool(o, spec.pool)
            else:
                a = o
    return inputs, potentials, outputs


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_batch(params: NetworkParams, x: np.ndarray, config: NetworkConfig,
                  record_spikes: bool = False) -> ForwardResult:
    """Forward a batch; class probabilities are the softmax of summed
    last-layer spike counts."""
    _, _, outputs = _unrolled_forward(params, np.asarray(x, dtype=float), config)
    b = x.shape[0]
    counts = np.sum(outputs[-1], axis=0).reshape(b, -1)  # sum over time
    probs = _softmax(counts)
    if not np.all(np.isfinite(probs)):
        raise ValueError("non-finite class probabilities")
    sizes = config.layer_sizes()
    rates = np.empty((b, len(sizes)))
    for l, size in enumerate(sizes):
        total = np.sum(outputs[l], axis=0).reshape(b, -1).sum(axis=1)
        rates[:, l] = total / (config.t_steps * size)
    spikes = None
    if record_spikes:
        spikes = [np.stack(layer_out) for layer_out in outputs]
    return ForwardResult(class_probs=probs, layer_rates=rates,
                         spike_counts=counts, spikes=spikes)


def forward(params: NetworkParams, sample: np.ndarray, config: NetworkConfig):
    """Single-sample forward. Returns (class_probs, spike record), where the
    record holds one (T, *layer_shape) binary array per layer."""
    sample = np.asarray(sample, dtype=float)
    res = forward_batch(params, sample[None, ...], config, record_spikes=True)
    spikes = [s[:, 0] for s in res.spikes]
    return res.class_probs[0], spikes


def loss(class_probs: np.ndarray, label: int) -> float:
    """Cross entropy of one prediction; probabilities clamped at 1e-12."""
    p = float(np.asarray(class_probs)[label])
    return -math.log(max(p, PROB_EPS))


# ---------------------------------------------------------------------------
# Backward pass (BPTT)
# ---------------------------------------------------------------------------

def backward(params: NetworkParams, x: np.ndarray, y: np.ndarray,
             config: NetworkConfig, smooth: bool = False):
    """Backpropagation through time over all T steps.

    Returns (grads, mean_loss, layer_rates) where grads mirrors the
    parameter shapes and layer_rates is the batch-mean firing rate per
    layer (used by energy accounting).

    With ``smooth=True`` the forward activations are those of the
    smoothed twin (arctan sigmoid spike function, differentiable reset
    gate), and the returned gradient is the exact gradient of the twin's
    loss; the spiking mode uses the same code path with binary
    activations and the reset gate detached.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError("sample / label count mismatch")
    b = x.shape[0]
    t_steps = config.t_steps
    inputs, potentials, outputs = _unrolled_forward(params, x, config, smooth=smooth)

    counts = np.sum(outputs[-1], axis=0).reshape(b, -1)
    probs = _softmax(counts)
    n_classes = probs.shape[1]
    clamped = np.maximum(probs[np.arange(b), y], PROB_EPS)
    mean_loss = float(-np.log(clamped).mean())

    onehot = np.zeros_like(probs)
    onehot[np.arange(b), y] = 1.0
    g_counts = (probs - onehot) / b  # dL/d(summed spikes), same for every t

    grads = [np.zeros_like(w) for w in params.weights]
    # g_out[t]: gradient wrt the (un-pooled) spike output of the current layer
    last_shape = (b, *config.layers[-1].out_shape)
    g_out = [g_counts.reshape(last_shape) for _ in range(t_steps)]

    for l in range(len(config.layers) - 1, -1, -1):
        spec, w = config.layers[l], params.weights[l]
        g_in = [None] * t_steps
        gu = np.zeros((b, *spec.out_shape))  # dL/du^{l,t} flowing from t+1
        for t in range(t_steps - 1, -1, -1):
            v = potentials[l][t]
            o = outputs[l][t]
            sg = surrogate_grad(v - config.u_theta, config.surrogate_alpha)
            dudv = 1.0 - o
            if smooth:
                dudv = dudv + (config.u_reset - v) * sg
            gv = g_out[t] * sg + gu * dudv
            gu = gv  # v^{l,t} = u^{l,t-1} + current
            gw, ga = _linear_backward(spec, w, inputs[l][t], gv.reshape(b, -1)
                                      if isinstance(spec, Dense) else gv)
            grads[l] += gw
            g_in[t] = ga
        if l > 0:
            prev = config.layers[l - 1]
            if isinstance(prev, Conv) and prev.pool > 1:
                out_shape = (b, *prev.out_shape)
                g_out = [
                    _avg_unpool(g.reshape(b, *prev.pooled_shape), prev.pool, out_shape)
                    for g in g_in
                ]
            else:
                g_out = [g.reshape(b, *prev.out_shape) for g in g_in]

    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")

    sizes = config.layer_sizes()
    layer_rates = np.array([
        float(np.sum(outputs[l]) / (b * t_steps * sizes[l]))
        for l in range(len(sizes))
    ])
    return NetworkParams(tuple(grads)), mean_loss, layer_rates


def smooth_loss(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                config: NetworkConfig) -> float:
    """Mean loss of the smoothed twin network; finite-difference oracle hook."""
    x = np.asarray(x, dtype=float)
    _, _, outputs = _unrolled_forward(params, x, config, smooth=True)
    b = x.shape[0]
    counts = np.sum(outputs[-1], axis=0).reshape(b, -1)
    probs = _softmax(counts)
    clamped = np.maximum(probs[np.arange(b), np.asarray(y)], PROB_EPS)
    return float(-np.log(clamped).mean())


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

def sgd_step(params: NetworkParams, grads: NetworkParams, lr: float) -> NetworkParams:
    """w <- w - lr * g, elementwise."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if len(params.weights) != len(grads.weights):
        raise ValueError("parameter / gradient layer count mismatch")
    new = []
    for w, g in zip(params.weights, grads.weights):
        if w.shape != g.shape:
            raise ValueError("parameter / gradient shape mismatch")
        new.append(w - lr * g)
    return NetworkParams(tuple(new))


def _train_epochs(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                  train_config: TrainConfig, net_config: NetworkConfig):
    """Shared SGD loop. Returns (params, rate_sums, n_passes) where
    rate_sums[l] is the sum over processed samples of the per-layer mean
    firing rate (energy accounting input) and n_passes counts processed
    sample-forwards."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(train_config.seed)
    current = params.copy()
    n = x.shape[0]
    rate_sums = np.zeros(len(net_config.layers))
    n_passes = 0
    for _ in range(train_config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            grads, _, layer_rates = backward(current, x[idx], y[idx], net_config)
            current = sgd_step(current, grads, train_config.learning_rate)
            rate_sums += len(idx) * layer_rates
            n_passes += len(idx)
    return current, rate_sums, n_passes


def train_local(params: NetworkParams, x: np.ndarray, y: np.ndarray,
                train_config: TrainConfig, net_config: NetworkConfig) -> NetworkParams:
    """Mini-batch SGD over a seeded shuffle of (x, y) for the configured
    number of epochs; the input params are never modified."""
    current, _, _ = _train_epochs(params, x, y, train_config, net_config)
    return current


# ---------------------------------------------------------------------------
# Operation counting
# ---------------------------------------------------------------------------

def count_flops(config: NetworkConfig) -> list[int]:
    """Per-layer MAC count of one forward pass (dense: m*n; conv: kernel
    volume x output spatial size x output channels)."""
    return [spec.macs for spec in config.layers]
