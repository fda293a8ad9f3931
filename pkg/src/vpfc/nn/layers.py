"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward`` and consumes
the cache in ``backward``; calling ``backward`` without a pending forward
raises :class:`GraphInconsistent`. Gradients accumulate into
``Parameter.grad`` so shared layers (the per-frame feature extractor) can be
driven by several forward/backward pairs before an optimizer step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GraphInconsistent, ShapeMismatch
from . import kernels


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    def __init__(self):
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return []

    def _take_cache(self):
        if self._cache is None:
            raise GraphInconsistent(f"{type(self).__name__}.backward() without a matching forward()")
        cache, self._cache = self._cache, None
        return cache


class Conv2D(Layer):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, rng=None, name="conv"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(f"{name}.weight",
                                glorot_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, fan_out))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels))

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.weight.shape[1]:
            raise ShapeMismatch(f"conv expects (N, {self.weight.shape[1]}, H, W), got {x.shape}")
        k = self.weight.shape[2]
        if x.shape[2] + 2 * self.padding < k or x.shape[3] + 2 * self.padding < k:
            raise ShapeMismatch(f"input {x.shape[2:]} smaller than kernel {k} with padding {self.padding}")
        self._cache = x
        return kernels.conv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.padding)

    def backward(self, dy):
        x = self._take_cache()
        dx, dw, db = kernels.conv2d_backward(x, self.weight.value, np.ascontiguousarray(dy), self.stride, self.padding)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Dense(Layer):
    """Affine map ``y = x W^T + b`` with ``W`` stored as (out, in)."""

    def __init__(self, in_features, out_features, rng=None, name="fc"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(f"{name}.weight",
                                glorot_uniform(rng, (out_features, in_features), in_features, out_features))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features))

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeMismatch(f"dense expects width {self.weight.shape[1]}, got {x.shape[-1]}")
        self._cache = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dy):
        x = self._take_cache()
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.weight.grad += dy2.T @ x2
        self.bias.grad += dy2.sum(axis=0)
        return dy @ self.weight.value


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return dy * self._take_cache()


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeMismatch(f"global pool expects (N, C, H, W), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        n, c, h, w = self._take_cache()
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Sequential(Layer):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def lstm_cell_forward(x, h, c, weight, bias):
    """One LSTM step.

    ``weight`` has shape ``(in + hidden, 4 * hidden)`` acting on ``[x, h]``;
    gate blocks are ordered input, forget, candidate, output.
    Returns ``(h_next, c_next, gates)`` where ``gates`` holds the activated
    i, f, g, o blocks for the backward pass.
    """
    hidden = h.shape[-1]
    z = np.concatenate([x, h], axis=-1) @ weight + bias
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    c_next = f * c + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next, (i, f, g, o)


class LSTM(Layer):
    """Single LSTM layer unrolled over ``(B, steps, in)`` from a zero state."""

    def __init__(self, input_size, hidden_size, rng=None, forget_bias=1.0, name="lstm"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        fan_in = input_size + hidden_size
        w = glorot_uniform(rng, (fan_in, 4 * hidden_size), fan_in, 4 * hidden_size)
        b = np.zeros(4 * hidden_size)
        b[hidden_size:2 * hidden_size] = forget_bias
        self.weight = Parameter(f"{name}.weight", w)
        self.bias = Parameter(f"{name}.bias", b)

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"lstm expects (B, steps, {self.input_size}), got {x.shape}")
        bsz, steps, _ = x.shape
        h = np.zeros((bsz, self.hidden_size))
        c = np.zeros((bsz, self.hidden_size))
        outs = np.empty((bsz, steps, self.hidden_size))
        tape = []
        for t in range(steps):
            h_prev, c_prev = h, c
            h, c, gates = lstm_cell_forward(x[:, t], h_prev, c_prev, self.weight.value, self.bias.value)
            tape.append((h_prev, c_prev, c, gates))
            outs[:, t] = h
        self._cache = (x, tape)
        return outs

    def backward(self, dout):
        x, tape = self._take_cache()
        bsz, steps, _ = x.shape
        hs = self.hidden_size
        W = self.weight.value
        dx = np.empty_like(x)
        dh_next = np.zeros((bsz, hs))
        dc_next = np.zeros((bsz, hs))
        dW = np.zeros_like(W)
        db = np.zeros(4 * hs)
        for t in reversed(range(steps)):
            h_prev, c_prev, c, (i, f, g, o) = tape[t]
            dh = dout[:, t] + dh_next
            tc = np.tanh(c)
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g), dh * tc * o * (1.0 - o)],
                axis=1,
            )
            xh = np.concatenate([x[:, t], h_prev], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dx[:, t] = dxh[:, :self.input_size]
            dh_next = dxh[:, self.input_size:]
            dc_next = dc * f
        self.weight.grad += dW
        self.bias.grad += db
        return dx


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def global_avg_pool(x):
    return np.asarray(x, dtype=np.float64).mean(axis=(-2, -1))
