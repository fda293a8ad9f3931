"""Central finite-difference verification of backward passes."""
from __future__ import annotations

import numpy as np

from .layers import Conv2D, Dense, GlobalAvgPool, LSTM, ReLU, Sequential, mse_loss

EPS = 1e-5
TOL = 1e-4
# Relative errors use max(|analytic| + |numeric|, DENOM_FLOOR) so that
# vanishing gradients compare on an absolute scale.
DENOM_FLOOR = 1e-6


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), DENOM_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_gradients(loss_fn, backward_fn, params, rng, inputs=(), max_checks=200, eps=EPS):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` runs a forward pass and returns the scalar loss.
    ``backward_fn()`` runs forward + backward and returns the gradients of the
    arrays in ``inputs`` (parameter gradients land in ``p.grad``). Up to
    ``max_checks`` randomly chosen coordinates are perturbed across all
    parameters and inputs.
    """
    for p in params:
        p.zero_grad()
    input_grads = backward_fn()
    targets = [(p.value, p.grad.copy()) for p in params]
    targets += [(x, g) for x, g in zip(inputs, input_grads)]
    sizes = np.array([t[0].size for t in targets])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(max_checks, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in np.sort(picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        arr, grad = targets[which]
        idx = np.unravel_index(flat - offsets[which], arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        up = loss_fn()
        arr[idx] = orig - eps
        down = loss_fn()
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        worst = max(worst, float(rel_error(grad[idx], numeric)))
    return worst


def _projection_check(layer, x, rng, max_checks=200):
    """Check ``layer`` under the loss ``sum(r * layer(x))`` with random ``r``."""
    r = rng.standard_normal(layer.forward(x).shape)
    layer._cache = None

    def loss():
        out = layer.forward(x)
        layer._cache = None
        return float(np.sum(r * out))

    def backward():
        layer.forward(x)
        return [layer.backward(r)]

    return check_gradients(loss, backward, layer.parameters(), rng, inputs=[x], max_checks=max_checks)


def _away_from_kink(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def layer_gradchecks(seed=0, shapes=5, max_checks=200):
    """Max relative error per layer type over ``shapes`` random configurations."""
    rng = np.random.default_rng(seed)
    results = {}

    def record(name, err):
        results[name] = max(results.get(name, 0.0), err)

    for _ in range(shapes):
        c_in, c_out = rng.integers(1, 4), rng.integers(1, 5)
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        h, w = rng.integers(k + 1, 9), rng.integers(k + 1, 9)
        conv = Conv2D(c_in, c_out, k, stride, pad, rng=rng)
        conv.bias.value[:] = rng.standard_normal(c_out)
        record("conv2d", _projection_check(conv, rng.standard_normal((2, c_in, h, w)), rng, max_checks))

        fin, fout = rng.integers(1, 10), rng.integers(1, 10)
        dense = Dense(fin, fout, rng=rng)
        dense.bias.value[:] = rng.standard_normal(fout)
        record("dense", _projection_check(dense, rng.standard_normal((3, fin)), rng, max_checks))

        record("relu", _projection_check(ReLU(), _away_from_kink(rng, (3, int(rng.integers(1, 10)))), rng, max_checks))
        record("global_avg_pool",
               _projection_check(GlobalAvgPool(), rng.standard_normal((2, 3, int(h), int(w))), rng, max_checks))

        fin, hid, steps = int(rng.integers(1, 6)), int(rng.integers(1, 7)), int(rng.integers(1, 6))
        lstm = LSTM(fin, hid, rng=rng)
        lstm.bias.value[:] += 0.3 * rng.standard_normal(4 * hid)
        record("lstm", _projection_check(lstm, rng.standard_normal((2, steps, fin)), rng, max_checks))

        pred = rng.standard_normal((3, 4))
        target = rng.standard_normal((3, 4))
        record("mse_loss", check_gradients(lambda: mse_loss(pred, target)[0], lambda: [mse_loss(pred, target)[1]],
                                           [], rng, inputs=[pred], max_checks=max_checks))

    # A small conv -> relu -> pool -> dense stack exercises chained backward.
    stack = Sequential(Conv2D(2, 3, 3, 2, 1, rng=rng), ReLU(), GlobalAvgPool(), Dense(3, 4, rng=rng))
    for p in stack.parameters():
        p.value += 0.1 * rng.standard_normal(p.shape)
    record("sequential", _projection_check(stack, rng.standard_normal((2, 2, 7, 9)), rng, max_checks))
    return results
