"""Convolution kernels: numba-compiled loops with a pure-numpy fallback.

The numba path is used when numba imports and ``VPFC_NUMBA`` is not set to
``0``/``false``/``no``. Both paths compute the same cross-correlation on
``(N, C, H, W)`` float64 arrays; they agree to rounding, not bit-for-bit.
"""
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("VPFC_NUMBA", "1").lower() not in ("0", "false", "no")


def output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


# -- numpy path ---------------------------------------------------------------

def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _windows(xp, k, stride):
    # (N, C, Ho, Wo, K, K) strided view, no copy
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d_forward_numpy(x, w, b, stride, pad):
    k = w.shape[2]
    cols = _windows(_pad(x, pad), k, stride)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_numpy(x, w, dy, stride, pad):
    k = w.shape[2]
    n, c, h, wd = x.shape
    ho, wo = dy.shape[2], dy.shape[3]
    xp = _pad(x, pad)
    cols = _windows(xp, k, stride)
    dw = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, K, K)
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                "nohw,oc->nchw", dy, w[:, :, i, j], optimize=True
            )
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


# -- numba path ---------------------------------------------------------------
# Compiled gather/scatter between images and patch matrices; the products run
# through BLAS matmuls.

if numba is not None:

    @numba.njit(cache=True)
    def _im2col_nb(x, k, stride, pad, ho, wo):
        n, c, h, wd = x.shape
        cols = np.zeros((n * ho * wo, c * k * k))
        for s in range(n):
            for y in range(ho):
                for xo in range(wo):
                    r = (s * ho + y) * wo + xo
                    for ic in range(c):
                        for i in range(k):
                            yy = y * stride + i - pad
                            if yy < 0 or yy >= h:
                                continue
                            base = (ic * k + i) * k
                            for j in range(k):
                                xx = xo * stride + j - pad
                                if 0 <= xx < wd:
                                    cols[r, base + j] = x[s, ic, yy, xx]
        return cols

    @numba.njit(cache=True)
    def _col2im_nb(dcols, n, c, h, wd, k, stride, pad, ho, wo):
        dx = np.zeros((n, c, h, wd))
        for s in range(n):
            for y in range(ho):
                for xo in range(wo):
                    r = (s * ho + y) * wo + xo
                    for ic in range(c):
                        for i in range(k):
                            yy = y * stride + i - pad
                            if yy < 0 or yy >= h:
                                continue
                            base = (ic * k + i) * k
                            for j in range(k):
                                xx = xo * stride + j - pad
                                if 0 <= xx < wd:
                                    dx[s, ic, yy, xx] += dcols[r, base + j]
        return dx


def conv2d_forward_numba(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = output_size(h, k, stride, pad), output_size(wd, k, stride, pad)
    cols = _im2col_nb(x, k, stride, pad, ho, wo)
    out = cols @ w.reshape(o, -1).T + b
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward_numba(x, w, dy, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    cols = _im2col_nb(x, k, stride, pad, ho, wo)
    dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dy2.T @ cols).reshape(w.shape)
    db = dy2.sum(axis=0)
    dx = _col2im_nb(dy2 @ w.reshape(o, -1), n, c, h, wd, k, stride, pad, ho, wo)
    return dx, dw, db


def conv2d_forward(x, w, b, stride, pad):
    """Cross-correlation of ``x (N,C,H,W)`` with ``w (O,C,K,K)`` plus bias."""
    if USE_NUMBA:
        return conv2d_forward_numba(x, w, b, stride, pad)
    return conv2d_forward_numpy(x, w, b, stride, pad)


def conv2d_backward(x, w, dy, stride, pad):
    """Gradients ``(dx, dw, db)`` of the forward pass given upstream ``dy``."""
    if USE_NUMBA:
        return conv2d_backward_numba(x, w, dy, stride, pad)
    return conv2d_backward_numpy(x, w, dy, stride, pad)
