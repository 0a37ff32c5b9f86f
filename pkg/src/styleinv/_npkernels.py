"""Pure-numpy convolution kernels (im2col + GEMM).

The batched layout keeps every matmul large enough for BLAS to matter.
Per-sample results are reduction-order stable: nothing here sums across
the batch axis except the weight gradient, which reduces in a fixed
order regardless of batch decomposition.
"""

from __future__ import annotations

import numpy as np


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def conv2d_forward(x, w, stride, pad):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        y = np.matmul(w.reshape(co, ci), x.reshape(n, ci, h * wd))
        return np.ascontiguousarray(y.reshape(n, co, h, wd))
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    y = np.matmul(w.reshape(co, ci * kh * kw), cols)
    return np.ascontiguousarray(y.reshape(n, co, ho, wo))


def conv2d_backward_input(dy, w, stride, pad, h, wd):
    n, co, ho, wo = dy.shape
    ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    dyr = dy.reshape(n, co, ho * wo)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        dx = np.matmul(w.reshape(co, ci).T, dyr)
        return np.ascontiguousarray(dx.reshape(n, ci, h, wd))
    dcols = np.matmul(w.reshape(co, ci * kh * kw).T, dyr)
    dcols = dcols.reshape(n, ci, kh, kw, ho, wo)
    hp, wp = h + 2 * pad, wd + 2 * pad
    dxp = np.zeros((n, ci, hp, wp), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:pad + h, pad:pad + wd])
    return dxp


def conv2d_backward_weight(dy, x, stride, pad, kh, kw):
    n, co, ho, wo = dy.shape
    ci = x.shape[1]
    dyr = dy.reshape(n, co, ho * wo)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        dw = np.tensordot(dyr, x.reshape(n, ci, ho * wo), axes=([0, 2], [0, 2]))
        return np.ascontiguousarray(dw.reshape(co, ci, 1, 1))
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    dw = np.tensordot(dyr, cols, axes=([0, 2], [0, 2]))
    return np.ascontiguousarray(dw.reshape(co, ci, kh, kw))
