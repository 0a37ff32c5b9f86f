"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records every differentiable operation in execution order.
Operands must exist before an op can consume them, so the record list is
already topologically sorted and the backward pass is a single sweep over
``reversed(ops)``.  Each record carries a closure that maps the output
gradient to input gradients; gradients accumulate on ``Tensor.grad``.

The op set is deliberately closed: convolutions, dense and block-diagonal
matmul, pointwise maps, normalizations, resampling and reductions — exactly
what the synthesis network, the feature distance and the encoders need.
Every op checks its output for NaN/Inf and raises ``FiniteError`` naming
the op, so numerical blow-ups surface at the op that produced them instead
of ten layers downstream.

Tapes run in float32 by default; pass ``dtype=np.float64`` for verification
work (finite-difference checks need the head-room).
"""

from __future__ import annotations

import numpy as np

from . import backend as bk


class AutodiffError(Exception):
    """Base class for tape and op failures."""


class ShapeError(AutodiffError):
    """Operand shapes or dtypes do not match the op contract."""


class FiniteError(AutodiffError):
    """An op produced NaN or Inf."""

    def __init__(self, op_name, detail=""):
        self.op_name = op_name
        msg = f"non-finite values produced by op '{op_name}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


def _check_finite(name, arr):
    # cheap screen: a single reduction; NaN/Inf poison the sum
    if not np.isfinite(np.sum(arr)):
        raise FiniteError(name)
    return arr


class Tensor:
    """A node on a tape: an ndarray plus an accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "name")

    def __init__(self, data, tape, requires_grad=False, name=""):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accum_grad(self, g):
        if self.grad is None:
            # copy: g may alias an array the backward closure reuses
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


class _Record:
    __slots__ = ("name", "out", "backward")

    def __init__(self, name, out, backward):
        self.name = name
        self.out = out
        self.backward = backward


class Tape:
    """Ordered op record; supports repeated backward until ``reset``."""

    def __init__(self, dtype=np.float32):
        _require(dtype in (np.float32, np.float64), f"unsupported tape dtype {dtype}")
        self.dtype = np.dtype(dtype)
        self.ops = []

    # ---- tensor construction -------------------------------------------

    def _coerce(self, data):
        arr = np.asarray(data, dtype=self.dtype)
        return np.ascontiguousarray(arr)

    def leaf(self, data, requires_grad=False, name="leaf"):
        """Wrap an array as a tape input (no producing op)."""
        return Tensor(self._coerce(data), self, requires_grad=requires_grad, name=name)

    def const(self, data, name="const"):
        return self.leaf(data, requires_grad=False, name=name)

    # ---- recording ------------------------------------------------------

    def _emit(self, name, out_data, inputs, backward):
        _check_finite(name, out_data)
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(out_data, self, requires_grad=needs, name=name)
        if needs:
            self.ops.append(_Record(name, out, backward))
        return out

    def reset(self):
        """Drop all recorded ops (tensors stay usable as plain arrays)."""
        self.ops.clear()

    @property
    def n_ops(self):
        return len(self.ops)

    # ---- backward -------------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every tape input.

        ``loss`` must be a scalar tensor produced on this tape.  Repeated
        calls keep accumulating; zero grads between calls if that is not
        what you want.
        """
        _require(isinstance(loss, Tensor) and loss.tape is self,
                 "loss is not a tensor on this tape")
        _require(loss.data.shape == (), "backward requires a scalar loss")
        if not self.ops:
            raise AutodiffError("backward called before any op was recorded")
        loss.accum_grad(np.ones((), dtype=self.dtype))
        for rec in reversed(self.ops):
            g = rec.out.grad
            if g is None:
                continue
            rec.backward(g)

    # ======================================================================
    # ops
    # ======================================================================

    def _binary_check(self, name, a, b):
        _require(a.tape is self and b.tape is self, f"{name}: operands from another tape")
        _require(a.data.shape == b.data.shape,
                 f"{name}: shape mismatch {a.data.shape} vs {b.data.shape}")

    def add(self, a, b):
        self._binary_check("add", a, b)
        out = self._emit("add", a.data + b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a.accum_grad(g)
                if b.requires_grad:
                    b.accum_grad(g)
            self.ops[-1].backward = bwd
        return out

    def sub(self, a, b):
        self._binary_check("sub", a, b)
        out = self._emit("sub", a.data - b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a.accum_grad(g)
                if b.requires_grad:
                    b.accum_grad(-g)
            self.ops[-1].backward = bwd
        return out

    def mul(self, a, b):
        self._binary_check("mul", a, b)
        out = self._emit("mul", a.data * b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a.accum_grad(g * b.data)
                if b.requires_grad:
                    b.accum_grad(g * a.data)
            self.ops[-1].backward = bwd
        return out

    def scale(self, a, s):
        s = float(s)
        out = self._emit("scale", a.data * s, (a,), None)
        if out.requires_grad:
            def bwd(g, a=a, s=s):
                a.accum_grad(g * s)
            self.ops[-1].backward = bwd
        return out

    def add_scalar(self, a, c):
        c = float(c)
        out = self._emit("add_scalar", a.data + c, (a,), None)
        if out.requires_grad:
            def bwd(g, a=a):
                a.accum_grad(g)
            self.ops[-1].backward = bwd
        return out

    def square(self, a):
        out = self._emit("square", a.data * a.data, (a,), None)
        if out.requires_grad:
            def bwd(g, a=a):
                a.accum_grad(g * (2.0 * a.data))
            self.ops[-1].backward = bwd
        return out

    def leaky_relu(self, a, slope=0.2):
        slope = float(slope)
        y = np.where(a.data > 0, a.data, a.data * self.dtype.type(slope))
        out = self._emit("leaky_relu", y, (a,), None)
        if out.requires_grad:
            mask = a.data > 0
            def bwd(g, a=a, mask=mask, slope=slope):
                a.accum_grad(np.where(mask, g, g * self.dtype.type(slope)))
            self.ops[-1].backward = bwd
        return out

    def tanh(self, a):
        y = np.tanh(a.data)
        out = self._emit("tanh", y, (a,), None)
        if out.requires_grad:
            def bwd(g, a=a, y=y):
                a.accum_grad(g * (1.0 - y * y))
            self.ops[-1].backward = bwd
        return out

    def matmul(self, a, b):
        _require(a.data.ndim == 2 and b.data.ndim == 2,
                 f"matmul: expected 2-D operands, got {a.data.shape} @ {b.data.shape}")
        _require(a.data.shape[1] == b.data.shape[0],
                 f"matmul: inner dims differ {a.data.shape} @ {b.data.shape}")
        out = self._emit("matmul", a.data @ b.data, (a, b), None)
        if out.requires_grad:
            def bwd(g, a=a, b=b):
                if a.requires_grad:
                    a.accum_grad(g @ b.data.T)
                if b.requires_grad:
                    b.accum_grad(a.data.T @ g)
            self.ops[-1].backward = bwd
        return out

    def block_matmul(self, a, w):
        """Batched per-block matmul: (N,L,i) x (L,i,o) -> (N,L,o).

        Each of the L blocks applies its own (i,o) weight to its row; no
        cross-block mixing.
        """
        _require(a.data.ndim == 3 and w.data.ndim == 3,
                 f"block_matmul: expected 3-D operands, got {a.data.shape}, {w.data.shape}")
        _require(a.data.shape[1] == w.data.shape[0] and a.data.shape[2] == w.data.shape[1],
                 f"block_matmul: shape mismatch {a.data.shape} vs {w.data.shape}")
        # (N,L,i) x (L,i,o): matmul broadcasting over L after moving N inside
        y = np.einsum("nli,lio->nlo", a.data, w.data, optimize=True)
        out = self._emit("block_matmul", y, (a, w), None)
        if out.requires_grad:
            def bwd(g, a=a, w=w):
                if a.requires_grad:
                    a.accum_grad(np.einsum("nlo,lio->nli", g, w.data, optimize=True))
                if w.requires_grad:
                    w.accum_grad(np.einsum("nli,nlo->lio", a.data, g, optimize=True))
            self.ops[-1].backward = bwd
        return out

    def conv2d(self, x, w, stride=1, pad=1):
        """2-D convolution, NCHW x (Co,Ci,kh,kw) -> NCoH'W'."""
        _require(x.data.ndim == 4 and w.data.ndim == 4,
                 f"conv2d: expected 4-D operands, got {x.data.shape}, {w.data.shape}")
        _require(x.data.shape[1] == w.data.shape[1],
                 f"conv2d: channel mismatch {x.data.shape} vs {w.data.shape}")
        y = bk.conv2d_forward(x.data, w.data, stride, pad)
        out = self._emit("conv2d", y, (x, w), None)
        if out.requires_grad:
            def bwd(g, x=x, w=w, stride=stride, pad=pad):
                g = np.ascontiguousarray(g)
                if x.requires_grad:
                    x.accum_grad(bk.conv2d_backward_input(
                        g, w.data, stride, pad, x.data.shape[2], x.data.shape[3]))
                if w.requires_grad:
                    w.accum_grad(bk.conv2d_backward_weight(
                        g, x.data, stride, pad, w.data.shape[2], w.data.shape[3]))
            self.ops[-1].backward = bwd
        return out

    def bias_add(self, x, b):
        """Add a per-channel bias: (N,C,H,W)+(C,) or (N,F)+(F,)."""
        _require(b.data.ndim == 1, f"bias_add: bias must be 1-D, got {b.data.shape}")
        if x.data.ndim == 4:
            _require(x.data.shape[1] == b.data.shape[0],
                     f"bias_add: channel mismatch {x.data.shape} vs {b.data.shape}")
            y = x.data + b.data[None, :, None, None]
            axes = (0, 2, 3)
        elif x.data.ndim == 2:
            _require(x.data.shape[1] == b.data.shape[0],
                     f"bias_add: feature mismatch {x.data.shape} vs {b.data.shape}")
            y = x.data + b.data[None, :]
            axes = (0,)
        else:
            raise ShapeError(f"bias_add: unsupported input rank {x.data.ndim}")
        out = self._emit("bias_add", y, (x, b), None)
        if out.requires_grad:
            def bwd(g, x=x, b=b, axes=axes):
                if x.requires_grad:
                    x.accum_grad(g)
                if b.requires_grad:
                    b.accum_grad(g.sum(axis=axes))
            self.ops[-1].backward = bwd
        return out

    def block_bias_add(self, x, b):
        """Add a per-block bias: (N,L,F) + (L,F)."""
        _require(x.data.ndim == 3 and b.data.ndim == 2,
                 f"block_bias_add: expected (N,L,F)+(L,F), got {x.data.shape}, {b.data.shape}")
        _require(x.data.shape[1:] == b.data.shape,
                 f"block_bias_add: shape mismatch {x.data.shape} vs {b.data.shape}")
        out = self._emit("block_bias_add", x.data + b.data[None], (x, b), None)
        if out.requires_grad:
            def bwd(g, x=x, b=b):
                if x.requires_grad:
                    x.accum_grad(g)
                if b.requires_grad:
                    b.accum_grad(g.sum(axis=0))
            self.ops[-1].backward = bwd
        return out

    def upsample2x(self, x):
        """Nearest-neighbour 2x upsampling on NCHW."""
        _require(x.data.ndim == 4, f"upsample2x: expected 4-D input, got {x.data.shape}")
        y = x.data.repeat(2, axis=2).repeat(2, axis=3)
        out = self._emit("upsample2x", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x):
                gx = g[:, :, 0::2, 0::2] + g[:, :, 0::2, 1::2]
                gx += g[:, :, 1::2, 0::2]
                gx += g[:, :, 1::2, 1::2]
                x.accum_grad(gx)
            self.ops[-1].backward = bwd
        return out

    def instance_norm(self, x, eps=1e-8):
        """Zero-mean unit-variance per (sample, channel) over the spatial grid."""
        _require(x.data.ndim == 4, f"instance_norm: expected 4-D input, got {x.data.shape}")
        mu = x.data.mean(axis=(2, 3), keepdims=True)
        var = np.square(x.data - mu).mean(axis=(2, 3), keepdims=True)
        sigma = np.sqrt(var + self.dtype.type(eps))
        y = (x.data - mu) / sigma
        out = self._emit("instance_norm", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x, y=y, sigma=sigma):
                m = y.shape[2] * y.shape[3]
                gy = (g * y).mean(axis=(2, 3), keepdims=True)
                gm = g.mean(axis=(2, 3), keepdims=True)
                x.accum_grad((g - gm - y * gy) / sigma)
                del m
            self.ops[-1].backward = bwd
        return out

    def channel_affine(self, x, scale, shift):
        """Per-(sample, channel) affine: y[n,c] = scale[n,c]*x[n,c] + shift[n,c]."""
        _require(x.data.ndim == 4, f"channel_affine: expected 4-D input, got {x.data.shape}")
        _require(scale.data.shape == x.data.shape[:2] and shift.data.shape == x.data.shape[:2],
                 f"channel_affine: scale/shift {scale.data.shape}/{shift.data.shape} "
                 f"do not match input {x.data.shape}")
        y = x.data * scale.data[:, :, None, None] + shift.data[:, :, None, None]
        out = self._emit("channel_affine", y, (x, scale, shift), None)
        if out.requires_grad:
            def bwd(g, x=x, scale=scale, shift=shift):
                if x.requires_grad:
                    x.accum_grad(g * scale.data[:, :, None, None])
                if scale.requires_grad:
                    scale.accum_grad((g * x.data).sum(axis=(2, 3)))
                if shift.requires_grad:
                    shift.accum_grad(g.sum(axis=(2, 3)))
            self.ops[-1].backward = bwd
        return out

    def channel_unit_norm(self, x, eps=1e-8):
        """Normalize each spatial vector to unit length across channels."""
        _require(x.data.ndim == 4, f"channel_unit_norm: expected 4-D input, got {x.data.shape}")
        r = np.sqrt(np.sum(np.square(x.data), axis=1, keepdims=True))
        d = r + self.dtype.type(eps)
        y = x.data / d
        out = self._emit("channel_unit_norm", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x, y=y, r=r, d=d):
                # d y_c/d x_k = delta_ck/d - x_c x_k/(d^2 r); the second term
                # vanishes with x at an all-zero pixel, so guard r there
                dot = np.sum(g * x.data, axis=1, keepdims=True)
                safe_r = np.where(r > 0, r, 1.0)
                x.accum_grad(g / d - x.data * (dot / (d * d * safe_r)))
            self.ops[-1].backward = bwd
        return out

    def mean_all(self, x):
        """Mean over every element -> scalar."""
        y = np.asarray(x.data.mean(), dtype=self.dtype)
        out = self._emit("mean_all", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x):
                x.accum_grad(np.full(x.data.shape, g / x.data.size, dtype=self.dtype))
            self.ops[-1].backward = bwd
        return out

    def sum_all(self, x):
        """Sum over every element -> scalar."""
        y = np.asarray(x.data.sum(), dtype=self.dtype)
        out = self._emit("sum_all", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x):
                x.accum_grad(np.full(x.data.shape, g, dtype=self.dtype))
            self.ops[-1].backward = bwd
        return out

    def mean_rows(self, x):
        """Per-sample mean over all non-batch axes: (N,...) -> (N,)."""
        _require(x.data.ndim >= 2, f"mean_rows: expected batched input, got {x.data.shape}")
        n = x.data.shape[0]
        per = x.data.size // n
        y = x.data.reshape(n, per).mean(axis=1)
        out = self._emit("mean_rows", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x, n=n, per=per):
                gx = np.repeat((g / per)[:, None], per, axis=1)
                x.accum_grad(gx.reshape(x.data.shape))
            self.ops[-1].backward = bwd
        return out

    def spatial_mean(self, x):
        """Mean over the spatial grid: (N,C,H,W) -> (N,C)."""
        _require(x.data.ndim == 4, f"spatial_mean: expected 4-D input, got {x.data.shape}")
        y = x.data.mean(axis=(2, 3))
        out = self._emit("spatial_mean", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x):
                hw = x.data.shape[2] * x.data.shape[3]
                x.accum_grad(np.broadcast_to((g / hw)[:, :, None, None], x.data.shape).copy())
            self.ops[-1].backward = bwd
        return out

    def reshape(self, x, shape):
        y = x.data.reshape(shape)
        out = self._emit("reshape", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x):
                x.accum_grad(g.reshape(x.data.shape))
            self.ops[-1].backward = bwd
        return out

    def layer_slice(self, w, l):
        """Pick one style row: (N,L,d) -> (N,d)."""
        _require(w.data.ndim == 3, f"layer_slice: expected (N,L,d), got {w.data.shape}")
        _require(0 <= l < w.data.shape[1], f"layer_slice: row {l} out of range")
        y = np.ascontiguousarray(w.data[:, l, :])
        out = self._emit("layer_slice", y, (w,), None)
        if out.requires_grad:
            def bwd(g, w=w, l=l):
                gw = np.zeros(w.data.shape, dtype=self.dtype)
                gw[:, l, :] = g
                w.accum_grad(gw)
            self.ops[-1].backward = bwd
        return out

    def col_slice(self, x, j0, j1):
        """Column range of a matrix: (N,F) -> (N, j1-j0)."""
        _require(x.data.ndim == 2, f"col_slice: expected 2-D input, got {x.data.shape}")
        _require(0 <= j0 < j1 <= x.data.shape[1], f"col_slice: bad range [{j0},{j1})")
        y = np.ascontiguousarray(x.data[:, j0:j1])
        out = self._emit("col_slice", y, (x,), None)
        if out.requires_grad:
            def bwd(g, x=x, j0=j0, j1=j1):
                gx = np.zeros(x.data.shape, dtype=self.dtype)
                gx[:, j0:j1] = g
                x.accum_grad(gx)
            self.ops[-1].backward = bwd
        return out


# ==========================================================================
# finite-difference verification
# ==========================================================================

#: kernel name -> (argument builder) used by gradient_check; each entry maps
#: a seeded rng to (op closure, list of input arrays)
def _gc_cases(rng):
    n, c, h, w_ = 2, 3, 6, 6
    return {
        "add": (lambda t, a, b: t.add(a, b),
                [rng.standard_normal((4, 5)), rng.standard_normal((4, 5))]),
        "sub": (lambda t, a, b: t.sub(a, b),
                [rng.standard_normal((4, 5)), rng.standard_normal((4, 5))]),
        "mul": (lambda t, a, b: t.mul(a, b),
                [rng.standard_normal((4, 5)), rng.standard_normal((4, 5))]),
        "scale": (lambda t, a: t.scale(a, -1.7), [rng.standard_normal((3, 4))]),
        "add_scalar": (lambda t, a: t.add_scalar(a, 0.31), [rng.standard_normal((3, 4))]),
        "square": (lambda t, a: t.square(a), [rng.standard_normal((3, 4))]),
        "leaky_relu": (lambda t, a: t.leaky_relu(a, 0.2),
                       [rng.standard_normal((4, 4)) + 0.05]),
        "tanh": (lambda t, a: t.tanh(a), [rng.standard_normal((3, 4))]),
        "matmul": (lambda t, a, b: t.matmul(a, b),
                   [rng.standard_normal((3, 4)), rng.standard_normal((4, 5))]),
        "block_matmul": (lambda t, a, w: t.block_matmul(a, w),
                         [rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 4, 5))]),
        "conv2d_3x3_s1": (lambda t, x, k: t.conv2d(x, k, 1, 1),
                          [rng.standard_normal((n, c, h, w_)),
                           rng.standard_normal((4, c, 3, 3))]),
        "conv2d_3x3_s2": (lambda t, x, k: t.conv2d(x, k, 2, 1),
                          [rng.standard_normal((n, c, h, w_)),
                           rng.standard_normal((4, c, 3, 3))]),
        "conv2d_1x1": (lambda t, x, k: t.conv2d(x, k, 1, 0),
                       [rng.standard_normal((n, c, h, w_)),
                        rng.standard_normal((4, c, 1, 1))]),
        "bias_add": (lambda t, x, b: t.bias_add(x, b),
                     [rng.standard_normal((n, c, h, w_)), rng.standard_normal(c)]),
        "block_bias_add": (lambda t, x, b: t.block_bias_add(x, b),
                           [rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 4))]),
        "upsample2x": (lambda t, x: t.upsample2x(x),
                       [rng.standard_normal((n, c, 4, 4))]),
        "instance_norm": (lambda t, x: t.instance_norm(x),
                          [rng.standard_normal((n, c, h, w_))]),
        "channel_affine": (lambda t, x, s, b: t.channel_affine(x, s, b),
                           [rng.standard_normal((n, c, h, w_)),
                            rng.standard_normal((n, c)),
                            rng.standard_normal((n, c))]),
        "channel_unit_norm": (lambda t, x: t.channel_unit_norm(x),
                              [rng.standard_normal((n, c, h, w_))]),
        "mean_all": (lambda t, x: t.mean_all(x), [rng.standard_normal((n, c, 4, 4))]),
        "sum_all": (lambda t, x: t.sum_all(x), [rng.standard_normal((3, 4))]),
        "mean_rows": (lambda t, x: t.mean_rows(x), [rng.standard_normal((n, 3, 4))]),
        "spatial_mean": (lambda t, x: t.spatial_mean(x),
                         [rng.standard_normal((n, c, 4, 4))]),
        "reshape": (lambda t, x: t.reshape(x, (2, 12)), [rng.standard_normal((4, 6))]),
        "layer_slice": (lambda t, w: t.layer_slice(w, 1), [rng.standard_normal((2, 4, 5))]),
        "col_slice": (lambda t, x: t.col_slice(x, 1, 4), [rng.standard_normal((3, 6))]),
    }


def kernel_names():
    """Every op kind gradient_check knows how to build a case for."""
    rng = np.random.default_rng(0)
    return sorted(_gc_cases(rng).keys())


def check_scalar_fn(fn, inputs, h=1e-5):
    """Finite-difference check of a scalar-valued function of arrays.

    ``fn(tape, *tensors) -> scalar Tensor`` is run once on a float64 tape
    for the reverse-mode gradients and then probed coordinate-by-
    coordinate with central differences.  Returns a report dict with the
    worst relative error, defined as
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]
    tape = Tape(dtype=np.float64)
    leaves = [tape.leaf(a, requires_grad=True, name=f"in{i}")
              for i, a in enumerate(inputs)]
    loss = fn(tape, *leaves)
    _require(loss.data.shape == (), "check_scalar_fn: fn must return a scalar")
    tape.backward(loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
             for leaf in leaves]

    def value_at(args):
        t = Tape(dtype=np.float64)
        return float(fn(t, *[t.leaf(a) for a in args]).data)

    max_rel = 0.0
    worst = None
    for i, base in enumerate(inputs):
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = value_at(inputs)
            flat[j] = orig - h
            fm = value_at(inputs)
            flat[j] = orig
            g_fd = (fp - fm) / (2.0 * h)
            g_ad = grads[i].reshape(-1)[j]
            rel = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            if rel > max_rel:
                max_rel = rel
                worst = (i, j, float(g_ad), float(g_fd))
    return {"max_rel": max_rel, "worst": worst, "n_inputs": len(inputs)}


def gradient_check(op_kind, seed=0, h=1e-5, tol=1e-5):
    """Finite-difference check of one kernel against its recorded backward.

    The op output is contracted to a scalar with a fixed random projection
    so every output element influences the loss.  Runs in float64.
    """
    rng = np.random.default_rng(seed)
    cases = _gc_cases(rng)
    if op_kind not in cases:
        raise AutodiffError(f"unsupported op_kind for gradient_check: {op_kind!r}")
    op, inputs = cases[op_kind]
    proj_rng = np.random.default_rng(seed + 1)
    proj = {}

    def scalarized(tape, *leaves):
        out = op(tape, *leaves)
        if out.data.shape == ():
            return out
        if out.data.shape not in proj:
            proj[out.data.shape] = proj_rng.standard_normal(out.data.shape)
        p = tape.const(proj[out.data.shape], name="proj")
        return tape.sum_all(tape.mul(out, p))

    report = check_scalar_fn(scalarized, inputs, h=h)
    report["op_kind"] = op_kind
    report["passed"] = report["max_rel"] <= tol
    report["tol"] = tol
    return report
