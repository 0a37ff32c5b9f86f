"""Feature-space image distance over a frozen random conv stack.

Three stride-2 conv stages (widths 16/32/64, leaky_relu) embed an image
into a pyramid of feature maps.  The distance between two images is the
squared difference of unit-normalized feature vectors, averaged over
space and channels within each stage and summed across stages.  Random
frozen filters are enough structure for an optimization signal; nothing
here is ever trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tape


@dataclass(frozen=True)
class PhiConfig:
    widths: tuple = (16, 32, 64)
    in_channels: int = 3


@dataclass
class PhiParams:
    seed: int
    config: PhiConfig
    conv_w: tuple

    def arrays(self):
        for i, w in enumerate(self.conv_w):
            yield f"stage{i}.w", w


def build_phi(seed, config=PhiConfig()):
    rng = np.random.Generator(np.random.Philox(key=seed))
    ws = []
    cin = config.in_channels
    for width in config.widths:
        w = (rng.standard_normal((width, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9)))
        w = w.astype(np.float32)
        w.setflags(write=False)
        ws.append(w)
        cin = width
    return PhiParams(seed=seed, config=config, conv_w=tuple(ws))


def features_t(params, img):
    """Per-stage activations (post leaky_relu), raw (not normalized)."""
    tape = img.tape
    if img.data.ndim != 4 or img.data.shape[1] != params.config.in_channels:
        raise ShapeError(f"feature stack expects (N,{params.config.in_channels},H,W), "
                         f"got {img.data.shape}")
    feats = []
    x = img
    for w in params.conv_w:
        x = tape.leaky_relu(tape.conv2d(x, tape.const(w), 2, 1), 0.2)
        feats.append(x)
    return feats


def target_features(params, x):
    """Unit-normalized stage features of a fixed image, as plain arrays.

    Lets an optimization loop embed the target once instead of once per
    step.
    """
    x = np.asarray(x)
    batched = x.ndim == 4
    tape = Tape(np.float64 if x.dtype == np.float64 else np.float32)
    xt = tape.const(x if batched else x[None])
    out = []
    for f in features_t(params, xt):
        out.append(np.array(tape.channel_unit_norm(f).data, copy=True))
    return out


def distance_rows_t(params, a, b=None, b_norm_feats=None):
    """Per-sample feature distance -> (N,) tensor.

    Exactly one of ``b`` (image tensor) or ``b_norm_feats`` (arrays from
    ``target_features``) must be given.
    """
    if (b is None) == (b_norm_feats is None):
        raise ValueError("pass exactly one of b or b_norm_feats")
    tape = a.tape
    fa = features_t(params, a)
    if b is not None:
        fb = [tape.channel_unit_norm(f) for f in features_t(params, b)]
    else:
        fb = [tape.const(f) for f in b_norm_feats]
    acc = None
    for f_a, f_b in zip(fa, fb):
        na = tape.channel_unit_norm(f_a)
        term = tape.mean_rows(tape.square(tape.sub(na, f_b)))
        acc = term if acc is None else tape.add(acc, term)
    return acc


def distance_t(params, a, b=None, b_norm_feats=None):
    """Batch-total feature distance as a scalar tensor."""
    return a.tape.sum_all(distance_rows_t(params, a, b, b_norm_feats))


def distance(params, a, b):
    """Feature distance between two images (3,H,W) -> float."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    batched = a.ndim == 4
    tape = Tape(np.float64 if a.dtype == np.float64 else np.float32)
    at = tape.const(a if batched else a[None])
    bt = tape.const(b if batched else b[None])
    rows = distance_rows_t(params, at, bt)
    return rows.data if batched else float(rows.data[0])
