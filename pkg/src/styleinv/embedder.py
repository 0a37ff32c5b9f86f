"""Embedding networks: image -> per-layer latent code.

The two-branch encoder separates *what* from *how*: an identity branch
pools to a single feature vector, an attribute branch keeps a spatial
grid.  The identity vector modulates the normalized attribute grid
(scale/shift per channel), and a block-diagonal regressor maps the
merged grid to one latent row per style layer.

A single-branch variant (attribute stack + regressor only) exists as an
ablation baseline; it sees the same pixels but has no modulation path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tape

# gain on the final regression layer's He scale; keeps the untrained
# latent prediction close to the prior mean so encoder initialization
# starts no worse than mean initialization
HEAD_GAIN = 0.02


@dataclass(frozen=True)
class EmbedConfig:
    image_size: int = 32
    in_channels: int = 3
    id_widths: tuple = (16, 32, 64, 64)
    id_strides: tuple = (2, 2, 2, 2)
    attr_widths: tuple = (16, 32, 64, 64)
    attr_strides: tuple = (2, 2, 2, 1)
    n_layers: int = 8
    latent_dim: int = 64
    block_hidden: int = 128

    def __post_init__(self):
        if len(self.id_widths) != len(self.id_strides):
            raise ShapeError("id branch widths/strides length mismatch")
        if len(self.attr_widths) != len(self.attr_strides):
            raise ShapeError("attr branch widths/strides length mismatch")

    @property
    def id_dim(self):
        return self.id_widths[-1]

    @property
    def attr_grid(self):
        size = self.image_size
        for s in self.attr_strides:
            size = (size + 2 - 3) // s + 1
        return self.attr_widths[-1], size

    @property
    def merge_dim(self):
        c, g = self.attr_grid
        return c * g * g


def _conv_stack_params(rng, in_ch, widths):
    ws, bs = [], []
    cin = in_ch
    for width in widths:
        ws.append((rng.standard_normal((width, cin, 3, 3))
                   * np.sqrt(2.0 / (cin * 9))).astype(np.float32))
        bs.append(np.zeros(width, dtype=np.float32))
        cin = width
    return ws, bs


def _conv_stack_t(x, ws, bs, strides):
    tape = x.tape
    for w, b, s in zip(ws, bs, strides):
        x = tape.leaky_relu(tape.bias_add(tape.conv2d(x, w, s, 1), b), 0.2)
    return x


class EmbedParams:
    """Trainable arrays of the two-branch encoder, in a fixed name order."""

    kind = "two_branch"

    def __init__(self, seed, config, table, trained_epochs=0):
        self.seed = seed
        self.config = config
        self._table = table
        self.trained_epochs = trained_epochs

    def arrays(self):
        return iter(self._table.items())

    def get(self, name):
        return self._table[name]

    def set(self, name, value):
        self._table[name][...] = value

    def copy(self):
        return type(self)(self.seed, self.config,
                          {k: np.array(v, copy=True) for k, v in self._table.items()},
                          trained_epochs=self.trained_epochs)


def init_embednet(seed, config=EmbedConfig()):
    cfg = config
    rng = np.random.Generator(np.random.Philox(key=seed))
    table = {}
    id_w, id_b = _conv_stack_params(rng, cfg.in_channels, cfg.id_widths)
    for i, (w, b) in enumerate(zip(id_w, id_b)):
        table[f"id.conv{i}.w"] = w
        table[f"id.conv{i}.b"] = b
    attr_w, attr_b = _conv_stack_params(rng, cfg.in_channels, cfg.attr_widths)
    for i, (w, b) in enumerate(zip(attr_w, attr_b)):
        table[f"attr.conv{i}.w"] = w
        table[f"attr.conv{i}.b"] = b
    attr_c, _ = cfg.attr_grid
    # near-identity modulation at init: fc output starts near zero
    table["mod.w"] = (rng.standard_normal((cfg.id_dim, 2 * attr_c))
                      * np.sqrt(1.0 / cfg.id_dim)).astype(np.float32)
    table["mod.b"] = np.zeros(2 * attr_c, dtype=np.float32)
    L, h, d = cfg.n_layers, cfg.block_hidden, cfg.latent_dim
    fin = cfg.merge_dim // L
    if fin * L != cfg.merge_dim:
        raise ShapeError(f"merged feature dim {cfg.merge_dim} is not divisible "
                         f"into {L} blocks")
    table["reg1.w"] = (rng.standard_normal((L, fin, h))
                       * np.sqrt(2.0 / fin)).astype(np.float32)
    table["reg1.b"] = np.zeros((L, h), dtype=np.float32)
    # damped output head: the untrained network emits near-zero codes,
    # i.e. it starts at the latent prior mean instead of a random point
    table["reg2.w"] = (rng.standard_normal((L, h, d))
                       * (HEAD_GAIN * np.sqrt(1.0 / h))).astype(np.float32)
    table["reg2.b"] = np.zeros((L, d), dtype=np.float32)
    return EmbedParams(seed, cfg, table)


class SingleEmbedParams(EmbedParams):
    """Ablation: one conv stack straight into the block regressor."""

    kind = "single_branch"


def init_single_embednet(seed, config=EmbedConfig()):
    cfg = config
    rng = np.random.Generator(np.random.Philox(key=seed))
    table = {}
    attr_w, attr_b = _conv_stack_params(rng, cfg.in_channels, cfg.attr_widths)
    for i, (w, b) in enumerate(zip(attr_w, attr_b)):
        table[f"attr.conv{i}.w"] = w
        table[f"attr.conv{i}.b"] = b
    L, h, d = cfg.n_layers, cfg.block_hidden, cfg.latent_dim
    fin = cfg.merge_dim // L
    if fin * L != cfg.merge_dim:
        raise ShapeError(f"merged feature dim {cfg.merge_dim} is not divisible "
                         f"into {L} blocks")
    table["reg1.w"] = (rng.standard_normal((L, fin, h))
                       * np.sqrt(2.0 / fin)).astype(np.float32)
    table["reg1.b"] = np.zeros((L, h), dtype=np.float32)
    table["reg2.w"] = (rng.standard_normal((L, h, d))
                       * (HEAD_GAIN * np.sqrt(1.0 / h))).astype(np.float32)
    table["reg2.b"] = np.zeros((L, d), dtype=np.float32)
    return SingleEmbedParams(seed, cfg, table)


def bind(tape, params, trainable=False):
    """Wrap every parameter array as a tensor on ``tape``."""
    return {name: tape.leaf(arr, requires_grad=trainable, name=name)
            for name, arr in params.arrays()}


def merge_features_t(tape, cfg, f_attr, f_id, mod_w, mod_b):
    """Identity-modulated attribute grid (the two-branch fusion)."""
    s = tape.bias_add(tape.matmul(f_id, mod_w), mod_b)
    attr_c = f_attr.data.shape[1]
    gscale = tape.add_scalar(tape.col_slice(s, 0, attr_c), 1.0)
    gshift = tape.col_slice(s, attr_c, 2 * attr_c)
    return tape.channel_affine(tape.instance_norm(f_attr), gscale, gshift)


def merge_features(cfg, f_attr, f_id, mod_w, mod_b):
    """Array-in/array-out fusion, for inspection and tests."""
    tape = Tape(np.float64 if np.asarray(f_attr).dtype == np.float64 else np.float32)
    out = merge_features_t(tape, cfg,
                           tape.const(f_attr), tape.const(f_id),
                           tape.const(mod_w), tape.const(mod_b))
    return out.data


def _regress_t(tape, cfg, merged, bound):
    n = merged.data.shape[0]
    L = cfg.n_layers
    fin = cfg.merge_dim // L
    z = tape.reshape(merged, (n, L, fin))
    z = tape.block_bias_add(tape.block_matmul(z, bound["reg1.w"]), bound["reg1.b"])
    z = tape.leaky_relu(z, 0.2)
    z = tape.block_bias_add(tape.block_matmul(z, bound["reg2.w"]), bound["reg2.b"])
    return z


def embed_t(x, params, bound):
    """Tape forward pass: image tensor (N,3,H,W) -> latent tensor (N,L,d)."""
    cfg = params.config
    tape = x.tape
    if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels \
            or x.data.shape[2] != cfg.image_size:
        raise ShapeError(f"embed expects (N,{cfg.in_channels},{cfg.image_size},"
                         f"{cfg.image_size}), got {x.data.shape}")
    n_attr = len(cfg.attr_widths)
    f_attr = _conv_stack_t(x, [bound[f"attr.conv{i}.w"] for i in range(n_attr)],
                           [bound[f"attr.conv{i}.b"] for i in range(n_attr)],
                           cfg.attr_strides)
    if params.kind == "two_branch":
        n_id = len(cfg.id_widths)
        f_id = tape.spatial_mean(
            _conv_stack_t(x, [bound[f"id.conv{i}.w"] for i in range(n_id)],
                          [bound[f"id.conv{i}.b"] for i in range(n_id)],
                          cfg.id_strides))
        merged = merge_features_t(tape, cfg, f_attr, f_id,
                                  bound["mod.w"], bound["mod.b"])
    else:
        merged = f_attr
    flat = tape.reshape(merged, (merged.data.shape[0], cfg.merge_dim))
    return _regress_t(tape, cfg, flat, bound)


def embed(params, x):
    """Latent code for an image array: (3,H,W) -> (L,d), or batched."""
    x = np.asarray(x)
    batched = x.ndim == 4
    tape = Tape(np.float64 if x.dtype == np.float64 else np.float32)
    xt = tape.const(x if batched else x[None])
    w = embed_t(xt, params, bind(tape, params, trainable=False))
    return w.data if batched else w.data[0]
