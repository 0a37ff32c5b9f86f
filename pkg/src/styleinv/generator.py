"""Frozen style-layered synthesis network.

A learned constant grid is refined through a doubling chain of
resolutions.  Each layer runs conv3x3 -> instance norm -> per-channel
affine modulation -> leaky_relu; the modulation scale and shift come from
that layer's row of the latent code through a per-layer linear map
(scale = 1 + A_g w_l, shift = A_b w_l).  A final 1x1 conv and tanh
produce the image in [-1, 1].

Parameters are drawn once from a counter-based stream keyed by the seed
and never trained; the arrays are marked read-only to enforce that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tape


@dataclass(frozen=True)
class GeneratorConfig:
    image_size: int = 32
    base_size: int = 4
    latent_dim: int = 64
    channels: tuple = (64, 64, 32, 16)
    layers_per_block: int = 2
    img_channels: int = 3

    def __post_init__(self):
        chain = self.base_size << (len(self.channels) - 1)
        if chain != self.image_size:
            raise ShapeError(
                f"invalid resolution chain: base {self.base_size} with "
                f"{len(self.channels)} blocks reaches {chain}, not {self.image_size}")

    @property
    def n_layers(self):
        return len(self.channels) * self.layers_per_block

    @property
    def resolutions(self):
        return tuple(self.base_size << i for i in range(len(self.channels)))

    def layer_io(self, l):
        """(c_in, c_out, upsample_before) for style layer ``l``."""
        blk, j = divmod(l, self.layers_per_block)
        cout = self.channels[blk]
        if j > 0:
            cin = cout
        elif blk == 0:
            cin = self.channels[0]
        else:
            cin = self.channels[blk - 1]
        return cin, cout, (blk > 0 and j == 0)


@dataclass
class GeneratorParams:
    seed: int
    config: GeneratorConfig
    const: np.ndarray
    conv_w: tuple
    conv_b: tuple
    affine: tuple
    torgb_w: np.ndarray
    torgb_b: np.ndarray

    def arrays(self):
        yield "const", self.const
        for l in range(self.config.n_layers):
            yield f"conv{l}.w", self.conv_w[l]
            yield f"conv{l}.b", self.conv_b[l]
            yield f"affine{l}", self.affine[l]
        yield "torgb.w", self.torgb_w
        yield "torgb.b", self.torgb_b


def _freeze(arr):
    arr.setflags(write=False)
    return arr


def build_generator(seed, config=GeneratorConfig()):
    """Draw frozen parameters from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    d = config.latent_dim

    def draw(shape, std):
        return _freeze((rng.standard_normal(shape) * std).astype(np.float32))

    const = draw((config.channels[0], config.base_size, config.base_size), 1.0)
    conv_w, conv_b, affine = [], [], []
    for l in range(config.n_layers):
        cin, cout, _ = config.layer_io(l)
        conv_w.append(draw((cout, cin, 3, 3), np.sqrt(2.0 / (cin * 9))))
        conv_b.append(_freeze(np.zeros(cout, dtype=np.float32)))
        affine.append(draw((d, 2 * cout), np.sqrt(1.0 / d)))
    c_last = config.channels[-1]
    torgb_w = draw((config.img_channels, c_last, 1, 1), np.sqrt(1.0 / c_last))
    torgb_b = _freeze(np.zeros(config.img_channels, dtype=np.float32))
    return GeneratorParams(seed=seed, config=config, const=const,
                           conv_w=tuple(conv_w), conv_b=tuple(conv_b),
                           affine=tuple(affine), torgb_w=torgb_w, torgb_b=torgb_b)


def synthesize_t(params, w, tap=None):
    """Tape forward pass: latent tensor (N,L,d) -> image tensor (N,3,H,W).

    ``tap``, if given, is a dict that receives copies of the
    post-normalization (pre-modulation) activations per layer.
    """
    cfg = params.config
    tape = w.tape
    if w.data.ndim != 3 or w.data.shape[1:] != (cfg.n_layers, cfg.latent_dim):
        raise ShapeError(f"latent shape {w.data.shape} does not match "
                         f"(N,{cfg.n_layers},{cfg.latent_dim})")
    n = w.data.shape[0]
    x = tape.const(np.broadcast_to(params.const, (n,) + params.const.shape), "const")
    for l in range(cfg.n_layers):
        cin, cout, up = cfg.layer_io(l)
        if up:
            x = tape.upsample2x(x)
        x = tape.bias_add(tape.conv2d(x, tape.const(params.conv_w[l]), 1, 1),
                          tape.const(params.conv_b[l]))
        x = tape.instance_norm(x)
        if tap is not None:
            tap[f"layer{l}.pre_mod"] = np.array(x.data, copy=True)
        s = tape.matmul(tape.layer_slice(w, l), tape.const(params.affine[l]))
        gscale = tape.add_scalar(tape.col_slice(s, 0, cout), 1.0)
        gshift = tape.col_slice(s, cout, 2 * cout)
        x = tape.channel_affine(x, gscale, gshift)
        x = tape.leaky_relu(x, 0.2)
    x = tape.bias_add(tape.conv2d(x, tape.const(params.torgb_w), 1, 0),
                      tape.const(params.torgb_b))
    return tape.tanh(x)


def synthesize(params, w, tap=None):
    """Image for a latent array: (L,d) -> (3,H,W), or batched (N,...)."""
    w = np.asarray(w)
    batched = w.ndim == 3
    tape = Tape(np.float64 if w.dtype == np.float64 else np.float32)
    wt = tape.leaf(w if batched else w[None], name="w")
    img = synthesize_t(params, wt, tap=tap)
    return img.data if batched else img.data[0]


def grad_wrt_latent(params, w, upstream):
    """d<upstream, G(w)>/dw for a given upstream image gradient."""
    w = np.asarray(w)
    batched = w.ndim == 3
    upstream = np.asarray(upstream)
    tape = Tape(np.float64 if w.dtype == np.float64 else np.float32)
    wt = tape.leaf(w if batched else w[None], requires_grad=True, name="w")
    img = synthesize_t(params, wt)
    if upstream.shape != (img.data.shape if batched else img.data.shape[1:]):
        raise ShapeError(f"upstream shape {upstream.shape} does not match "
                         f"image shape {img.data.shape}")
    loss = tape.sum_all(tape.mul(img, tape.const(upstream if batched else upstream[None])))
    tape.backward(loss)
    return wt.grad if batched else wt.grad[0]


def mean_latent(params, n=4096, seed=0):
    """Empirical mean of ``n`` prior draws, shape (L, d)."""
    from .corpus import sample_prior
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6D65)))
    cfg = params.config
    acc = np.zeros((cfg.n_layers, cfg.latent_dim), dtype=np.float64)
    for _ in range(n):
        acc += sample_prior(rng, cfg.n_layers, cfg.latent_dim)
    return (acc / n).astype(np.float32)
