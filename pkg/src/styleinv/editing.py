"""Latent-space editing: morphing, style mixing, colorization.

All operations work on layered latent codes; images enter only through
the embedding network.  Coarse rows carry layout, fine rows carry tone,
so mixing the last k rows transfers appearance while keeping content.
"""

from __future__ import annotations

import warnings

import numpy as np

from .autodiff import ShapeError
from .embedder import embed
from .generator import synthesize

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def morph(w1, w2, lam):
    """Interpolate two codes: lam*w1 + (1-lam)*w2; lam=1 gives w1 exactly."""
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    if w1.shape != w2.shape:
        raise ShapeError(f"latent shapes differ: {w1.shape} vs {w2.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"morph weight must be in [0,1], got {lam}")
    if lam == 1.0:
        return w1.copy()
    if lam == 0.0:
        return w2.copy()
    return (lam * w1 + (1.0 - lam) * w2).astype(w1.dtype)


def style_mix(w_base, w_style, k):
    """First L-k rows from the base code, last k rows from the style code."""
    w_base = np.asarray(w_base)
    w_style = np.asarray(w_style)
    if w_base.shape != w_style.shape:
        raise ShapeError(f"latent shapes differ: {w_base.shape} vs {w_style.shape}")
    L = w_base.shape[0]
    if not 0 <= k <= L:
        raise ValueError(f"style_mix k must be in [0,{L}], got {k}")
    out = w_base.copy()
    if k:
        out[L - k:] = w_style[L - k:]
    return out


def grayscale(image):
    """Luma (computed on the [0,1] scale) replicated to all 3 channels."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected (3,H,W) image, got {image.shape}")
    unit = (image.astype(np.float64) + 1.0) / 2.0
    luma = (LUMA_WEIGHTS[0] * unit[0] + LUMA_WEIGHTS[1] * unit[1]
            + LUMA_WEIGHTS[2] * unit[2])
    out = np.repeat((luma * 2.0 - 1.0)[None], 3, axis=0)
    return out.astype(np.float32)


def colorize(x_gray, x_color, embednet, gen, k=4):
    """Transfer tones from a color image onto a grayscale one.

    Embeds both, keeps the gray image's coarse rows and takes the last
    ``k`` rows from the color donor, then synthesizes.
    """
    if getattr(embednet, "trained_epochs", 0) == 0:
        warnings.warn("colorize called with an untrained embedding network; "
                      "proceeding anyway", stacklevel=2)
    w_gray = embed(embednet, np.asarray(x_gray, dtype=np.float32))
    w_color = embed(embednet, np.asarray(x_color, dtype=np.float32))
    return synthesize(gen, style_mix(w_gray, w_color, k))


def channel_dispersion(image):
    """Mean over pixels of (max channel - min channel); 0 for gray images."""
    image = np.asarray(image)
    return float(np.mean(image.max(axis=0) - image.min(axis=0)))


def montage_h(images):
    """Horizontal concatenation of same-height images into one panel."""
    images = [np.asarray(im) for im in images]
    hs = {im.shape[1] for im in images}
    if len(hs) != 1:
        raise ShapeError(f"montage images must share height, got {sorted(hs)}")
    return np.concatenate(images, axis=2)
