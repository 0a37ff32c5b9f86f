"""Optimization-based embedding: Adam descent on a latent code.

The objective is pixel MSE plus an alpha-weighted feature distance
against the target image.  The generator and feature net stay frozen;
only the latent moves.  Traces record every step's loss terms (plus the
distance to the oracle latent when one is known), which is what the
budget tables are read from.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import FiniteError, ShapeError, Tape
from .embedder import embed
from .generator import mean_latent, synthesize_t
from .optim import adam_init, adam_step
from .perceptual import distance_rows_t, target_features

INIT_SCHEMES = ("random", "mean", "encoder", "explicit")


@dataclass(frozen=True)
class IterConfig:
    steps: int = 100
    lr: float = 0.01
    alpha: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class TraceRow:
    step: int
    mse: float
    phi: float
    total: float
    latent_err: float | None = None


@dataclass
class InversionTrace:
    rows: list = field(default_factory=list)
    wall_time: float = 0.0
    aborted: str | None = None

    @property
    def final(self):
        return self.rows[-1]

    def loss_at(self, budget):
        """Total loss after ``budget`` update steps."""
        return self.rows[budget].total

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "mse", "phi", "total", "latent_err"])
            for r in self.rows:
                err = "" if r.latent_err is None else f"{r.latent_err:.9g}"
                wr.writerow([r.step, f"{r.mse:.9g}", f"{r.phi:.9g}",
                             f"{r.total:.9g}", err])


def init_latent(scheme, gen, x=None, embednet=None, rng=None,
                mean_n=4096, mean_seed=0):
    """Starting latent for one image under a named scheme."""
    cfg = gen.config
    if scheme == "random":
        if rng is None:
            raise ValueError("random scheme needs an rng")
        return rng.standard_normal((cfg.n_layers, cfg.latent_dim)).astype(np.float32)
    if scheme == "mean":
        return mean_latent(gen, n=mean_n, seed=mean_seed)
    if scheme == "encoder":
        if embednet is None:
            raise ValueError("encoder scheme needs an embedding network")
        if x is None:
            raise ValueError("encoder scheme needs the target image")
        return embed(embednet, np.asarray(x, dtype=np.float32))
    raise ValueError(f"unknown init scheme {scheme!r} (explicit latents are "
                     f"passed directly to the optimizer)")


def optimize_batch(gen, phi, xs, w_inits, config, oracle_latents=None):
    """Invert a batch of images jointly (independent per-sample losses).

    Returns (latents (N,L,d), list of traces).  Per-sample arithmetic is
    independent — each sample's result does not depend on what else sits
    in the batch beyond floating-point layout, and the compiled backend
    keeps even that fixed.  On a non-finite failure every sample in the
    batch falls back to its best-so-far latent and the traces are marked
    aborted.
    """
    xs = np.ascontiguousarray(np.asarray(xs, dtype=np.float32))
    w = np.array(w_inits, dtype=np.float32, copy=True)
    if w.shape[0] != xs.shape[0]:
        raise ShapeError(f"batch mismatch: {xs.shape[0]} images, {w.shape[0]} latents")
    n = xs.shape[0]
    feats = target_features(phi, xs)
    state = adam_init(w.shape)
    best_loss = np.full(n, np.inf, dtype=np.float64)
    best_w = w.copy()
    rows = [[] for _ in range(n)]
    aborted = None
    t0 = time.perf_counter()

    def record(step, mse_v, phi_v, tot_v, w_now):
        for i in range(n):
            err = None
            if oracle_latents is not None and oracle_latents[i] is not None:
                err = float(np.linalg.norm(
                    w_now[i].astype(np.float64) - np.asarray(oracle_latents[i], np.float64)))
            rows[i].append(TraceRow(step, float(mse_v[i]), float(phi_v[i]),
                                    float(tot_v[i]), err))
        for i in range(n):
            if tot_v[i] < best_loss[i]:
                best_loss[i] = tot_v[i]
                best_w[i] = w_now[i]

    try:
        for step in range(config.steps):
            tape = Tape(np.float32)
            wt = tape.leaf(w, requires_grad=True, name="w")
            img = synthesize_t(gen, wt)
            mse_rows = tape.mean_rows(tape.square(tape.sub(img, tape.const(xs))))
            phi_rows = distance_rows_t(phi, img, b_norm_feats=feats)
            tot_rows = tape.add(mse_rows, tape.scale(phi_rows, config.alpha))
            tape.backward(tape.sum_all(tot_rows))
            record(step, mse_rows.data, phi_rows.data, tot_rows.data, w)
            w = adam_step(w, wt.grad, state, config.lr,
                          config.beta1, config.beta2, config.eps)
        # closing evaluation at the final latent (no update)
        tape = Tape(np.float32)
        wt = tape.leaf(w, name="w")
        img = synthesize_t(gen, wt)
        mse_rows = tape.mean_rows(tape.square(tape.sub(img, tape.const(xs))))
        phi_rows = distance_rows_t(phi, img, b_norm_feats=feats)
        tot_rows = tape.add(mse_rows, tape.scale(phi_rows, config.alpha))
        record(config.steps, mse_rows.data, phi_rows.data, tot_rows.data, w)
    except FiniteError as e:
        aborted = str(e)
        w = best_w.copy()
    wall = time.perf_counter() - t0
    traces = [InversionTrace(rows=r, wall_time=wall, aborted=aborted) for r in rows]
    return w, traces


def optimize_latent(gen, phi, x, w_init, config, oracle_latent=None):
    """Single-image inversion; the canonical (batch-1) evaluation path."""
    oracles = None if oracle_latent is None else [oracle_latent]
    w, traces = optimize_batch(gen, phi, np.asarray(x)[None],
                               np.asarray(w_init)[None], config, oracles)
    return w[0], traces[0]


def optimize_many(gen, phi, xs, w_inits, config, chunk=None, threads=1,
                  oracle_latents=None):
    """Chunked batch inversion with optional thread-parallel chunks.

    The chunk decomposition is part of the call's semantics and never
    derived from ``threads``: the same chunk size gives bit-identical
    results at any thread count, because chunks are data-disjoint and
    merged by index.
    """
    xs = np.asarray(xs, dtype=np.float32)
    n = xs.shape[0]
    if chunk is None or chunk <= 0:
        chunk = n
    spans = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    def run(span):
        a, b = span
        oc = None if oracle_latents is None else oracle_latents[a:b]
        return optimize_batch(gen, phi, xs[a:b], w_inits[a:b], config, oc)

    if threads <= 1 or len(spans) == 1:
        results = [run(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, spans))
    w_out = np.concatenate([r[0] for r in results], axis=0)
    traces = [t for r in results for t in r[1]]
    return w_out, traces
