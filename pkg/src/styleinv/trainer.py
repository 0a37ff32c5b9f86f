"""Collaborative training loop: encoder and iterator supervise each other.

Per batch: the encoder embeds the images, the iterator refines those
embeddings for a fixed step budget, the per-sample cache keeps whichever
latent has ever achieved the lowest inversion loss, and the encoder is
updated toward the cached best through latent-, image- and
feature-level losses.  The encoder gets better initializations from the
improving cache; the iterator gets better starting points from the
improving encoder.

Determinism: BLAS is pinned to one thread for the duration of training,
the epoch order comes from (seed, epoch), the iterator chunk size is
fixed by config (never by thread count), and cache candidates are
always scored on the canonical single-sample path.  A run is therefore
bit-reproducible at any thread count, and resume from an epoch
checkpoint continues the exact same trajectory.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import fileio
from .autodiff import FiniteError, ShapeError, Tape
from .embedder import EmbedConfig, bind, embed_t, init_embednet, \
    init_single_embednet
from .generator import GeneratorConfig, build_generator, mean_latent, \
    synthesize_t
from .iterator import IterConfig, optimize_many
from .optim import adam_init, adam_step
from .perceptual import PhiConfig, build_phi, distance_rows_t

log = logging.getLogger(__name__)

TRAIN_MODES = ("full", "no_iterator", "single_encoder", "offline")


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0          # image-level weight
    lambda2: float = 1.0          # feature-level weight
    lambda3: float = 1.0          # latent-level weight
    epochs: int = 2
    batch_size: int = 4
    iterator_steps: int = 100
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 7
    iter_lr: float = 0.01
    alpha: float = 1.0
    threads: int = 1
    iter_chunk: int = 4
    mode: str = "full"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.iterator_steps < 1:
            raise ValueError("iterator_steps must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")

    def iter_config(self, steps=None):
        return IterConfig(steps=self.iterator_steps if steps is None else steps,
                          lr=self.iter_lr, alpha=self.alpha)


class SupervisionCache:
    """Per-sample best latent and its inversion loss, monotonically improving."""

    def __init__(self):
        self._store = {}
        #: accepted-loss sequences per sample, for the monotonicity audit
        self.history = {}

    def __len__(self):
        return len(self._store)

    def __contains__(self, sid):
        return sid in self._store

    def get(self, sid):
        return self._store.get(sid)

    def best_latent(self, sid):
        return self._store[sid][1]

    def record(self, sid, loss, w):
        loss = np.float32(loss)
        self._store[sid] = (loss, np.array(w, dtype=np.float32, copy=True))
        self.history.setdefault(sid, []).append(float(loss))

    def items(self):
        return sorted(self._store.items())

    def save(self, path):
        fileio.write_cache_file(
            path, [(sid, loss, w) for sid, (loss, w) in self.items()])

    @classmethod
    def load(cls, path):
        cache = cls()
        for sid, loss, w in fileio.read_cache_file(path):
            cache._store[int(sid)] = (np.float32(loss), w)
        return cache

    def equals(self, other):
        """Exact equality: same samples, bit-identical losses and latents."""
        if set(self._store) != set(other._store):
            return False
        for sid, (loss, w) in self._store.items():
            loss2, w2 = other._store[sid]
            if loss.tobytes() != loss2.tobytes() or w.tobytes() != w2.tobytes():
                return False
        return True


def inversion_loss(gen, phi, w, x, alpha=1.0):
    """Canonical single-sample L_opt(w; x): pixel MSE + alpha * feature dist.

    This is the score the cache compares on; it is always computed on a
    batch-1 tape so cached values never depend on batching context.
    """
    tape = Tape(np.float32)
    wt = tape.leaf(np.asarray(w, np.float32)[None], name="w")
    img = synthesize_t(gen, wt)
    xc = tape.const(np.asarray(x, np.float32)[None])
    m = tape.mean_rows(tape.square(tape.sub(img, xc)))
    p = distance_rows_t(phi, img, b=xc)
    return float(m.data[0] + np.float32(alpha) * p.data[0])


def update_cache(cache, sample_id, w_candidate, x, gen, phi, alpha=1.0):
    """Keep the candidate iff it strictly beats the stored loss."""
    try:
        loss = np.float32(inversion_loss(gen, phi, w_candidate, x, alpha))
    except FiniteError as e:
        log.warning("cache candidate for sample %d rejected: %s", sample_id, e)
        return False
    if not np.isfinite(loss):
        log.warning("cache candidate for sample %d rejected: non-finite loss",
                    sample_id)
        return False
    cur = cache.get(sample_id)
    if cur is not None and loss >= cur[0]:
        return False
    cache.record(sample_id, loss, w_candidate)
    return True


def compute_losses(gen, phi, w_e, w_o):
    """(L_w, L_mse, L_per) between an embedded and a target latent.

    L_w is the mean-square entry difference, L_mse the mean-square pixel
    difference of the two synthesized images, L_per their feature
    distance.  In training, gradients flow through w_e only.
    """
    tape = Tape(np.float32)
    we = tape.leaf(np.asarray(w_e, np.float32)[None], name="w_e")
    wo = tape.const(np.asarray(w_o, np.float32)[None], name="w_o")
    if we.data.shape != wo.data.shape:
        raise ShapeError(f"latent shapes differ: {we.data.shape} vs {wo.data.shape}")
    lw = tape.mean_rows(tape.square(tape.sub(we, wo)))
    xe = synthesize_t(gen, we)
    xo = synthesize_t(gen, wo)
    lmse = tape.mean_rows(tape.square(tape.sub(xe, xo)))
    lper = distance_rows_t(phi, xe, b=xo)
    return float(lw.data[0]), float(lmse.data[0]), float(lper.data[0])


@dataclass
class BatchRow:
    epoch: int
    batch: int
    l_w: float
    l_mse: float
    l_per: float

    def total(self, cfg):
        return cfg.lambda1 * self.l_mse + cfg.lambda2 * self.l_per + cfg.lambda3 * self.l_w


@dataclass
class EpochRow:
    epoch: int
    l_w: float
    l_mse: float
    l_per: float
    total: float
    holdout_mse: float
    holdout_phi: float
    seconds: float


@dataclass
class LossReport:
    config: TrainConfig
    batches: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    encoder_updates: int = 0
    iterator_steps_spent: int = 0

    def save(self, out_dir):
        with open(os.path.join(out_dir, "losses.csv"), "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "batch", "l_w", "l_mse", "l_per", "total"])
            for r in self.batches:
                wr.writerow([r.epoch, r.batch, f"{r.l_w:.9g}", f"{r.l_mse:.9g}",
                             f"{r.l_per:.9g}", f"{r.total(self.config):.9g}"])
        with open(os.path.join(out_dir, "epochs.csv"), "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "l_w", "l_mse", "l_per", "total",
                         "holdout_mse", "holdout_phi", "seconds"])
            for r in self.epochs:
                wr.writerow([r.epoch, f"{r.l_w:.9g}", f"{r.l_mse:.9g}",
                             f"{r.l_per:.9g}", f"{r.total:.9g}",
                             f"{r.holdout_mse:.9g}", f"{r.holdout_phi:.9g}",
                             f"{r.seconds:.3f}"])


@dataclass
class TrainHooks:
    """Instrumentation points; all optional.

    ``on_supervision(sample_ids, targets, cache)`` fires right before the
    encoder update with the exact latent targets being used.
    """
    on_supervision: callable = None


def holdout_metrics(gen, phi, embednet, samples, chunk=32):
    """Mean reconstruction MSE and feature distance of G(embed(x)) vs x."""
    mses, phis = [], []
    for i in range(0, len(samples), chunk):
        xs = np.stack([s.image for s in samples[i:i + chunk]]).astype(np.float32)
        tape = Tape(np.float32)
        xt = tape.const(xs)
        w = embed_t(xt, embednet, bind(tape, embednet, trainable=False))
        recon = synthesize_t(gen, w)
        m = tape.mean_rows(tape.square(tape.sub(recon, xt)))
        p = distance_rows_t(phi, recon, b=xt)
        mses.extend(m.data.tolist())
        phis.extend(p.data.tolist())
    return float(np.mean(mses)), float(np.mean(phis))


# ---- checkpointing ---------------------------------------------------------

def save_checkpoint(path, gen, phi, embednet, adam_state, epoch, config):
    entries = []
    for name, arr in gen.arrays():
        entries.append((f"gen/{name}", arr))
    for name, arr in phi.arrays():
        entries.append((f"phi/{name}", arr))
    for name, arr in embednet.arrays():
        entries.append((f"embed/{name}", arr))
    for name, st in adam_state.items():
        entries.append((f"adam/{name}/m", st["m"]))
        entries.append((f"adam/{name}/v", st["v"]))
        entries.append((f"adam/{name}/t", np.asarray([st["t"]], np.float32)))
    entries.extend([
        ("meta/epoch", np.asarray([epoch], np.float32)),
        ("meta/trained_epochs", np.asarray([embednet.trained_epochs], np.float32)),
        ("meta/embed_kind", np.asarray([0 if embednet.kind == "two_branch" else 1],
                                       np.float32)),
        ("meta/embed_seed", np.asarray([embednet.seed], np.float32)),
        ("meta/gen_seed", np.asarray([gen.seed], np.float32)),
        ("meta/phi_seed", np.asarray([phi.seed], np.float32)),
    ])
    fileio.write_ckpt(path, entries)


def load_checkpoint(path, gen_config=GeneratorConfig(), phi_config=PhiConfig(),
                    embed_config=EmbedConfig()):
    """Rebuild (gen, phi, embednet, adam_state, epoch) from a checkpoint.

    Generator and phi are reconstructed from their stored seeds and then
    verified entry-by-entry against the stored arrays (frozen contract);
    a mismatch is an error.
    """
    table = fileio.read_ckpt(path)
    gen = build_generator(int(table["meta/gen_seed"][0]), gen_config)
    for name, arr in gen.arrays():
        stored = table[f"gen/{name}"]
        if stored.shape != arr.shape or stored.tobytes() != arr.tobytes():
            raise fileio.FileFormatError(
                f"{path}: stored generator entry {name} does not match its seed")
    phi = build_phi(int(table["meta/phi_seed"][0]), phi_config)
    for name, arr in phi.arrays():
        stored = table[f"phi/{name}"]
        if stored.shape != arr.shape or stored.tobytes() != arr.tobytes():
            raise fileio.FileFormatError(
                f"{path}: stored phi entry {name} does not match its seed")
    kind = int(table["meta/embed_kind"][0])
    emb_seed = int(table["meta/embed_seed"][0])
    init = init_embednet if kind == 0 else init_single_embednet
    embednet = init(emb_seed, embed_config)
    for name, _ in embednet.arrays():
        embednet.set(name, table[f"embed/{name}"])
    embednet.trained_epochs = int(table["meta/trained_epochs"][0])
    adam_state = {}
    for name, _ in embednet.arrays():
        key = f"adam/{name}/m"
        if key in table:
            adam_state[name] = {
                "m": table[f"adam/{name}/m"],
                "v": table[f"adam/{name}/v"],
                "t": int(table[f"adam/{name}/t"][0]),
            }
    epoch = int(table["meta/epoch"][0])
    return gen, phi, embednet, adam_state, epoch


def latest_checkpoint(out_dir):
    """(path, epoch) of the newest epoch checkpoint, or (None, 0)."""
    best, best_epoch = None, 0
    if os.path.isdir(out_dir):
        for name in os.listdir(out_dir):
            if name.startswith("epoch_") and name.endswith(".ckpt"):
                try:
                    e = int(name[6:-5])
                except ValueError:
                    continue
                if e > best_epoch:
                    best, best_epoch = os.path.join(out_dir, name), e
    return best, best_epoch


# ---- the training loop -----------------------------------------------------

def _epoch_order(ids, seed, epoch):
    perm = np.random.default_rng(
        np.random.SeedSequence((seed, epoch))).permutation(len(ids))
    return [ids[i] for i in perm]


def _encoder_update(embednet, adam_state, bound, lr, beta1, beta2):
    for name, _ in embednet.arrays():
        t = bound[name]
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if name not in adam_state:
            adam_state[name] = adam_init(t.data.shape)
        embednet.set(name, adam_step(t.data, g, adam_state[name],
                                     lr, beta1, beta2))


def train(corpus, gen, phi, embednet, config, out_dir=None, resume=False,
          hooks=None):
    """Run the collaborative loop; returns (embednet, cache, report).

    ``corpus`` is a Corpus; training uses its train split and reports
    held-out metrics on its test split each epoch.  With ``out_dir``,
    every epoch writes a checkpoint, the cache, and the loss CSVs;
    ``resume=True`` continues from the newest epoch checkpoint and
    reproduces the uninterrupted run exactly.
    """
    hooks = hooks or TrainHooks()
    train_samples = corpus.train
    if not train_samples:
        raise ValueError("corpus has no training samples")
    cache = SupervisionCache()
    adam_state = {}
    report = LossReport(config=config)
    start_epoch = 0

    if resume:
        if out_dir is None:
            raise ValueError("resume requires out_dir")
        path, epoch = latest_checkpoint(out_dir)
        if path is not None:
            gen, phi, embednet, adam_state, start_epoch = load_checkpoint(
                path, gen.config, phi.config, embednet.config)
            cache_path = os.path.join(out_dir, f"epoch_{start_epoch:03d}.cache")
            if os.path.exists(cache_path):
                cache = SupervisionCache.load(cache_path)
            report = _load_report(out_dir, config, start_epoch)
            log.info("resumed from %s (epoch %d)", path, start_epoch)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    if config.mode == "offline" and start_epoch == 0:
        _offline_precompute(cache, corpus, gen, phi, config)

    with threadpool_limits(limits=1):
        for epoch in range(start_epoch, config.epochs):
            t_epoch = time.perf_counter()
            order = _epoch_order([s.sample_id for s in train_samples],
                                 config.seed, epoch)
            sums = np.zeros(3, dtype=np.float64)
            n_batches = 0
            for b0 in range(0, len(order), config.batch_size):
                sids = order[b0:b0 + config.batch_size]
                batch = [corpus.by_id[sid] for sid in sids]
                row = _train_batch(cache, batch, sids, gen, phi, embednet,
                                   adam_state, config, epoch,
                                   b0 // config.batch_size, hooks)
                report.batches.append(row)
                report.encoder_updates += 1
                sums += (row.l_w, row.l_mse, row.l_per)
                n_batches += 1
            means = sums / max(n_batches, 1)
            hold_mse, hold_phi = (holdout_metrics(gen, phi, embednet, corpus.test)
                                  if corpus.test else (float("nan"), float("nan")))
            embednet.trained_epochs = epoch + 1
            row = EpochRow(epoch=epoch, l_w=float(means[0]), l_mse=float(means[1]),
                           l_per=float(means[2]),
                           total=config.lambda1 * float(means[1])
                           + config.lambda2 * float(means[2])
                           + config.lambda3 * float(means[0]),
                           holdout_mse=hold_mse, holdout_phi=hold_phi,
                           seconds=time.perf_counter() - t_epoch)
            report.epochs.append(row)
            log.info("epoch %d: L_w %.4g L_mse %.4g L_per %.4g holdout mse %.4g "
                     "(%.1fs)", epoch, row.l_w, row.l_mse, row.l_per,
                     row.holdout_mse, row.seconds)
            if out_dir is not None:
                save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:03d}.ckpt"),
                                gen, phi, embednet, adam_state, epoch + 1, config)
                cache.save(os.path.join(out_dir, f"epoch_{epoch + 1:03d}.cache"))
                report.save(out_dir)
    if config.mode == "full" or config.mode == "single_encoder" \
            or config.mode == "offline":
        report.iterator_steps_spent = _iterator_budget(config, len(train_samples))
    return embednet, cache, report


def _iterator_budget(config, n_train):
    per_epoch = n_train * config.iterator_steps
    return per_epoch * config.epochs


def _offline_precompute(cache, corpus, gen, phi, config):
    """Invert every training image once, up front, from the mean latent.

    Spends the same total iterator budget as the online loop
    (epochs * iterator_steps per sample), then training proceeds with a
    static cache.
    """
    samples = corpus.train
    w_bar = mean_latent(gen)
    steps = config.epochs * config.iterator_steps
    xs = np.stack([s.image for s in samples]).astype(np.float32)
    inits = np.repeat(w_bar[None], len(samples), axis=0)
    log.info("offline mode: pre-inverting %d samples for %d steps each",
             len(samples), steps)
    w_all, _ = optimize_many(gen, phi, xs, inits, config.iter_config(steps),
                             chunk=config.iter_chunk, threads=config.threads)
    for s, w in zip(samples, w_all):
        update_cache(cache, s.sample_id, w, s.image, gen, phi, config.alpha)


def _train_batch(cache, batch, sids, gen, phi, embednet, adam_state, config,
                 epoch, batch_idx, hooks):
    xs = np.stack([s.image for s in batch]).astype(np.float32)

    # encoder forward (recorded; the update reuses this tape)
    tape = Tape(np.float32)
    bound = bind(tape, embednet, trainable=True)
    xt = tape.const(xs)
    w_e = embed_t(xt, embednet, bound)

    if config.mode == "no_iterator":
        # ablation: supervise directly against the input pixels
        recon = synthesize_t(gen, w_e)
        l_mse = tape.mean_rows(tape.square(tape.sub(recon, xt)))
        l_per = distance_rows_t(phi, recon, b=xt)
        total = tape.add(tape.scale(l_mse, config.lambda1),
                         tape.scale(l_per, config.lambda2))
        loss = tape.scale(tape.sum_all(total), 1.0 / len(batch))
        tape.backward(loss)
        _encoder_update(embednet, adam_state, bound, config.lr,
                        config.beta1, config.beta2)
        return BatchRow(epoch, batch_idx, 0.0, float(np.mean(l_mse.data)),
                        float(np.mean(l_per.data)))

    if config.mode in ("full", "single_encoder"):
        # refine the embeddings and offer the results to the cache
        w_o, _ = optimize_many(gen, phi, xs, w_e.data.copy(),
                               config.iter_config(), chunk=config.iter_chunk,
                               threads=config.threads)
        for i, s in enumerate(batch):
            update_cache(cache, s.sample_id, w_o[i], s.image, gen, phi,
                         config.alpha)
    # offline mode: cache was filled up front and stays as-is

    # a sample can be missing only if every candidate so far was non-finite;
    # fall back to its own embedding (a zero-gradient self-target)
    targets = np.stack([cache.best_latent(sid) if sid in cache else w_e.data[i]
                        for i, sid in enumerate(sids)])
    if hooks.on_supervision is not None:
        hooks.on_supervision(sids, targets, cache)

    wo = tape.const(targets, name="w_o")
    l_w = tape.mean_rows(tape.square(tape.sub(w_e, wo)))
    x_o = synthesize_t(gen, wo)
    x_e = synthesize_t(gen, w_e)
    l_mse = tape.mean_rows(tape.square(tape.sub(x_e, x_o)))
    l_per = distance_rows_t(phi, x_e, b=x_o)
    total = tape.add(tape.add(tape.scale(l_mse, config.lambda1),
                              tape.scale(l_per, config.lambda2)),
                     tape.scale(l_w, config.lambda3))
    loss = tape.scale(tape.sum_all(total), 1.0 / len(batch))
    tape.backward(loss)
    _encoder_update(embednet, adam_state, bound, config.lr,
                    config.beta1, config.beta2)
    return BatchRow(epoch, batch_idx, float(np.mean(l_w.data)),
                    float(np.mean(l_mse.data)), float(np.mean(l_per.data)))


def _load_report(out_dir, config, upto_epoch):
    """Rebuild the loss report rows written by completed epochs."""
    report = LossReport(config=config)
    path = os.path.join(out_dir, "losses.csv")
    if os.path.exists(path):
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if int(row["epoch"]) < upto_epoch:
                    report.batches.append(BatchRow(
                        int(row["epoch"]), int(row["batch"]), float(row["l_w"]),
                        float(row["l_mse"]), float(row["l_per"])))
                    report.encoder_updates += 1
    path = os.path.join(out_dir, "epochs.csv")
    if os.path.exists(path):
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                if int(row["epoch"]) < upto_epoch:
                    report.epochs.append(EpochRow(
                        int(row["epoch"]), float(row["l_w"]), float(row["l_mse"]),
                        float(row["l_per"]), float(row["total"]),
                        float(row["holdout_mse"]), float(row["holdout_phi"]),
                        float(row["seconds"])))
    return report
