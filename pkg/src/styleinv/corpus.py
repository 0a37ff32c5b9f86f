"""Synthetic ground-truth corpus: images with known latent codes.

Every generated sample stores the exact latent that produced it, so
inversion error can be measured against an oracle.  Optional perturbed
variants (noise, blur, channel gain) probe off-manifold behaviour and
carry no oracle latent.  Images live in [-1, 1] as float32 and persist
as 8-bit P6 PPM; generated samples additionally persist their latent so
the float-exact image can be re-synthesized on load.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .fileio import FileFormatError, read_tensor, write_tensor
from .generator import synthesize

PERTURB_KINDS = ("gaussian_noise", "box_blur3", "channel_gain")


@dataclass
class CorpusSample:
    sample_id: int
    image: np.ndarray
    oracle_latent: np.ndarray | None
    provenance: str


class Corpus:
    def __init__(self, samples, train_ids, test_ids, seed):
        self.by_id = {s.sample_id: s for s in samples}
        self.train_ids = list(train_ids)
        self.test_ids = list(test_ids)
        self.seed = seed

    @property
    def train(self):
        return [self.by_id[i] for i in self.train_ids]

    @property
    def test(self):
        return [self.by_id[i] for i in self.test_ids]

    def __len__(self):
        return len(self.by_id)


def sample_prior(rng, n_layers, dim):
    """One layered latent draw: a shared base vector plus small per-row jitter.

    Rows stay strongly correlated (base-dominated), so the empirical mean
    latent is a meaningful starting point.
    """
    base = rng.standard_normal(dim)
    return base[None, :] + 0.1 * rng.standard_normal((n_layers, dim))


def _sample_rng(seed, sample_id):
    return np.random.default_rng(np.random.SeedSequence((seed, sample_id)))


def perturb(image, kind, magnitude, rng):
    """Clamped corruption of an image; magnitude 0 is the identity."""
    image = np.asarray(image, dtype=np.float32)
    m = float(magnitude)
    if kind == "gaussian_noise":
        out = image + m * rng.standard_normal(image.shape).astype(np.float32)
    elif kind == "box_blur3":
        # edge padding keeps constant images fixed points of the blur
        xp = np.pad(image, ((0, 0), (1, 1), (1, 1)), mode="edge")
        acc = np.zeros_like(image)
        for i in range(3):
            for j in range(3):
                acc += xp[:, i:i + image.shape[1], j:j + image.shape[2]]
        out = (1.0 - m) * image + m * (acc / 9.0)
    elif kind == "channel_gain":
        gains = (1.0 + m * rng.standard_normal(image.shape[0])).astype(np.float32)
        out = image * gains[:, None, None]
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def split_ids(ids, seed, train_frac=0.8):
    """Deterministic shuffled split; train takes ceil(frac*n)."""
    ids = list(ids)
    perm = np.random.default_rng(np.random.SeedSequence((seed, 0x73706C))).permutation(len(ids))
    n_train = math.ceil(train_frac * len(ids))
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def gen_corpus(gen, n, seed, train_frac=0.8, perturb_fraction=0.0):
    """Generate ``n`` samples with oracle latents plus perturbed variants.

    Each sample draws from its own counter-based stream, so generation
    order (or parallelism) cannot change the corpus.  Images are
    synthesized one sample at a time; that per-sample path is the
    canonical one that re-synthesis must match bit-exactly.
    """
    if n < 2:
        raise ValueError("corpus needs at least 2 samples for a split")
    cfg = gen.config
    samples = []
    for sid in range(n):
        rng = _sample_rng(seed, sid)
        w = sample_prior(rng, cfg.n_layers, cfg.latent_dim).astype(np.float32)
        img = synthesize(gen, w)
        samples.append(CorpusSample(sid, img, w, "generated"))
    n_perturbed = int(round(perturb_fraction * n))
    if n_perturbed:
        prng = np.random.default_rng(np.random.SeedSequence((seed, 0x706572)))
        sources = prng.choice(n, size=n_perturbed, replace=False)
        for i, src in enumerate(sources):
            kind = PERTURB_KINDS[i % len(PERTURB_KINDS)]
            mag = float(prng.uniform(0.05, 0.3))
            img = perturb(samples[src].image, kind, mag, prng)
            samples.append(CorpusSample(
                n + i, img, None, f"perturbed:{kind}:{mag:.4f}:src{src}"))
    train_ids, test_ids = split_ids([s.sample_id for s in samples], seed, train_frac)
    return Corpus(samples, train_ids, test_ids, seed)


# ---- PPM image I/O --------------------------------------------------------

def write_ppm(path, image):
    """8-bit P6 file; [-1,1] maps to [0,255] with round-half-up."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {image.shape}")
    scaled = np.floor((image.astype(np.float64) + 1.0) * 127.5 + 0.5)
    u8 = np.clip(scaled, 0, 255).astype(np.uint8)
    h, w = image.shape[1], image.shape[2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(u8.transpose(1, 2, 0).tobytes())


def _ppm_tokens(buf, count):
    """First ``count`` whitespace-separated header tokens, honoring # comments.

    Returns (tokens, offset of the byte after the single whitespace that
    terminates the last token).
    """
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(buf):
            raise FileFormatError("truncated PPM header")
        c = buf[i:i + 1]
        if c == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
            i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
                j += 1
            tokens.append(buf[i:j])
            i = j
            if len(tokens) == count:
                # exactly one whitespace byte separates header from payload
                if i >= len(buf) or not buf[i:i + 1].isspace():
                    raise FileFormatError("PPM header not terminated by whitespace")
                i += 1
    return tokens, i


def read_ppm(path):
    """Read a P6 file back to a float32 (3,H,W) image in [-1,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, offset = _ppm_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise FileFormatError(f"{path}: not a P6 PPM")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise FileFormatError(f"{path}: bad PPM header") from e
    if maxval != 255:
        raise FileFormatError(f"{path}: unsupported maxval {maxval}")
    need = w * h * 3
    data = buf[offset:offset + need]
    if len(data) != need:
        raise FileFormatError(f"{path}: truncated pixel payload")
    u8 = np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
    return (u8.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


# ---- persistence ----------------------------------------------------------

def save_corpus(corpus, out_dir):
    """Write images, latents and the manifest under ``out_dir``."""
    img_dir = os.path.join(out_dir, "images")
    lat_dir = os.path.join(out_dir, "latents")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lat_dir, exist_ok=True)
    split_of = {sid: "train" for sid in corpus.train_ids}
    split_of.update({sid: "test" for sid in corpus.test_ids})
    rows = []
    for sid in sorted(corpus.by_id):
        s = corpus.by_id[sid]
        img_rel = f"images/{sid:05d}.ppm"
        write_ppm(os.path.join(out_dir, img_rel), s.image)
        lat_rel = ""
        if s.oracle_latent is not None:
            lat_rel = f"latents/{sid:05d}.ten"
            write_tensor(os.path.join(out_dir, lat_rel), s.oracle_latent)
        rows.append((sid, s.provenance, split_of[sid], img_rel, lat_rel))
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["sample_id", "provenance", "split", "image_path", "latent_path"])
        wr.writerows(rows)


def load_corpus(corpus_dir, gen=None, seed=0):
    """Load a saved corpus from its manifest.

    With ``gen`` given, generated samples are re-synthesized from their
    stored latents (bit-exact float images); without it, the quantized
    PPM pixels are used.  Perturbed samples always come from PPM.
    """
    manifest = os.path.join(corpus_dir, "manifest.csv")
    samples, train_ids, test_ids = [], [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            sid = int(row["sample_id"])
            latent = None
            if row["latent_path"]:
                latent = read_tensor(os.path.join(corpus_dir, row["latent_path"]))
            if latent is not None and gen is not None:
                img = synthesize(gen, latent)
            else:
                img = read_ppm(os.path.join(corpus_dir, row["image_path"]))
            samples.append(CorpusSample(sid, img, latent, row["provenance"]))
            (train_ids if row["split"] == "train" else test_ids).append(sid)
    return Corpus(samples, train_ids, test_ids, seed)
