"""Command-line entry point.

Subcommands: gen-corpus, train, invert, bench, edit, eval.  Every
subcommand takes --workdir (all relative paths resolve against it),
an optional --config file, and repeatable --set key=value overrides.
Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, backend
from .autodiff import AutodiffError
from .config import ConfigError, resolve
from .corpus import gen_corpus, load_corpus, read_ppm, save_corpus, write_ppm
from .editing import colorize, grayscale, montage_h, morph, style_mix
from .embedder import embed, init_embednet, init_single_embednet
from .fileio import FileFormatError, write_tensor
from .generator import build_generator, synthesize
from .iterator import IterConfig, init_latent, optimize_latent, optimize_many
from .metrics import metric_report
from .perceptual import build_phi, distance
from .trainer import (TrainConfig, holdout_metrics, latest_checkpoint,
                      load_checkpoint, train)


class MissingArtifactError(RuntimeError):
    """A required corpus or checkpoint has not been produced yet."""


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1 (argparse defaults to 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--workdir", default=".", help="base directory for all paths")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")


def _p(workdir, rel):
    return rel if os.path.isabs(rel) else os.path.join(workdir, rel)


def _resolve(args):
    path = None
    if args.config is not None:
        path = _p(args.workdir, args.config)
    return resolve(config_path=path, overrides=args.overrides)


def _train_mode(cfg):
    flags = [k for k in ("no_iterator", "single_encoder", "offline") if cfg[k]]
    if len(flags) > 1:
        raise ConfigError(f"ablation flags are mutually exclusive, got {flags}")
    return flags[0] if flags else "full"


def _train_config(cfg, mode):
    return TrainConfig(
        lambda1=cfg["lambda1"], lambda2=cfg["lambda2"], lambda3=cfg["lambda3"],
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        iterator_steps=cfg["iterator_steps"], lr=cfg["lr"],
        beta1=cfg["beta1"], beta2=cfg["beta2"], seed=cfg["seed"],
        iter_lr=cfg["iter_lr"], alpha=cfg["iter_alpha"],
        threads=cfg["threads"], iter_chunk=cfg["iter_chunk"], mode=mode)


def _load_corpus(cfg, workdir, gen):
    path = _p(workdir, cfg["corpus_dir"])
    if not os.path.isfile(os.path.join(path, "manifest.csv")):
        raise MissingArtifactError(
            f"no corpus at {path}; produce one with `styleinv gen-corpus`")
    return load_corpus(path, gen=gen, seed=cfg["corpus_seed"])


def _load_run(workdir, run_dir, what):
    path = _p(workdir, run_dir)
    ckpt, epoch = latest_checkpoint(path)
    if ckpt is None:
        raise MissingArtifactError(
            f"no checkpoint in {path}; train the {what} with `styleinv train` "
            f"(run_dir={run_dir})")
    gen, phi, embednet, _, _ = load_checkpoint(ckpt)
    return gen, phi, embednet, epoch


def _iter_config(cfg, steps):
    return IterConfig(steps=steps, lr=cfg["iter_lr"], alpha=cfg["iter_alpha"])


# ---- subcommands -----------------------------------------------------------

def cmd_gen_corpus(args):
    cfg = _resolve(args)
    gen = build_generator(cfg["gen_seed"])
    corpus = gen_corpus(gen, cfg["n"], cfg["corpus_seed"],
                        train_frac=cfg["train_frac"],
                        perturb_fraction=cfg["perturb_fraction"])
    out = _p(args.workdir, cfg["corpus_dir"])
    save_corpus(corpus, out)
    cfg.write_into(out)
    print(f"corpus: {len(corpus)} samples, split "
          f"{len(corpus.train_ids)}/{len(corpus.test_ids)} -> {out}")
    return 0


def cmd_train(args):
    cfg = _resolve(args)
    mode = _train_mode(cfg)
    gen = build_generator(cfg["gen_seed"])
    phi = build_phi(cfg["phi_seed"])
    corpus = _load_corpus(cfg, args.workdir, gen)
    if mode == "single_encoder":
        embednet = init_single_embednet(cfg["embed_seed"])
    else:
        embednet = init_embednet(cfg["embed_seed"])
    out = _p(args.workdir, cfg["run_dir"])
    cfg.write_into(out)
    t0 = time.perf_counter()
    embednet, cache, report = train(corpus, gen, phi, embednet,
                                    _train_config(cfg, mode),
                                    out_dir=out, resume=args.resume)
    last = report.epochs[-1]
    print(f"trained {mode} model: {embednet.trained_epochs} epochs, "
          f"{len(cache.items())} cached latents, "
          f"holdout mse {last.holdout_mse:.6f} phi {last.holdout_phi:.6f}, "
          f"{time.perf_counter() - t0:.1f}s -> {out}")
    return 0


def cmd_invert(args):
    cfg = _resolve(args)
    scheme = args.init if args.init is not None else cfg["init"]
    steps = args.steps if args.steps is not None else cfg["steps"]
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    x = read_ppm(_p(args.workdir, args.image))
    embednet = None
    if scheme == "encoder":
        gen, phi, embednet, _ = _load_run(args.workdir, cfg["run_dir"], "encoder")
    else:
        gen = build_generator(cfg["gen_seed"])
        phi = build_phi(cfg["phi_seed"])
    w0 = init_latent(scheme, gen, x=x, embednet=embednet,
                     rng=np.random.default_rng(cfg["seed"]),
                     mean_n=cfg["mean_n"], mean_seed=cfg["mean_seed"])
    if steps > 0:
        w, trace = optimize_latent(gen, phi, x, w0, _iter_config(cfg, steps))
    else:
        w, trace = w0, None

    stem = os.path.splitext(os.path.basename(args.image))[0]
    out = os.path.join(_p(args.workdir, cfg["invert_dir"]), stem)
    os.makedirs(out, exist_ok=True)
    cfg.write_into(out)
    recon = synthesize(gen, w)
    write_tensor(os.path.join(out, "latent.ten"), w)
    write_ppm(os.path.join(out, "recon.ppm"), recon)
    trace_path = os.path.join(out, "trace.csv")
    if trace is not None:
        trace.to_csv(trace_path)
    else:
        m0 = float(np.mean(np.square(recon - x)))
        p0 = float(distance(phi, recon, x))
        with open(trace_path, "w", encoding="utf-8") as fh:
            fh.write("step,mse,phi,total,latent_err\n")
            fh.write(f"0,{m0:.9g},{p0:.9g},{m0 + cfg['iter_alpha'] * p0:.9g},\n")
    rep = metric_report(recon, x, phi_params=phi)
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("mse,psnr_db,ssim,phi\n")
        fh.write(f"{rep.mse:.9g},{rep.psnr_db:.6f},{rep.ssim:.6f},{rep.phi_dist:.9g}\n")
    print(f"inverted {args.image} ({scheme}, {steps} steps): "
          f"psnr {rep.psnr_db:.2f} dB, ssim {rep.ssim:.4f} -> {out}")
    return 0


def _csv_write(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _bench_traces(gen, phi, xs, w0s, cfg, steps):
    config = _iter_config(cfg, steps)
    _, traces = optimize_many(gen, phi, xs, w0s, config,
                              chunk=cfg["iter_chunk"], threads=cfg["threads"])
    return traces


def cmd_bench(args):
    cfg = _resolve(args)
    gen, phi, embednet, _ = _load_run(args.workdir, cfg["run_dir"], "full model")
    corpus = _load_corpus(cfg, args.workdir, gen)
    held = corpus.test
    if len(held) < cfg["bench_samples"]:
        raise MissingArtifactError(
            f"need {cfg['bench_samples']} held-out samples, corpus has {len(held)}")
    out = _p(args.workdir, cfg["bench_dir"])
    os.makedirs(out, exist_ok=True)
    cfg.write_into(out)

    ns = cfg["bench_samples"]
    xs = np.stack([s.image for s in held[:ns]])
    rng = np.random.default_rng(cfg["seed"])
    inits = {
        "encoder": np.stack([init_latent("encoder", gen, x=x, embednet=embednet)
                             for x in xs]),
        "mean": np.stack([init_latent("mean", gen, mean_n=cfg["mean_n"],
                                      mean_seed=cfg["mean_seed"])] * ns),
        "random": np.stack([init_latent("random", gen, rng=rng) for _ in range(ns)]),
    }

    # (a) init scheme x optimization budget, all budgets read off one run
    budgets = (10, 20, 50, 100)
    rows = []
    for name, w0 in inits.items():
        traces = _bench_traces(gen, phi, xs, w0, cfg, max(budgets))
        rows.append([name] + [f"{np.mean([t.loss_at(b) for t in traces]):.9g}"
                              for b in budgets])
    _csv_write(os.path.join(out, "init_budget.csv"),
               ["scheme"] + [f"loss_at_{b}" for b in budgets], rows)

    # (b) long-run upper bound, encoder vs mean init
    rows = []
    for name in ("encoder", "mean"):
        traces = _bench_traces(gen, phi, xs, inits[name], cfg, cfg["bench_budget"])
        rows.append([name, f"{np.mean([t.final.total for t in traces]):.9g}"])
    _csv_write(os.path.join(out, "upper_bound.csv"),
               ["scheme", f"loss_at_{cfg['bench_budget']}"], rows)

    # (c) ablation table: held-out feed-forward reconstruction quality
    na = min(cfg["bench_ablation_samples"], len(held))
    ablate = held[:na]
    rows = [["full"] + [f"{v:.9g}" for v in holdout_metrics(gen, phi, embednet, ablate)]]
    for key, what in (("noiter_dir", "no-iterator baseline"),
                      ("single_dir", "single-encoder baseline")):
        bgen, bphi, bnet, _ = _load_run(args.workdir, cfg[key], what)
        rows.append([cfg[key]] + [f"{v:.9g}"
                                  for v in holdout_metrics(bgen, bphi, bnet, ablate)])
    _csv_write(os.path.join(out, "ablations.csv"),
               ["model", "holdout_mse", "holdout_phi"], rows)

    # (d) wall clock: embed forward vs iterator budgets, median of 10
    x1 = xs[0]
    embed_times = []
    for _ in range(10):
        t0 = time.perf_counter()
        init_latent("encoder", gen, x=x1, embednet=embednet)
        embed_times.append(time.perf_counter() - t0)
    t_embed = float(np.median(embed_times))
    w01 = inits["mean"][0]
    t0 = time.perf_counter()
    optimize_latent(gen, phi, x1, w01, _iter_config(cfg, 100))
    t_100 = time.perf_counter() - t0
    t0 = time.perf_counter()
    optimize_latent(gen, phi, x1, w01, _iter_config(cfg, cfg["bench_budget"]))
    t_long = time.perf_counter() - t0
    _csv_write(os.path.join(out, "runtime.csv"),
               ["stage", "seconds", "ratio_vs_embed"],
               [["embed_forward", f"{t_embed:.6f}", "1"],
                ["iterator_100", f"{t_100:.6f}", f"{t_100 / t_embed:.1f}"],
                [f"iterator_{cfg['bench_budget']}", f"{t_long:.6f}",
                 f"{t_long / t_embed:.1f}"]])

    # (e) offline-pipeline baseline: feed-forward quality vs the full model
    ogen, ophi, onet, _ = _load_run(args.workdir, cfg["offline_dir"],
                                    "offline baseline")
    rows = [["full"] + [f"{v:.9g}" for v in holdout_metrics(gen, phi, embednet, ablate)],
            ["offline"] + [f"{v:.9g}" for v in holdout_metrics(ogen, ophi, onet, ablate)]]
    _csv_write(os.path.join(out, "offline.csv"),
               ["model", "holdout_mse", "holdout_phi"], rows)

    # reconstruction montage: target, encoder recon, mean-init recon
    panels = []
    for i in range(min(4, ns)):
        panels += [xs[i], synthesize(gen, inits["encoder"][i]),
                   synthesize(gen, inits["mean"][i])]
    write_ppm(os.path.join(out, "recon_montage.ppm"), montage_h(panels))
    print(f"bench tables written -> {out}")
    return 0


def cmd_eval(args):
    cfg = _resolve(args)
    gen, phi, embednet, _ = _load_run(args.workdir, cfg["run_dir"], "encoder")
    corpus = _load_corpus(cfg, args.workdir, gen)
    out = _p(args.workdir, cfg["eval_dir"])
    os.makedirs(out, exist_ok=True)
    cfg.write_into(out)
    steps = cfg["eval_steps"]
    rows = []
    for s in corpus.test:
        w = embed(embednet, s.image)
        if steps > 0:
            w, _ = optimize_latent(gen, phi, s.image, w, _iter_config(cfg, steps))
        rep = metric_report(synthesize(gen, w), s.image, phi_params=phi)
        rows.append([s.sample_id, f"{rep.mse:.9g}", f"{rep.psnr_db:.6f}",
                     f"{rep.ssim:.6f}", f"{rep.phi_dist:.9g}"])
    _csv_write(os.path.join(out, "metrics.csv"),
               ["sample_id", "mse", "psnr_db", "ssim", "phi"], rows)
    arr = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    means = arr.mean(axis=0)
    print(f"eval over {len(rows)} held-out samples ({steps} steps): "
          f"mse {means[0]:.6f} psnr {means[1]:.2f} ssim {means[2]:.4f} "
          f"phi {means[3]:.6f} -> {out}")
    return 0


def cmd_edit(args):
    cfg = _resolve(args)
    gen, phi, embednet, _ = _load_run(args.workdir, cfg["run_dir"], "encoder")
    out = _p(args.workdir, cfg["edit_dir"])
    os.makedirs(out, exist_ok=True)
    cfg.write_into(out)

    if args.subop == "morph":
        x1 = read_ppm(_p(args.workdir, args.images[0]))
        x2 = read_ppm(_p(args.workdir, args.images[1]))
        w1, w2 = embed(embednet, x1), embed(embednet, x2)
        lams = (0.0, 0.25, 0.5, 0.75, 1.0)
        panels = [synthesize(gen, morph(w1, w2, lam)) for lam in lams]
        path = os.path.join(out, "morph.ppm")
        write_ppm(path, montage_h(panels))
        print(f"morph strip ({len(lams)} panels) -> {path}")
    elif args.subop == "mix":
        x1 = read_ppm(_p(args.workdir, args.images[0]))
        x2 = read_ppm(_p(args.workdir, args.images[1]))
        w1, w2 = embed(embednet, x1), embed(embednet, x2)
        n_layers = gen.config.n_layers
        panels = [synthesize(gen, style_mix(w1, w2, k))
                  for k in range(n_layers + 1)]
        path = os.path.join(out, "mix.ppm")
        write_ppm(path, montage_h(panels))
        print(f"style-mix strip (k=0..{n_layers}) -> {path}")
    else:
        x_gray = read_ppm(_p(args.workdir, args.images[0]))
        x_color = read_ppm(_p(args.workdir, args.images[1]))
        result = colorize(grayscale(x_gray), x_color, embednet, gen,
                          k=cfg["mix_k"])
        path = os.path.join(out, "colorize.ppm")
        write_ppm(path, montage_h([grayscale(x_gray), x_color, result]))
        print(f"colorization panel -> {path}")
    return 0


# ---- entry point -----------------------------------------------------------

def build_parser():
    top = _Parser(prog="styleinv",
                  description="desk-scale generator inversion laboratory")
    top.add_argument("--version", action="version",
                     version=f"styleinv {__version__} (backend {backend.name})")
    subs = top.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-corpus", help="synthesize the ground-truth corpus")
    _add_common(p)
    p.set_defaults(fn=cmd_gen_corpus)

    p = subs.add_parser("train", help="run the collaborative training loop")
    _add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the newest checkpoint")
    p.set_defaults(fn=cmd_train)

    p = subs.add_parser("invert", help="embed one image into latent space")
    _add_common(p)
    p.add_argument("image", help="target image (PPM)")
    p.add_argument("--init", choices=("encoder", "mean", "random"), default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_invert)

    p = subs.add_parser("bench", help="emit the benchmark table set")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)

    p = subs.add_parser("edit", help="latent-space editing operations")
    _add_common(p)
    p.add_argument("subop", choices=("morph", "mix", "colorize"))
    p.add_argument("images", nargs=2, help="two input images (PPM)")
    p.set_defaults(fn=cmd_edit)

    p = subs.add_parser("eval", help="held-out metric report")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)
    return top


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"styleinv: config error: {exc}", file=sys.stderr)
        return 1
    except (AutodiffError, FileFormatError, MissingArtifactError, OSError,
            ValueError, KeyError) as exc:
        print(f"styleinv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
