"""Flat key=value run configuration with a validated schema.

One namespace covers every stage (corpus, training, inversion, bench,
editing) so a single file can drive a whole experiment.  Values resolve
in order: schema default, config file, explicit overrides, then the
STYLEINV_THREADS environment variable for the thread count.
"""

import os

from . import __version__
from . import backend


class ConfigError(ValueError):
    """Raised for unknown keys, malformed lines, or untypable values."""


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# name -> (type, default). Types are int, float, bool, or str.
SCHEMA = {
    # corpus synthesis
    "n": (int, 512),
    "train_frac": (float, 0.8),
    "perturb_fraction": (float, 0.0),
    "corpus_dir": (str, "corpus"),
    "corpus_seed": (int, 11),
    # frozen network builds
    "gen_seed": (int, 1),
    "phi_seed": (int, 2),
    "embed_seed": (int, 3),
    # training
    "seed": (int, 7),
    "epochs": (int, 2),
    "batch_size": (int, 4),
    "lambda1": (float, 1.0),
    "lambda2": (float, 1.0),
    "lambda3": (float, 1.0),
    "lr": (float, 1e-4),
    "beta1": (float, 0.5),
    "beta2": (float, 0.999),
    "iterator_steps": (int, 100),
    "iter_lr": (float, 0.01),
    "iter_alpha": (float, 1.0),
    "iter_chunk": (int, 4),
    "threads": (int, 1),
    "no_iterator": (bool, False),
    "single_encoder": (bool, False),
    "offline": (bool, False),
    "run_dir": (str, "run_full"),
    # inversion
    "init": (str, "encoder"),
    "steps": (int, 100),
    "invert_dir": (str, "inverted"),
    "mean_n": (int, 4096),
    "mean_seed": (int, 0),
    # benchmark reproduction
    "bench_dir": (str, "bench"),
    "bench_samples": (int, 20),
    "bench_ablation_samples": (int, 64),
    "bench_budget": (int, 1000),
    "noiter_dir": (str, "run_noiter"),
    "single_dir": (str, "run_single"),
    "offline_dir": (str, "run_offline"),
    # editing and evaluation
    "edit_dir": (str, "edits"),
    "mix_k": (int, 4),
    "eval_dir": (str, "eval"),
    "eval_steps": (int, 0),
}


def _coerce(key, raw):
    typ, _ = SCHEMA[key]
    if isinstance(raw, typ) and not (typ is not bool and isinstance(raw, bool)):
        return raw
    text = str(raw)
    try:
        if typ is bool:
            return _parse_bool(text)
        if typ is int:
            return int(text, 10)
        if typ is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({typ.__name__})") from exc


def parse_config_text(text):
    """Parse key=value lines; '#' starts a comment, blank lines ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


class RunConfig:
    """Fully-resolved configuration: every schema key has a typed value."""

    def __init__(self, values):
        unknown = set(values) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown keys: {sorted(unknown)}")
        self._values = {k: _coerce(k, values.get(k, d)) for k, (t, d) in SCHEMA.items()}

    def __getitem__(self, key):
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        return self._values[key]

    def with_overrides(self, overrides):
        merged = dict(self._values)
        for key, raw in overrides.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = _coerce(key, raw)
        return RunConfig(merged)

    def text(self):
        lines = [f"# styleinv {__version__} backend={backend.name}"]
        lines += [f"{k} = {self._values[k]}" for k in sorted(SCHEMA)]
        return "\n".join(lines) + "\n"

    def write_into(self, out_dir):
        """Echo the resolved config and version identifier into out_dir."""
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "run_config.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())
        return path


def parse_override(token):
    """Split a command-line 'key=value' override token."""
    if "=" not in token:
        raise ConfigError(f"override must look like key=value, got {token!r}")
    key, _, raw = token.partition("=")
    return key.strip(), raw.strip()


def resolve(config_path=None, overrides=None, env=None):
    """Build a RunConfig from an optional file plus override tokens."""
    values = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    cfg = RunConfig(values)
    if overrides:
        cfg = cfg.with_overrides(dict(parse_override(t) for t in overrides))
    env = os.environ if env is None else env
    threads = env.get("STYLEINV_THREADS")
    if threads is not None:
        cfg = cfg.with_overrides({"threads": threads})
    return cfg
