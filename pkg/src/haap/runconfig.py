"""INI run configuration shared by every CLI subcommand.

Sections and keys (defaults in parentheses)::

    [run]       seed (0)
    [charset]   name (train94), max_length (25)
    [encoder]   layers (4), width (128), heads (4), mlp_ratio (4.0), patch_w (8), patch_h (4), dropout (0.1)
    [decoder]   heads (4), dropout (0.1), cha (on)
    [training]  mode (ipn), batch_size (32), epochs (20), lr, warmup_frac, weight_decay, grad_clip,
                label_smoothing, temperature_start, temperature_end, val_every, early_stop,
                stop_window, stop_threshold, stop_after, augment, max_steps
    [data]      path (data), count (2000), blur_sigma, occlusion_prob, occlusion_frac,
                rotation_deg, noise_std, shift_px, scale_jitter, lexicon
    [output]    dir (out)

Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from haap.datagen import CorpusSpec, load_lexicon
from haap.encoder import EncoderConfig
from haap.model import ModelConfig
from haap.training import TrainConfig


class ConfigError(ValueError):
    pass


_ENCODER_KEYS = ("layers", "width", "heads", "mlp_ratio", "patch_w", "patch_h", "dropout")
_TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("model", "seed"))
_DATA_KEYS = ("path", "count", "blur_sigma", "occlusion_prob", "occlusion_frac", "rotation_deg", "noise_std",
              "shift_px", "scale_jitter", "lexicon")
SCHEMA = {
    "run": ("seed",),
    "charset": ("name", "max_length"),
    "encoder": _ENCODER_KEYS,
    "decoder": ("heads", "dropout", "cha"),
    "training": _TRAIN_KEYS,
    "data": _DATA_KEYS,
    "output": ("dir",),
}


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data_path: Path = Path("data")
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    out_dir: Path = Path("out")

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.training, model=self.model, seed=self.seed)


def _coerce(raw: str, like, where: str):
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def _section(cp, name, defaults_obj, keys, rename=None):
    rename = rename or {}
    out = {}
    if not cp.has_section(name):
        return out
    for key, raw in cp.items(name):
        if key not in keys:
            raise ConfigError(f"unknown key [{name}] {key}")
        attr = rename.get(key, key)
        like = getattr(defaults_obj, attr)
        if like is None:
            out[attr] = None if raw.strip().lower() in ("", "none") else int(raw)
        else:
            out[attr] = _coerce(raw, like, f"[{name}] {key}")
    return out


def parse(text: str, base_dir: Path = Path(".")) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0]) from None
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    run = _section(cp, "run", RunConfig(), SCHEMA["run"])
    cs = _section(cp, "charset", ModelConfig(), SCHEMA["charset"], {"name": "charset"})
    enc = _section(cp, "encoder", EncoderConfig(), _ENCODER_KEYS)
    dec = _section(cp, "decoder", ModelConfig(), SCHEMA["decoder"], {"heads": "decoder_heads", "dropout": "decoder_dropout"})
    tr = _section(cp, "training", TrainConfig(), _TRAIN_KEYS)
    data_defaults = CorpusSpec()
    data_raw = dict(cp.items("data")) if cp.has_section("data") else {}
    for k in data_raw:
        if k not in _DATA_KEYS:
            raise ConfigError(f"unknown key [data] {k}")
    path = Path(data_raw.pop("path", "data"))
    lexicon = data_raw.pop("lexicon", None)
    corpus_kw = {k: _coerce(v, getattr(data_defaults, k), f"[data] {k}") for k, v in data_raw.items()}
    out = dict(cp.items("output")) if cp.has_section("output") else {}
    if set(out) - {"dir"}:
        raise ConfigError(f"unknown key [output] {sorted(set(out) - {'dir'})[0]}")
    try:
        if lexicon:
            corpus_kw["lexicon"] = load_lexicon(_resolve(base_dir, Path(lexicon)))
        model = ModelConfig(encoder=EncoderConfig(**enc), **cs, **dec)
        model.get_charset()
        training = TrainConfig(model=model, **tr)
        corpus = CorpusSpec(seed=run.get("seed", 0), **corpus_kw)
    except (ValueError, TypeError, KeyError, OSError) as e:
        raise ConfigError(str(e)) from None
    return RunConfig(seed=run.get("seed", 0), model=model, training=training,
                     data_path=_resolve(base_dir, path), corpus=corpus,
                     out_dir=_resolve(base_dir, Path(out.get("dir", "out"))))


def _resolve(base: Path, p: Path) -> Path:
    return p if p.is_absolute() else base / p


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return parse(text, p.parent)

