"""Optimization loop, schedules, early stopping and the multi-session stability protocol."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from haap import checkpoint
from haap.charset import encode
from haap.datagen import Split
from haap.inference import DecodeOptions, evaluate
from haap.ipn import build_permutation_set
from haap.model import HAAP, ModelConfig

log = logging.getLogger(__name__)

MODE_K = {"ltr": 1, "bidir": 2, "plm": 4, "ipn": 4}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mode: str = "ipn"
    batch_size: int = 32
    epochs: int = 20
    lr: float = 7e-5
    warmup_frac: float = 0.05
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    label_smoothing: float = 0.0
    seed: int = 0
    temperature_start: float = 1.0
    temperature_end: float = 0.1
    val_every: int = 50
    early_stop: bool = False
    stop_window: int = 200
    stop_threshold: float = 0.003
    stop_after: int = 0
    augment: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        if self.mode not in MODE_K:
            raise ValueError(f"unknown permutation mode {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("batch_size >= 1, epochs >= 0 and lr >= 0 required")

    @property
    def K(self) -> int:
        return MODE_K[self.mode]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        model = ModelConfig.from_dict(d.pop("model", {}))
        return cls(model=model, **d)


def lr_at(step: int, total: int, base: float, warmup_frac: float) -> float:
    """Linear warmup then cosine decay to zero."""
    warm = max(1, int(round(total * warmup_frac)))
    if step < warm:
        return base * (step + 1) / warm
    progress = (step - warm) / max(1, total - warm)
    return base * 0.5 * (1 + math.cos(math.pi * min(progress, 1.0)))


def temperature_at(step: int, total: int, start: float, end: float) -> float:
    return start + (end - start) * min(step / max(1, total - 1), 1.0)


def batch_tensors(split: Split, index: np.ndarray, charset, max_length: int):
    images = torch.from_numpy(split.images[index]).float() / 255.0
    ids = torch.from_numpy(np.stack([encode(split.labels[i], charset, max_length).ids for i in index]))
    return images, ids


def augment_batch(images: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Contrast/brightness jitter and mild Gaussian noise."""
    b = images.shape[0]
    contrast = 0.7 + 0.6 * torch.rand(b, 1, 1, 1, generator=gen)
    shift = 0.2 * (torch.rand(b, 1, 1, 1, generator=gen) - 0.5)
    noise = 0.03 * torch.randn(images.shape, generator=gen)
    return ((images - 0.5) * contrast + 0.5 + shift + noise).clamp(0, 1)


def converged(history: list[tuple[int, float]], window: int, threshold: float) -> bool:
    """True once best validation accuracy improved by less than ``threshold`` over the last ``window`` steps."""
    if not history:
        return False
    step = history[-1][0]
    if step < window:
        return False
    best_now = max(a for _, a in history)
    earlier = [a for s, a in history if s <= step - window]
    if not earlier:
        return False
    return best_now - max(earlier) < threshold


@dataclass
class TrainResult:
    model: HAAP
    metrics: list[dict]
    steps: int
    samples_seen: int
    convergence_step: int | None
    final_val_acc: float | None
    wall_time: float

    def checkpoint(self, config: TrainConfig) -> checkpoint.Checkpoint:
        return checkpoint.from_module(self.model, self.steps, config.to_dict())


def train(config: TrainConfig, train_split: Split, val_split: Split | None = None,
          model: HAAP | None = None, on_metrics=None) -> TrainResult:
    if len(train_split) == 0:
        raise ValueError("training split is empty")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    aug_gen = torch.Generator().manual_seed(config.seed + 1)
    model = model if model is not None else HAAP(config.model, seed=config.seed)
    charset = model.charset
    T = model.T
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8,
                           weight_decay=config.weight_decay)
    n = len(train_split)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)
    metrics: list[dict] = []
    history: list[tuple[int, float]] = []
    convergence_step = None
    step = 0
    seen = 0
    t0 = time.perf_counter()

    def validate():
        acc = evaluate(model, val_split.images, val_split.labels, DecodeOptions())
        model.train()
        history.append((step, acc))
        return acc

    model.train()
    while step < total and convergence_step is None:
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if step >= total:
                break
            index = order[start:start + config.batch_size]
            images, ids = batch_tensors(train_split, index, charset, T)
            if config.augment:
                images = augment_batch(images, aug_gen)
            lr = lr_at(step, total, config.lr, config.warmup_frac)
            for g in opt.param_groups:
                g["lr"] = lr
            perms = build_permutation_set(config.mode, T, model.ipn, rng)
            temp = temperature_at(step, total, config.temperature_start, config.temperature_end) if config.mode == "ipn" else None
            loss = model.loss(images, ids, perms, temperature=temp, label_smoothing=config.label_smoothing)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            step += 1
            seen += len(index)
            record = {"step": step, "loss": float(loss.item()), "lr": lr, "val_acc": None}
            if val_split is not None and len(val_split) and (step % config.val_every == 0 or step == total):
                record["val_acc"] = validate()
                if (config.early_stop and step >= config.stop_after
                        and converged(history, config.stop_window, config.stop_threshold)):
                    convergence_step = step
            metrics.append(record)
            if on_metrics:
                on_metrics(record)
            if convergence_step is not None:
                break
    model.eval()
    final = history[-1][1] if history else None
    return TrainResult(model, metrics, step, seen, convergence_step, final, time.perf_counter() - t0)


def write_metrics(path, metrics: list[dict]):
    with open(path, "w") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class SessionStats:
    seed: int
    convergence_step: int
    final_accuracy: float
    samples_seen: int
    wall_time: float


@dataclass
class StabilityReport:
    mode: str
    sessions: list[SessionStats]

    def column(self, name: str) -> list[float]:
        return [float(getattr(s, name)) for s in self.sessions]

    def mean(self, name: str) -> float:
        return statistics.fmean(self.column(name))

    def std(self, name: str) -> float:
        return sample_std(self.column(name))

    def rows(self, include_time: bool = True) -> list[list[str]]:
        cols = ("convergence_step", "final_accuracy", "samples_seen") + (("wall_time",) if include_time else ())
        out = [["session", "seed", *cols]]
        for i, s in enumerate(self.sessions, 1):
            row = [f"Session {i}", str(s.seed), str(s.convergence_step), f"{100 * s.final_accuracy:.2f}", str(s.samples_seen)]
            out.append(row + ([f"{s.wall_time:.2f}"] if include_time else []))
        out.append(["Mean", "", *(f"{self.mean(c) * (100 if c == 'final_accuracy' else 1):.2f}" for c in cols)])
        out.append(["Std Dev", "", *(f"{self.std(c) * (100 if c == 'final_accuracy' else 1):.2f}" for c in cols)])
        return out


def sample_std(values: list[float]) -> float:
    """Standard deviation with Bessel's correction, as used for session spreads."""
    return statistics.stdev(values) if len(values) > 1 else 0.0


def multi_session(config: TrainConfig, train_split: Split, val_split: Split, sessions: int = 5,
                  seeds: list[int] | None = None) -> StabilityReport:
    """Train ``sessions`` times with early stopping and summarize the spread."""
    if sessions < 2:
        raise ValueError("multi_session needs at least two sessions")
    seeds = seeds if seeds is not None else [config.seed + i for i in range(sessions)]
    if len(seeds) != sessions:
        raise ValueError("one seed per session required")
    stats = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed, early_stop=True)
        res = train(cfg, train_split, val_split)
        log.info("session seed=%d steps=%d acc=%s", seed, res.steps, res.final_val_acc)
        stats.append(SessionStats(seed, res.convergence_step or res.steps, res.final_val_acc or 0.0,
                                  res.samples_seen, res.wall_time))
    return StabilityReport(config.mode, stats)
