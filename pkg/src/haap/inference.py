"""Greedy autoregressive decoding, cloze refinement, metrics and cost accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from haap.charset import decode_prediction, fold_for_eval
from haap.masks import Permutation, full_cloze_mask, mask_from_permutation, to_content
from haap.model import HAAP, count_parameters


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DecodeOptions:
    ir_rounds: int = 0
    max_len: int = 25
    mode: str = "greedy"

    def __post_init__(self):
        if not 0 <= self.ir_rounds <= 4:
            raise ValueError(f"ir_rounds must lie in 0..4, got {self.ir_rounds}")
        if self.mode != "greedy":
            raise ValueError("only greedy decoding is supported")


@dataclass
class Decoded:
    texts: list[str]
    classes: list[list[int]]
    confidences: list[list[float]]
    steps: int


def _as_batch(images) -> torch.Tensor:
    x = images if isinstance(images, torch.Tensor) else torch.from_numpy(np.array(images))
    if x.dtype == torch.uint8:
        x = x.float() / 255.0
    return x[None] if x.dim() == 3 else x


@torch.no_grad()
def ar_decode(model: HAAP, images, opts: DecodeOptions = DecodeOptions()) -> Decoded:
    """Encode once, then extend left to right from [B] until [E] or ``T`` characters."""
    model.eval()
    dtype = next(model.parameters()).dtype
    x = _as_batch(images).to(dtype)
    cs = model.charset
    T = model.T
    z = model.encode(x)
    B = x.shape[0]
    tokens = torch.full((B, T + 1), cs.pad_id, dtype=torch.long)
    tokens[:, 0] = cs.bos_id
    canonical = Permutation.canonical(T)
    q, c = mask_from_permutation(canonical, "query"), mask_from_permutation(canonical, "content")
    classes = torch.zeros(B, T + 1, dtype=torch.long)
    conf = torch.zeros(B, T + 1, dtype=dtype)
    done = torch.zeros(B, dtype=torch.bool)
    lengths = torch.full((B,), T, dtype=torch.long)
    steps = 0
    for t in range(T + 1):
        steps += 1
        logits = model.decoder(tokens, z, q, c)[:, t]
        if t == T:
            logits = torch.full_like(logits, float("-inf")).index_fill(1, torch.tensor([cs.eos_id]), 0.0)
        probs = torch.softmax(logits, dim=-1)
        p, k = probs.max(dim=-1)
        classes[:, t] = torch.where(done, torch.full_like(k, cs.eos_id), k)
        conf[:, t] = torch.where(done, torch.zeros_like(p), p)
        ended = ~done & (k == cs.eos_id)
        lengths[ended] = t
        done |= ended
        if t < T:
            tokens[:, t + 1] = torch.where(done, torch.full_like(k, cs.pad_id), k)
            tokens[ended, t + 1] = cs.eos_id
        if done.all():
            break
    seqs = [classes[b, : lengths[b]].tolist() for b in range(B)]
    confs = [conf[b, : lengths[b] + 1].tolist() for b in range(B)]
    for _ in range(opts.ir_rounds):
        seqs = refine(model, seqs, z)
    return Decoded([decode_prediction(s, cs) for s in seqs], seqs, confs, steps)


@torch.no_grad()
def refine(model: HAAP, seqs: list[list[int]], z: torch.Tensor) -> list[list[int]]:
    """One parallel cloze pass: each position is re-predicted from all the others.

    Sequence lengths (and so the [E] position) are kept; characters are
    re-chosen among the character classes only.
    """
    model.eval()
    cs = model.charset
    T = model.T
    B = len(seqs)
    tokens = torch.full((B, T + 1), cs.pad_id, dtype=torch.long)
    tokens[:, 0] = cs.bos_id
    for b, s in enumerate(seqs):
        tokens[b, 1: len(s) + 1] = torch.as_tensor(s, dtype=torch.long)
        if len(s) < T:
            tokens[b, len(s) + 1] = cs.eos_id
    q = full_cloze_mask(T)
    logits = model.decoder(tokens, z, q, to_content(q))
    logits[..., cs.eos_id] = float("-inf")
    best = logits.argmax(dim=-1)
    return [best[b, : len(s)].tolist() for b, s in enumerate(seqs)]


def word_accuracy(preds: list[str], refs: list[str]) -> float:
    if len(preds) != len(refs):
        raise LengthMismatch(f"{len(preds)} predictions for {len(refs)} references")
    if not refs:
        return 0.0
    return sum(fold_for_eval(p) == fold_for_eval(r) for p, r in zip(preds, refs)) / len(refs)


def evaluate(model: HAAP, images, labels: list[str], opts: DecodeOptions = DecodeOptions(), batch_size: int = 128) -> float:
    preds: list[str] = []
    for i in range(0, len(labels), batch_size):
        preds += ar_decode(model, images[i:i + batch_size], opts).texts
    return word_accuracy(preds, labels)


def _attention_macs(lq: int, lk: int, d: int, project_kv: bool = True) -> int:
    proj = 2 * lq * d * d + (2 * lk * d * d if project_kv else 0)
    return proj + 2 * lq * lk * d


def encoder_macs(model: HAAP) -> int:
    cfg = model.cfg.encoder
    n = cfg.num_patches + 1
    d = cfg.width
    hidden = int(d * cfg.mlp_ratio)
    per_layer = _attention_macs(n, n, d) + 2 * n * d * hidden
    return cfg.num_patches * cfg.patch_dim * d + cfg.layers * per_layer


def decoder_pass_macs(model: HAAP) -> int:
    d = model.cfg.encoder.width
    L = model.T + 1
    n = model.cfg.encoder.num_patches + 1
    stage = _attention_macs(L, L, d) + _attention_macs(L, n, d)
    stages = 2 if model.cfg.cha else 1
    return stages * stage + L * d * model.charset.num_classes


def flops(model: HAAP, ir_rounds: int = 0) -> int:
    """Multiply-add count times two for one image: encoder, worst-case AR passes, refinement passes."""
    ar_passes = model.T + 1
    return 2 * (encoder_macs(model) + (ar_passes + ir_rounds) * decoder_pass_macs(model))


@dataclass
class CostReport:
    parameters: int
    flops_by_ir: dict[int, int]


def cost_report(model: HAAP, max_ir: int = 4) -> CostReport:
    return CostReport(count_parameters(model), {k: flops(model, k) for k in range(max_ir + 1)})


def latency_ms(model: HAAP, image, opts: DecodeOptions = DecodeOptions(), repeats: int = 100) -> dict:
    """Median single-image decode time with quartiles; not tied to any reference hardware."""
    ar_decode(model, image, opts)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        ar_decode(model, image, opts)
        times.append((time.perf_counter() - t0) * 1e3)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return {"median_ms": float(med), "q1_ms": float(q1), "q3_ms": float(q3), "repeats": repeats}
