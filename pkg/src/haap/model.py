"""Full recognizer: vision encoder, IPN, and decoder behind one parameter bundle."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from haap.charset import Charset, get_charset
from haap.decoder import CHADecoder, DecoderConfig
from haap.encoder import EncoderConfig, VisionEncoder
from haap.ipn import IPN, PermutationSet, straight_through_gates
from haap.masks import mask_from_permutation


@dataclass(frozen=True)
class ModelConfig:
    charset: str = "train94"
    max_length: int = 25
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_heads: int = 4
    decoder_dropout: float = 0.1
    cha: bool = True

    @property
    def decoder(self) -> DecoderConfig:
        return DecoderConfig(width=self.encoder.width, heads=self.decoder_heads, dropout=self.decoder_dropout,
                             cha=self.cha, max_length=self.max_length)

    def get_charset(self) -> Charset:
        return get_charset(self.charset)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        return cls(encoder=enc, **d)


def toy_config(**overrides) -> ModelConfig:
    return ModelConfig(encoder=EncoderConfig(layers=4, width=128, heads=4), decoder_heads=4, **overrides)


def large_config(**overrides) -> ModelConfig:
    return ModelConfig(encoder=EncoderConfig(layers=12, width=384, heads=6), decoder_heads=6, **overrides)


def tiny_config(**overrides) -> ModelConfig:
    """Small enough for finite-difference checks."""
    enc = EncoderConfig(layers=1, width=16, heads=2, mlp_ratio=2.0, dropout=0.0, image_h=8, image_w=16)
    base = dict(max_length=4, encoder=enc, decoder_heads=2, decoder_dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


class HAAP(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.charset = cfg.get_charset()
        gen = torch.Generator().manual_seed(seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = VisionEncoder(cfg.encoder)
            self.decoder = CHADecoder(self.charset.num_tokens, self.charset.num_classes, cfg.decoder)
            self.ipn = IPN(cfg.max_length, generator=gen)

    @property
    def T(self) -> int:
        return self.cfg.max_length

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return self.encoder(images)

    def decode_teacher_forced(self, ids: torch.Tensor, z: torch.Tensor, perms: PermutationSet,
                              temperature: float | None = None) -> list[torch.Tensor]:
        """Logits for each permutation; ``ids`` is the full ``(B, T+2)`` token layout."""
        tokens = ids[:, :-1]
        gates = straight_through_gates(self.ipn, perms, temperature) if temperature is not None else [None] * len(perms)
        out = []
        for perm, gate in zip(perms.members, gates):
            q = mask_from_permutation(perm, "query")
            c = mask_from_permutation(perm, "content")
            out.append(self.decoder(tokens, z, q, c, y_gate=gate))
        return out

    def loss(self, images, ids, perms: PermutationSet, temperature: float | None = None,
             label_smoothing: float = 0.0) -> torch.Tensor:
        if images.shape[0] == 0:
            raise EmptyBatch("cannot compute a loss on an empty batch")
        ids = pad_after_eos(ids, self.charset)
        z = self.encode(images)
        logits = self.decode_teacher_forced(ids, z, perms, temperature)
        targets = ids[:, 1:]
        return sum(masked_cross_entropy(l, targets, self.charset.pad_id, label_smoothing) for l in logits) / len(logits)


class EmptyBatch(ValueError):
    pass


def pad_after_eos(ids: torch.Tensor, charset) -> torch.Tensor:
    """Overwrite every slot after the first [E] with [PAD], so nothing past the label end can matter."""
    is_eos = ids == charset.eos_id
    after = (torch.cumsum(is_eos.long(), dim=1) - is_eos.long()) > 0
    return ids.masked_fill(after, charset.pad_id)


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, pad_id: int, label_smoothing: float = 0.0):
    """Mean token CE over characters and [E]; [PAD] targets contribute nothing."""
    keep = targets != pad_id
    return F.cross_entropy(logits[keep], targets[keep], label_smoothing=label_smoothing)


def count_parameters(model: nn.Module) -> int:
    return sum(int(np.prod(p.shape)) for p in model.parameters())
