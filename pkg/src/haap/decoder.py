"""Two-stream cross-modal hierarchical attention decoder.

Stage 1 refines the context stream: masked self-attention over context
embeddings (content mask), then unmasked cross-attention to the image
features. Stage 2 lets learnable position queries read the refined context
through the query mask and then attend to the image. A linear head maps
each of the ``T + 1`` query rows to ``S + 1`` classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from haap.encoder import LN_EPS, ShapeMismatch
from haap.layers import MultiHeadAttention
from haap.masks import AttentionMask, MaskKindError, context_self_mask


@dataclass(frozen=True)
class DecoderConfig:
    width: int = 128
    heads: int = 4
    dropout: float = 0.1
    cha: bool = True
    max_length: int = 25
    pre_norm: bool = True


class Stage(nn.Module):
    """One masked attention sublayer followed by one cross-attention sublayer to the image."""

    def __init__(self, dim, heads, dropout, pre_norm):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads)
        self.cross_attn = MultiHeadAttention(dim, heads)
        if pre_norm:
            self.norm_q1 = nn.LayerNorm(dim, eps=LN_EPS)
            self.norm_kv1 = nn.LayerNorm(dim, eps=LN_EPS)
            self.norm_q2 = nn.LayerNorm(dim, eps=LN_EPS)
        else:
            self.norm_q1 = self.norm_kv1 = self.norm_q2 = nn.Identity()
        self.drop1 = nn.Dropout(dropout)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x, kv, memory, mask, gate=None):
        kv_n = self.norm_kv1(kv)
        attn = x + self.drop1(self.self_attn(self.norm_q1(x), kv_n, mask=mask, gate=gate))
        return attn + self.drop2(self.cross_attn(self.norm_q2(attn), memory))


def _as_bool(mask) -> torch.Tensor:
    if isinstance(mask, AttentionMask):
        mask = mask.bits
    return torch.from_numpy(np.array(mask, dtype=bool))


class CHADecoder(nn.Module):
    def __init__(self, num_tokens: int, num_classes: int, cfg: DecoderConfig = DecoderConfig()):
        super().__init__()
        self.cfg = cfg
        L = cfg.max_length + 1
        D = cfg.width
        self.token_embed = nn.Embedding(num_tokens, D)
        self.context_pos = nn.Parameter(torch.randn(1, L, D) * 0.02)
        self.position_queries = nn.Parameter(torch.randn(1, L, D) * 0.02)
        self.stage1 = Stage(D, cfg.heads, cfg.dropout, cfg.pre_norm) if cfg.cha else None
        self.stage2 = Stage(D, cfg.heads, cfg.dropout, cfg.pre_norm)
        self.norm = nn.LayerNorm(D, eps=LN_EPS) if cfg.pre_norm else nn.Identity()
        self.head = nn.Linear(D, num_classes)
        self.drop = nn.Dropout(cfg.dropout)

    def context(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token ids ``(B, T+1)`` -> context embeddings with position information."""
        if tokens.shape[-1] != self.context_pos.shape[1]:
            raise ShapeMismatch(f"expected {self.context_pos.shape[1]} context tokens, got {tokens.shape[-1]}")
        return self.drop(self.token_embed(tokens) + self.context_pos)

    def run_stage1(self, c, z, content_mask: AttentionMask, gate=None):
        if content_mask.kind != "content":
            raise MaskKindError("stage 1 needs a content-kind mask")
        if c.shape[-2] != content_mask.T + 1 or z.shape[-1] != c.shape[-1]:
            raise ShapeMismatch(f"context {tuple(c.shape)}, features {tuple(z.shape)}, mask T={content_mask.T}")
        mask = torch.from_numpy(context_self_mask(content_mask)).to(c.device)
        return self.stage1(c, c, z, mask, gate)

    def run_stage2(self, attn_cv, z, query_mask: AttentionMask, gate=None):
        if query_mask.kind != "query":
            raise MaskKindError("stage 2 needs a query-kind mask")
        if attn_cv.shape[-2] != query_mask.T + 1 or z.shape[-1] != attn_cv.shape[-1]:
            raise ShapeMismatch(f"context {tuple(attn_cv.shape)}, features {tuple(z.shape)}, mask T={query_mask.T}")
        p = self.drop(self.position_queries.expand(attn_cv.shape[0], -1, -1))
        mask = _as_bool(query_mask).to(attn_cv.device)
        return self.stage2(p, attn_cv, z, mask, gate)

    def logits(self, attn_f):
        return self.head(self.norm(attn_f))

    def forward(self, tokens, z, query_mask: AttentionMask, content_mask: AttentionMask | None = None,
                y_gate: torch.Tensor | None = None, context: torch.Tensor | None = None):
        """Teacher-forced logits ``(B, T+1, S+1)``.

        ``y_gate`` is an optional ``(T, T)`` straight-through precedence
        matrix for the y-block; ``context`` overrides the token embedding
        lookup (used for Jacobian checks).
        """
        c = self.context(tokens) if context is None else context
        q_gate = c_gate = None
        if y_gate is not None:
            q_gate, c_gate = _expand_gates(y_gate)
        if self.stage1 is not None:
            if content_mask is None:
                raise MaskKindError("CHA decoder needs a content mask")
            kv = self.run_stage1(c, z, content_mask, c_gate)
        else:
            kv = c
        return self.logits(self.run_stage2(kv, z, query_mask, q_gate))


def _expand_gates(y_gate: torch.Tensor):
    T = y_gate.shape[0]
    q = torch.ones(T + 1, T + 1, dtype=y_gate.dtype, device=y_gate.device)
    q[:T, 1:] = y_gate
    eye = torch.eye(T, dtype=torch.bool, device=y_gate.device)
    content_block = torch.where(eye, torch.ones_like(y_gate), y_gate)
    c = torch.ones(T + 1, T + 1, dtype=y_gate.dtype, device=y_gate.device)
    c[1:, 1:] = content_block
    return q, c
