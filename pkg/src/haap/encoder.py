"""Patch-based transformer encoder for 128x32 text images."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from haap.layers import MLP, MultiHeadAttention

LN_EPS = 1e-6


class BadDimensions(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    width: int = 128
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_w: int = 8
    patch_h: int = 4
    dropout: float = 0.1
    image_h: int = 32
    image_w: int = 128
    channels: int = 3

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if self.layers < 0:
            raise ValueError("layers must be non-negative")
        if self.image_h % self.patch_h or self.image_w % self.patch_w:
            raise BadDimensions("image dimensions must be divisible by the patch size")

    @property
    def num_patches(self) -> int:
        return (self.image_h // self.patch_h) * (self.image_w // self.patch_w)

    @property
    def patch_dim(self) -> int:
        return self.patch_w * self.patch_h * self.channels


LARGE_ENCODER = EncoderConfig(layers=12, width=384, heads=6, mlp_ratio=4.0)
TOY_ENCODER = EncoderConfig(layers=4, width=128, heads=4, mlp_ratio=4.0)


def patchify(img: torch.Tensor, patch_h: int = 4, patch_w: int = 8) -> torch.Tensor:
    """``(..., H, W, C)`` image to ``(..., N, patch_h * patch_w * C)`` in raster order."""
    *lead, H, W, C = img.shape
    if H % patch_h or W % patch_w:
        raise BadDimensions(f"image {H}x{W} not divisible into {patch_h}x{patch_w} patches")
    x = img.reshape(*lead, H // patch_h, patch_h, W // patch_w, patch_w, C)
    n = len(lead)
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, (H // patch_h) * (W // patch_w), patch_h * patch_w * C)


def unpatchify(patches: torch.Tensor, H: int = 32, W: int = 128, C: int = 3, patch_h: int = 4, patch_w: int = 8) -> torch.Tensor:
    *lead, N, _ = patches.shape
    n = len(lead)
    x = patches.reshape(*lead, H // patch_h, W // patch_w, patch_h, patch_w, C)
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, H, W, C)


def embed(patches: torch.Tensor, E: torch.Tensor, E_pos: torch.Tensor) -> torch.Tensor:
    if patches.shape[-1] != E.shape[0] or E_pos.shape[-1] != E.shape[1] or E_pos.shape[-2] != patches.shape[-2]:
        raise ShapeMismatch(f"patches {tuple(patches.shape)}, E {tuple(E.shape)}, E_pos {tuple(E_pos.shape)}")
    return patches @ E + E_pos


def sincos_2d(rows: int, cols: int, dim: int) -> torch.Tensor:
    """Fixed 2D sine-cosine table ``(rows * cols, dim)`` in raster order."""
    if dim % 4:
        raise ValueError("width must be divisible by 4 for 2D sin-cos embeddings")
    quarter = dim // 4
    freq = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    yy, xx = torch.meshgrid(torch.arange(rows, dtype=torch.float64), torch.arange(cols, dtype=torch.float64), indexing="ij")
    ang_y = yy.reshape(-1, 1) * freq
    ang_x = xx.reshape(-1, 1) * freq
    return torch.cat([ang_y.sin(), ang_y.cos(), ang_x.sin(), ang_x.cos()], dim=1).float()


class EncoderBlock(nn.Module):
    """Pre-norm block: attention then GELU MLP, each wrapped in a residual."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = MLP(dim, int(dim * mlp_ratio), dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, z):
        h = self.norm1(z)
        z = z + self.drop(self.attn(h, h))
        return z + self.mlp(self.norm2(z))


class VisionEncoder(nn.Module):
    """Images ``(B, H, W, C)`` to features ``(B, N + 1, D)``; index 0 is a register token."""

    def __init__(self, cfg: EncoderConfig = TOY_ENCODER):
        super().__init__()
        self.cfg = cfg
        D = cfg.width
        self.patch_proj = nn.Linear(cfg.patch_dim, D)
        self.register_token = nn.Parameter(torch.zeros(1, 1, D))
        pos = torch.zeros(1, cfg.num_patches + 1, D)
        if D % 4 == 0:
            pos[0, 1:] = sincos_2d(cfg.image_h // cfg.patch_h, cfg.image_w // cfg.patch_w, D)
        self.pos_embed = nn.Parameter(pos)
        self.blocks = nn.ModuleList(EncoderBlock(D, cfg.heads, cfg.mlp_ratio, cfg.dropout) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(D, eps=LN_EPS)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if tuple(img.shape[-3:]) != (cfg.image_h, cfg.image_w, cfg.channels):
            raise BadDimensions(f"expected (..., {cfg.image_h}, {cfg.image_w}, {cfg.channels}), got {tuple(img.shape)}")
        x = self.patch_proj(patchify(img, cfg.patch_h, cfg.patch_w))
        x = torch.cat([self.register_token.expand(x.shape[0], -1, -1), x], dim=1)
        z = self.drop(x + self.pos_embed)
        for blk in self.blocks:
            z = blk(z)
        return self.norm(z)
