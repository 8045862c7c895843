"""Patch-wise temporal encoder: pre-norm transformer blocks with rotary position embeddings."""

from __future__ import annotations

import torch
from torch import nn

from .numeric import (ConfigError, FeedForward, FlopLedger, LayerNorm, MultiHeadAttention,
                      attention_flops, ffn_flops, flop_stage)

ROPE_BASE = 10000.0


def rope_tables(length: int, dim: int, base: float = ROPE_BASE, dtype=None):
    """cos/sin caches of shape (length, dim/2) for frequencies base^(-2i/dim)."""
    if dim % 2:
        raise ConfigError(f"rotary embedding needs an even width, got {dim}")
    dtype = dtype or torch.get_default_dtype()
    inv_freq = base ** (-torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    ang = torch.arange(length, dtype=torch.float64)[:, None] * inv_freq[None, :]
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def rope_rotate(x: torch.Tensor, positions=None, base: float = ROPE_BASE) -> torch.Tensor:
    """Rotate interleaved pairs (x[2i], x[2i+1]) of ``x`` (..., S, D) by position * base^(-2i/D)."""
    s, d = x.shape[-2], x.shape[-1]
    if d % 2:
        raise ConfigError(f"rotary embedding needs an even width, got {d}")
    if positions is None:
        cos, sin = rope_tables(s, d, base, x.dtype)
    else:
        pos = torch.as_tensor(positions, dtype=torch.float64)
        inv_freq = base ** (-torch.arange(0, d, 2, dtype=torch.float64) / d)
        ang = pos[..., None] * inv_freq
        cos, sin = torch.cos(ang).to(x.dtype), torch.sin(ang).to(x.dtype)
    even, odd = x[..., 0::2], x[..., 1::2]
    rot = torch.stack([even * cos - odd * sin, even * sin + odd * cos], dim=-1)
    return rot.reshape(x.shape)


class DropPath(nn.Module):
    """Per-sample stochastic depth on a residual branch."""

    def __init__(self, p: float = 0.0):
        super().__init__()
        self.p = p

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = (torch.rand(x.shape[0], *([1] * (x.dim() - 1)), dtype=x.dtype) >= self.p).to(x.dtype)
        return x * keep / (1.0 - self.p)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp: int, drop_path: float = 0.0, rotary: bool = False):
        super().__init__()
        if rotary and (dim // heads) % 2:
            raise ConfigError(f"head width {dim // heads} must be even for rotary embeddings")
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp)
        self.drop = DropPath(drop_path)
        self.rotary = rope_rotate if rotary else None

    def forward(self, x):
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, rotary=self.rotary)
        x = x + self.drop(a)
        return x + self.drop(self.ffn(self.norm2(x)))


def block_flops(ledger: FlopLedger, stage: str, batch: int, n: int, dim: int, mlp: int):
    proj, attn = attention_flops(batch, n, n, dim)
    ledger.add(proj + ffn_flops(batch * n, dim, mlp), stage)
    ledger.add(attn, f"{stage}.attn", attention=True)


class TemporalEncoder(nn.Module):
    """Bidirectional self-attention over the S latent tokens of width Q*E."""

    def __init__(self, dim: int, depth: int, heads: int, mlp: int, drop_path: float = 0.0):
        super().__init__()
        self.dim, self.heads, self.mlp = dim, heads, mlp
        rates = [drop_path * i / max(depth - 1, 1) for i in range(depth)]
        self.blocks = nn.ModuleList(TransformerBlock(dim, heads, mlp, r, rotary=True) for r in rates)
        self.norm = LayerNorm(dim)

    def set_drop_path(self, drop_path: float):
        n = len(self.blocks)
        for i, blk in enumerate(self.blocks):
            blk.drop.p = drop_path * i / max(n - 1, 1)

    def forward(self, x):
        with flop_stage("temporal"):
            for blk in self.blocks:
                x = blk(x)
            return self.norm(x)


def temporal_flops(S: int, B: int, Q: int, E: int, depth: int, mlp: int | None = None) -> FlopLedger:
    """Closed-form ledger of :class:`TemporalEncoder` on a (B, S, Q*E) input."""
    dim = Q * E
    ledger = FlopLedger()
    for _ in range(depth):
        block_flops(ledger, "temporal", B, S, dim, mlp or 4 * dim)
    return ledger
