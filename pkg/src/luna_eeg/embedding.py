"""Per-(channel, patch) tokens: temporal conv + Fourier features + electrode position code."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .numeric import (ConfigError, ContractError, FeedForward, GroupNorm, Linear, conv1d,
                      conv_out_length, ffn_flops, flop_stage, gelu)

CONV_KERNELS = (20, 3, 3)
CONV_STRIDES = (10, 1, 1)
CONV_PADDING = (9, 1, 1)
POS_BANDS = 10


@dataclass
class PatchGrid:
    tokens: torch.Tensor  # (B, C, S, E)
    mask: torch.Tensor  # (B, C, S) bool
    patch_size: int


def patchify(x: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, C, T) -> (B, C, S, P) with S = T / P."""
    if x.shape[-1] % patch_size:
        raise ConfigError(f"T={x.shape[-1]} is not a multiple of patch size {patch_size}")
    return x.reshape(*x.shape[:-1], x.shape[-1] // patch_size, patch_size)


class Conv1d(nn.Conv1d):
    def forward(self, x):
        return conv1d(x, self.weight, self.bias, self.stride[0], self.padding[0])


class TemporalEmbedding(nn.Module):
    """Three conv -> GroupNorm -> GELU stages over one patch, flattened and projected to E."""

    def __init__(self, patch_size: int, dim: int, channels=(16, 16, 16), groups: int = 4):
        super().__init__()
        self.stages = nn.ModuleList()
        self.lengths = []
        c_in, length = 1, patch_size
        for c_out, k, s, p in zip(channels, CONV_KERNELS, CONV_STRIDES, CONV_PADDING):
            length = conv_out_length(length, k, s, p)
            if length < 1:
                raise ConfigError(f"patch size {patch_size} too short for kernel {k}, stride {s}")
            self.stages.append(nn.ModuleDict({"conv": Conv1d(c_in, c_out, k, s, p), "norm": GroupNorm(groups, c_out)}))
            self.lengths.append(length)
            c_in = c_out
        self.channels = tuple(channels)
        self.patch_size = patch_size
        self.proj = Linear(c_in * length, dim)

    def forward(self, patches):
        lead = patches.shape[:-1]
        if patches.shape[-1] != self.patch_size:
            raise ContractError(f"expected patches of {self.patch_size} samples")
        h = patches.reshape(-1, 1, self.patch_size)
        for st in self.stages:
            h = gelu(st["norm"](st["conv"](h)))
        return self.proj(h.reshape(h.shape[0], -1)).reshape(*lead, -1)

    def flops(self, tokens: int) -> int:
        total, c_in = 0, 1
        for c_out, k, length in zip(self.channels, CONV_KERNELS, self.lengths):
            total += 2 * tokens * c_out * c_in * k * length
            c_in = c_out
        return total + 2 * tokens * self.proj.in_features * self.proj.out_features


def fourier_features(patches: torch.Tensor) -> torch.Tensor:
    """Unnormalised real DFT magnitudes then phases: (..., P) -> (..., 2 * (P/2 + 1))."""
    if patches.shape[-1] % 2:
        raise ConfigError("patch size must be even")
    spec = torch.fft.rfft(patches, dim=-1)
    # DC and Nyquist bins of a real signal are real; drop round-off so their phase is exactly 0 or pi
    real_bins = torch.ones(spec.shape[-1], dtype=patches.dtype)
    real_bins[0] = real_bins[-1] = 0.0
    spec = torch.complex(spec.real, spec.imag * real_bins)
    return torch.cat([spec.abs(), torch.angle(spec)], dim=-1)


class FrequencyEmbedding(nn.Module):
    def __init__(self, patch_size: int, dim: int, hidden: int | None = None):
        super().__init__()
        self.n_features = 2 * (patch_size // 2 + 1)
        self.mlp = FeedForward(self.n_features, hidden or dim, dim)

    def forward(self, patches):
        return self.mlp(fourier_features(patches))

    def flops(self, tokens: int) -> int:
        return ffn_flops(tokens, self.n_features, self.mlp.fc1.out_features, self.mlp.fc2.out_features)


def nerf_features(positions: torch.Tensor, bands: int = POS_BANDS) -> torch.Tensor:
    """sin/cos(2^j * pi * coord) for j < bands, plus the raw coordinates: (C, 3) -> (C, 6*bands + 3)."""
    freqs = (2.0 ** torch.arange(bands, dtype=positions.dtype)) * math.pi
    ang = positions.unsqueeze(-1) * freqs  # (C, 3, bands)
    feats = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(positions.shape[0], -1)
    return torch.cat([feats, positions], dim=-1)


class ChannelPositionalEncoding(nn.Module):
    def __init__(self, dim: int, bands: int = POS_BANDS):
        super().__init__()
        self.bands = bands
        self.n_features = 6 * bands + 3
        self.mlp = FeedForward(self.n_features, dim, dim)

    def forward(self, positions):
        return self.mlp(nerf_features(positions, self.bands))

    def flops(self, channels: int) -> int:
        return ffn_flops(channels, self.n_features, self.mlp.fc1.out_features, self.mlp.fc2.out_features)


def sample_mask(batch: int, channels: int, patches: int, ratio: float, generator=None) -> torch.Tensor:
    """Exactly round(ratio * C * S) masked (channel, patch) positions per sample."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1), got {ratio}")
    n = channels * patches
    k = int(math.floor(ratio * n + 0.5))
    mask = torch.zeros(batch, n, dtype=torch.bool)
    for b in range(batch):
        mask[b, torch.randperm(n, generator=generator)[:k]] = True
    return mask.reshape(batch, channels, patches)


def apply_mask(grid: PatchGrid, mask_token: torch.Tensor, ratio: float = 0.5, seed: int = 0,
               pos_code: torch.Tensor | None = None) -> PatchGrid:
    """Replace a random token subset by ``mask_token`` (then re-add ``pos_code`` if given)."""
    b, c, s, _ = grid.tokens.shape
    mask = sample_mask(b, c, s, ratio, torch.Generator().manual_seed(seed))
    tokens = torch.where(mask.unsqueeze(-1), mask_token.expand_as(grid.tokens), grid.tokens)
    if pos_code is not None:
        tokens = tokens + pos_code[:, None, :]
    return PatchGrid(tokens, mask, grid.patch_size)


class PatchEmbedding(nn.Module):
    """Raw EEG (B, C, T) -> tokens (B, C, S, E).

    Masked positions get the learnable mask token in place of their patch
    features; the channel position code is added afterwards to every token.
    """

    def __init__(self, patch_size: int, dim: int, conv_channels=(16, 16, 16), conv_groups: int = 4,
                 pos_bands: int = POS_BANDS):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self.temporal = TemporalEmbedding(patch_size, dim, conv_channels, conv_groups)
        self.frequency = FrequencyEmbedding(patch_size, dim)
        self.position = ChannelPositionalEncoding(dim, pos_bands)
        self.mask_token = nn.Parameter(torch.randn(dim) * 0.02)

    def forward(self, x, positions, mask=None):
        patches = patchify(x, self.patch_size)
        with flop_stage("temporal"):
            feats = self.temporal(patches)
        with flop_stage("frequency"):
            feats = feats + self.frequency(patches)
        if mask is not None:
            if mask.shape != patches.shape[:-1]:
                raise ContractError(f"mask shape {tuple(mask.shape)} != {tuple(patches.shape[:-1])}")
            feats = torch.where(mask.unsqueeze(-1), self.mask_token.expand_as(feats), feats)
        with flop_stage("position"):
            pos = self.position(positions)
        return feats + pos[None, :, None, :]

    def flops(self, batch: int, channels: int, patches: int) -> int:
        tokens = batch * channels * patches
        return self.temporal.flops(tokens) + self.frequency.flops(tokens) + self.position.flops(channels)
