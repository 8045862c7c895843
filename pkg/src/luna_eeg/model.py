"""Model configuration, presets, and the assembled encoder / pre-training / classification models."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
from torch import nn

from .embedding import CONV_KERNELS, CONV_PADDING, CONV_STRIDES, POS_BANDS, PatchEmbedding
from .heads import ClassificationHead, ReconstructionHead, classification_flops, reconstruction_flops
from .montage import MontageLayout
from .numeric import ConfigError, FlopLedger, conv_out_length, ffn_flops, flop_stage
from .temporal import TemporalEncoder, temporal_flops
from .unifier import ChannelUnifier, LatentState, unify_flops


@dataclass(frozen=True)
class ModelConfig:
    n_queries: int = 4
    query_dim: int = 64
    patch_size: int = 40
    depth: int = 8
    heads: int = 8
    mlp_size: int = 1024
    unifier_heads: int = 8
    unifier_layers: int = 2
    unifier_mlp: int = 256
    conv_channels: tuple[int, int, int] = (16, 16, 16)
    conv_groups: int = 4
    pos_bands: int = POS_BANDS
    drop_path: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.n_queries > self.query_dim:
            raise ConfigError("number of queries cannot exceed the query size (orthogonal init)")
        if self.hidden % self.heads or (self.hidden // self.heads) % 2:
            raise ConfigError(f"hidden size {self.hidden} needs an even per-head width over {self.heads} heads")
        if self.query_dim % self.unifier_heads:
            raise ConfigError(f"query size {self.query_dim} not divisible by {self.unifier_heads} heads")
        if self.patch_size % 2:
            raise ConfigError("patch size must be even")
        if any(c % self.conv_groups for c in self.conv_channels):
            raise ConfigError("conv channels must be divisible by conv_groups")

    @property
    def hidden(self) -> int:
        return self.n_queries * self.query_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "tiny": ModelConfig(n_queries=2, query_dim=16, depth=2, heads=2, mlp_size=128, unifier_heads=2,
                        unifier_mlp=64, conv_channels=(4, 4, 4), conv_groups=2),
    "base": ModelConfig(),
    "large": ModelConfig(n_queries=6, query_dim=96, depth=10, heads=12, mlp_size=2304, unifier_heads=12,
                         unifier_mlp=384, conv_channels=(24, 24, 24)),
    "huge": ModelConfig(n_queries=8, query_dim=128, depth=24, heads=16, mlp_size=4096, unifier_heads=16,
                        unifier_mlp=512, conv_channels=(32, 32, 32)),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    d = PRESETS[name].to_dict()
    d.update(overrides)
    return ModelConfig.from_dict(d)


@dataclass
class EncoderOutput:
    latent: LatentState
    e_out: torch.Tensor  # (B, S, Q*E)
    affinity: torch.Tensor  # (B*S, Q, C)
    mask: torch.Tensor | None = None

    @property
    def unified(self):
        return self.latent.unified


def as_positions(montage_or_positions, dtype=None) -> torch.Tensor:
    dtype = dtype or torch.get_default_dtype()
    if isinstance(montage_or_positions, MontageLayout):
        return torch.as_tensor(montage_or_positions.positions, dtype=dtype)
    return torch.as_tensor(np.asarray(montage_or_positions), dtype=dtype)


class LUNAEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.embedding = PatchEmbedding(cfg.patch_size, cfg.query_dim, cfg.conv_channels, cfg.conv_groups,
                                        cfg.pos_bands)
        self.unifier = ChannelUnifier(cfg.query_dim, cfg.n_queries, cfg.unifier_heads, cfg.unifier_layers,
                                      cfg.unifier_mlp, generator)
        self.temporal = TemporalEncoder(cfg.hidden, cfg.depth, cfg.heads, cfg.mlp_size, cfg.drop_path)

    def forward(self, x: torch.Tensor, positions, mask: torch.Tensor | None = None) -> EncoderOutput:
        b, c, _ = x.shape
        pos = as_positions(positions, x.dtype)
        if pos.shape != (c, 3):
            raise ConfigError(f"positions shape {tuple(pos.shape)} does not match {c} channels")
        with flop_stage("embedding"):
            tokens = self.embedding(x, pos, mask)  # (B, C, S, E)
        s = tokens.shape[2]
        tokens = tokens.permute(0, 2, 1, 3).reshape(b * s, c, self.cfg.query_dim)
        unified, affinity = self.unifier(tokens)
        latent = LatentState(unified, b)
        e_out = self.temporal(latent.temporal_view)
        return EncoderOutput(latent, e_out, affinity, mask)


def _seeded(seed):
    return torch.Generator().manual_seed(seed) if seed is not None else None


class LUNAPretrainer(nn.Module):
    """Encoder plus channel-indexed reconstruction head."""

    def __init__(self, cfg: ModelConfig, labels=(), seed: int | None = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            gen = _seeded(seed)
            self.encoder = LUNAEncoder(cfg, gen)
            self.decoder = ReconstructionHead(cfg.query_dim, cfg.n_queries, cfg.unifier_heads, cfg.patch_size,
                                              labels, gen)
        self.cfg = cfg

    def forward(self, x, montage: MontageLayout, mask=None):
        enc = self.encoder(x, montage, mask)
        recon = self.decoder(enc.e_out, montage.labels)
        return recon, enc


class LUNAClassifier(nn.Module):
    """Encoder plus aggregation-query classification head."""

    def __init__(self, cfg: ModelConfig, n_classes: int, seed: int | None = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self.encoder = LUNAEncoder(cfg, _seeded(seed))
            self.head = ClassificationHead(cfg.hidden, cfg.heads, n_classes)
        self.cfg = cfg
        self.n_classes = n_classes

    @classmethod
    def from_pretrained(cls, pre: LUNAPretrainer, n_classes: int, seed: int | None = 0) -> "LUNAClassifier":
        clf = cls(pre.cfg, n_classes, seed).to(next(pre.parameters()).dtype)
        clf.encoder.load_state_dict(pre.encoder.state_dict())
        return clf

    def forward(self, x, positions):
        enc = self.encoder(x, positions)
        return self.head(enc.e_out), enc


def embedding_flops(cfg: ModelConfig, B: int, C: int, S: int) -> FlopLedger:
    tokens = B * C * S
    conv, c_in, length = 0, 1, cfg.patch_size
    for c_out, k, st, pad in zip(cfg.conv_channels, CONV_KERNELS, CONV_STRIDES, CONV_PADDING):
        length = conv_out_length(length, k, st, pad)
        conv += 2 * tokens * c_out * c_in * k * length
        c_in = c_out
    conv += 2 * tokens * c_in * length * cfg.query_dim
    n_freq = 2 * (cfg.patch_size // 2 + 1)
    n_pos = 6 * cfg.pos_bands + 3
    ledger = FlopLedger()
    ledger.add(conv, "embedding.temporal")
    ledger.add(ffn_flops(tokens, n_freq, cfg.query_dim, cfg.query_dim), "embedding.frequency")
    ledger.add(ffn_flops(C, n_pos, cfg.query_dim, cfg.query_dim), "embedding.position")
    return ledger


def encoder_flops(cfg: ModelConfig, B: int, C: int, S: int) -> FlopLedger:
    """Closed-form ledger of one :class:`LUNAEncoder` forward pass."""
    return (embedding_flops(cfg, B, C, S)
            + unify_flops(C, S, B, cfg.n_queries, cfg.query_dim, cfg.unifier_heads, cfg.unifier_layers,
                          cfg.unifier_mlp)
            + temporal_flops(S, B, cfg.n_queries, cfg.query_dim, cfg.depth, cfg.mlp_size))


def pretrainer_flops(cfg: ModelConfig, B: int, C: int, S: int) -> FlopLedger:
    return encoder_flops(cfg, B, C, S) + reconstruction_flops(B, S, C, cfg.n_queries, cfg.query_dim,
                                                              cfg.patch_size)


def classifier_flops(cfg: ModelConfig, B: int, C: int, S: int, n_classes: int) -> FlopLedger:
    return encoder_flops(cfg, B, C, S) + classification_flops(B, S, cfg.hidden, n_classes)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
