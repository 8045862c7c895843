"""Reconstruction head (per-channel decoder queries) and single-query classification head."""

from __future__ import annotations

import threading

import torch
from torch import nn

from .numeric import (FeedForward, FlopLedger, LayerNorm, Linear, MultiHeadAttention,
                      attention_flops, ffn_flops, flop_stage)

BANK_INIT_STD = 0.02
_BANK_LOCK = threading.Lock()


class DecoderQueryBank(nn.Module):
    """Trainable E-vectors looked up by channel label (case-insensitive).

    Unknown labels get fresh N(0, 0.02^2) entries, so a bank trained on one
    montage can be reused on another that shares some electrodes.
    """

    def __init__(self, dim: int, labels=(), generator: torch.Generator | None = None):
        super().__init__()
        self.dim = dim
        self.entries = nn.ParameterDict()
        self.ensure(labels, generator)

    @staticmethod
    def key(label: str) -> str:
        return label.strip().upper().replace(".", "_")

    def __contains__(self, label):
        return self.key(label) in self.entries

    def labels(self) -> tuple[str, ...]:
        return tuple(self.entries.keys())

    def ensure(self, labels, generator: torch.Generator | None = None):
        with _BANK_LOCK:
            for lab in labels:
                k = self.key(lab)
                if k not in self.entries:
                    ref = next(iter(self.entries.values()), None)
                    dtype = ref.dtype if ref is not None else torch.get_default_dtype()
                    init = torch.randn(self.dim, generator=generator, dtype=torch.float64) * BANK_INIT_STD
                    self.entries[k] = nn.Parameter(init.to(dtype))

    def lookup(self, labels) -> torch.Tensor:
        self.ensure(labels)
        return torch.stack([self.entries[self.key(l)] for l in labels])


class ReconstructionHead(nn.Module):
    """Channel queries attend over the Q latent vectors of each patch; phi: E -> P."""

    def __init__(self, dim: int, n_queries: int, heads: int, patch_size: int, labels=(),
                 generator: torch.Generator | None = None):
        super().__init__()
        self.dim, self.n_queries, self.patch_size = dim, n_queries, patch_size
        self.bank = DecoderQueryBank(dim, labels, generator)
        self.attn = MultiHeadAttention(dim, heads)
        self.proj = Linear(dim, patch_size)

    def forward(self, e_out: torch.Tensor, labels) -> torch.Tensor:
        b, s, _ = e_out.shape
        c = len(labels)
        with flop_stage("decoder"):
            kv = e_out.reshape(b * s, self.n_queries, self.dim)
            q = self.bank.lookup(labels).unsqueeze(0).expand(b * s, c, self.dim)
            z, _ = self.attn(q, kv, kv)
            out = self.proj(z)  # (B*S, C, P)
        return out.reshape(b, s, c, self.patch_size).permute(0, 2, 1, 3)


def reconstruction_flops(B: int, S: int, C: int, Q: int, E: int, P: int) -> FlopLedger:
    ledger = FlopLedger()
    proj, attn = attention_flops(B * S, C, Q, E)
    ledger.add(proj + 2 * B * S * C * E * P, "decoder")
    ledger.add(attn, "decoder.attn", attention=True)
    return ledger


class ClassificationHead(nn.Module):
    """One aggregation query pools the S temporal tokens; a two-layer MLP maps to logits."""

    def __init__(self, dim: int, heads: int, n_classes: int):
        super().__init__()
        self.dim, self.n_classes = dim, n_classes
        self.query = nn.Parameter(torch.randn(1, dim, dtype=torch.float64).to(torch.get_default_dtype()) * 0.02)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm = LayerNorm(dim)
        self.mlp = FeedForward(dim, dim, n_classes)

    def pool(self, e_out):
        q = self.query.unsqueeze(0).expand(e_out.shape[0], 1, self.dim)
        pooled, _ = self.attn(q, e_out, e_out)
        return pooled[:, 0]

    def forward(self, e_out):
        with flop_stage("classifier"):
            return self.mlp(self.norm(self.pool(e_out)))


def classification_flops(B: int, S: int, dim: int, n_classes: int) -> FlopLedger:
    ledger = FlopLedger()
    proj, attn = attention_flops(B, 1, S, dim)
    ledger.add(proj + ffn_flops(B, dim, dim, n_classes), "classifier")
    ledger.add(attn, "classifier.attn", attention=True)
    return ledger
