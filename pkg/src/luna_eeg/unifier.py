"""Channel unification: learned queries cross-attend over the channel tokens of each patch."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .numeric import (FeedForward, FlopLedger, LayerNorm, MultiHeadAttention, attention_flops,
                      ffn_flops, flop_stage, orthogonal_rows)
from .temporal import TransformerBlock, block_flops


@dataclass
class LatentState:
    unified: torch.Tensor  # (B*S, Q, E)
    batch: int

    @property
    def temporal_view(self) -> torch.Tensor:
        bs, q, e = self.unified.shape
        return self.unified.reshape(self.batch, bs // self.batch, q * e)

    @classmethod
    def from_temporal(cls, x: torch.Tensor, n_queries: int) -> "LatentState":
        b, s, d = x.shape
        return cls(x.reshape(b * s, n_queries, d // n_queries), b)


def affinity_from_weights(weights: torch.Tensor) -> torch.Tensor:
    """Head-mean of cross-attention maps: (B', H, Q, C) -> (B', Q, C)."""
    return weights.mean(dim=-3)


class ChannelUnifier(nn.Module):
    """Maps (B', C, E) channel tokens to a fixed (B', Q, E) latent plus the (B', Q, C) affinity.

    Steps: cross-attention from the repeated queries to the layer-normed
    tokens, a pre-norm residual FFN, then ``layers`` self-attention blocks over
    the query axis. Output does not depend on C or on channel order.
    """

    def __init__(self, dim: int, n_queries: int, heads: int, layers: int = 2, mlp: int | None = None,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.dim, self.n_queries, self.heads = dim, n_queries, heads
        self.mlp = mlp or 4 * dim
        self.queries = nn.Parameter(orthogonal_rows(n_queries, dim, generator))
        self.kv_norm = LayerNorm(dim)
        self.cross = MultiHeadAttention(dim, heads)
        self.ffn_norm = LayerNorm(dim)
        self.ffn = FeedForward(dim, self.mlp)
        self.layers = nn.ModuleList(TransformerBlock(dim, heads, self.mlp) for _ in range(layers))

    def forward(self, tokens: torch.Tensor):
        with flop_stage("unifier"):
            n = tokens.shape[0]
            q = self.queries.unsqueeze(0).expand(n, -1, -1)
            kv = self.kv_norm(tokens)
            with flop_stage("cross"):
                a_out, weights = self.cross(q, kv, kv)
            with flop_stage("ffn"):
                x = a_out + self.ffn(self.ffn_norm(a_out))
            with flop_stage("query_self_attn"):
                for layer in self.layers:
                    x = layer(x)
        return x, affinity_from_weights(weights)


def unify(tokens: torch.Tensor, unifier: ChannelUnifier, batch: int):
    """(B*S, C, E) tokens -> (LatentState, affinity (B*S, Q, C))."""
    unified, affinity = unifier(tokens)
    return LatentState(unified, batch), affinity


def unify_flops(C: int, S: int, B: int, Q: int, E: int, H: int, layers: int = 2,
                mlp: int | None = None) -> FlopLedger:
    """Closed-form ledger of :class:`ChannelUnifier` on B*S instances of C tokens.

    ``H`` does not enter: splitting E across heads leaves the products unchanged.
    """
    mlp = mlp or 4 * E
    n = B * S
    ledger = FlopLedger()
    proj, attn = attention_flops(n, Q, C, E)
    ledger.add(proj, "unifier.cross")
    ledger.add(attn, "unifier.cross.attn", attention=True)
    ledger.add(ffn_flops(n * Q, E, mlp), "unifier.ffn")
    for _ in range(layers):
        block_flops(ledger, "unifier.query_self_attn", n, Q, E, mlp)
    return ledger
