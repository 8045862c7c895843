"""Dense tensor primitives with shape contracts and a matmul-level FLOP ledger.

Every matrix product in the model goes through :func:`matmul`, so a forward pass
run inside :func:`count_flops` yields an exact, input-independent FLOP count.
Gradients come from torch autograd.
"""

from __future__ import annotations

import contextvars
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import torch
from torch import nn

NORM_EPS = 1e-5


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ConfigError(ValueError):
    """A configuration value is inconsistent with the requested operation."""


@dataclass
class FlopLedger:
    """Counts of floating-point work, 2 FLOPs per multiply-add.

    ``matmul_flops`` covers every matrix product; ``attention_flops`` is the
    subset spent in score (QK^T) and mixing (AV) products.
    """

    matmul_flops: int = 0
    attention_flops: int = 0
    stages: dict[str, int] = field(default_factory=dict)

    def add(self, flops: int, stage: str | None = None, attention: bool = False):
        if flops < 0:
            raise ContractError("negative FLOP count")
        self.matmul_flops += flops
        if attention:
            self.attention_flops += flops
        key = stage or "unstaged"
        self.stages[key] = self.stages.get(key, 0) + flops

    @property
    def total(self) -> int:
        return self.matmul_flops

    def stage_total(self, prefix: str) -> int:
        """Sum of all stages named ``prefix`` or nested under ``prefix.``."""
        return sum(v for k, v in self.stages.items() if k == prefix or k.startswith(prefix + "."))

    def restricted(self, prefix: str) -> "FlopLedger":
        out = FlopLedger()
        out.stages = {k: v for k, v in self.stages.items() if k == prefix or k.startswith(prefix + ".")}
        out.matmul_flops = sum(out.stages.values())
        out.attention_flops = sum(v for k, v in out.stages.items() if k.endswith(".attn"))
        return out

    def __add__(self, other: "FlopLedger") -> "FlopLedger":
        out = FlopLedger(self.matmul_flops + other.matmul_flops, self.attention_flops + other.attention_flops)
        out.stages = dict(self.stages)
        for k, v in other.stages.items():
            out.stages[k] = out.stages.get(k, 0) + v
        return out


_ledger: contextvars.ContextVar[FlopLedger | None] = contextvars.ContextVar("flop_ledger", default=None)
_stage: contextvars.ContextVar[str | None] = contextvars.ContextVar("flop_stage", default=None)


@contextmanager
def count_flops(ledger: FlopLedger | None = None):
    """Record the FLOPs of every :func:`matmul` issued inside the block."""
    ledger = FlopLedger() if ledger is None else ledger
    token = _ledger.set(ledger)
    try:
        yield ledger
    finally:
        _ledger.reset(token)


@contextmanager
def flop_stage(name: str):
    parent = _stage.get()
    token = _stage.set(name if parent is None else f"{parent}.{name}")
    try:
        yield
    finally:
        _stage.reset(token)


def _record(flops: int, attention: bool):
    ledger = _ledger.get()
    if ledger is not None:
        stage = _stage.get()
        if attention:
            stage = f"{stage}.attn" if stage else "attn"
        ledger.add(flops, stage, attention)


def set_precision(precision: str):
    """Select 'float64' (verification) or 'float32' (training) as default dtype."""
    dtypes = {"float64": torch.float64, "float32": torch.float32}
    if precision not in dtypes:
        raise ConfigError(f"unknown precision {precision!r}")
    torch.set_default_dtype(dtypes[precision])


def matmul(a: torch.Tensor, b: torch.Tensor, attention: bool = False) -> torch.Tensor:
    """Batched matrix product ``a @ b``; adds 2*m*n*k per batch element to the ledger."""
    if a.dim() < 2 or b.dim() < 2:
        raise ContractError(f"matmul needs >=2-d operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"inner extents differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    try:
        batch = torch.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except RuntimeError as exc:
        raise ContractError(f"batch extents do not broadcast: {tuple(a.shape)} @ {tuple(b.shape)}") from exc
    m, k = a.shape[-2], a.shape[-1]
    n = b.shape[-1]
    _record(2 * math.prod(batch) * m * n * k, attention)
    return torch.matmul(a, b)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    if x.dim() == 1:
        return linear(x.unsqueeze(0), weight, bias).squeeze(0)
    y = matmul(x, weight.t())
    return y if bias is None else y + bias


def softmax_lastdim(x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] < 1:
        raise ContractError("softmax over an empty axis")
    if not torch.isfinite(x).all():
        raise ContractError("softmax input contains non-finite values")
    z = x - x.max(dim=-1, keepdim=True).values.detach()
    e = torch.exp(z)
    return e / e.sum(dim=-1, keepdim=True)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def layer_norm(x, weight=None, bias=None, eps: float = NORM_EPS):
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def group_norm(x, groups: int, weight=None, bias=None, eps: float = NORM_EPS):
    """GroupNorm over ``x`` of shape (N, channels, ...)."""
    n, ch = x.shape[0], x.shape[1]
    if groups < 1 or ch % groups:
        raise ConfigError(f"{ch} channels not divisible into {groups} groups")
    g = x.reshape(n, groups, -1)
    mu = g.mean(dim=-1, keepdim=True)
    var = ((g - mu) ** 2).mean(dim=-1, keepdim=True)
    y = ((g - mu) / torch.sqrt(var + eps)).reshape(x.shape)
    shape = (1, ch) + (1,) * (x.dim() - 2)
    if weight is not None:
        y = y * weight.reshape(shape)
    if bias is not None:
        y = y + bias.reshape(shape)
    return y


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    """1-D convolution as im2col + :func:`matmul`. x: (N, C_in, L), weight: (C_out, C_in, K)."""
    c_out, c_in, k = weight.shape
    if x.shape[1] != c_in:
        raise ContractError(f"conv expects {c_in} input channels, got {x.shape[1]}")
    if padding:
        x = torch.nn.functional.pad(x, (padding, padding))
    if x.shape[-1] < k:
        raise ConfigError(f"padded length {x.shape[-1]} shorter than kernel {k}")
    cols = x.unfold(-1, k, stride)  # (N, C_in, L_out, K)
    cols = cols.permute(0, 2, 1, 3).reshape(x.shape[0], cols.shape[2], c_in * k)
    y = matmul(cols, weight.reshape(c_out, c_in * k).t())  # (N, L_out, C_out)
    if bias is not None:
        y = y + bias
    return y.transpose(1, 2)


def conv_out_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def backward(loss: torch.Tensor):
    """Reverse-mode pass from a scalar loss into every tracked parameter."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


class Linear(nn.Linear):
    """nn.Linear whose product is routed through the FLOP ledger."""

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias)


class GroupNorm(nn.Module):
    def __init__(self, groups: int, channels: int):
        super().__init__()
        if channels % groups:
            raise ConfigError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        return group_norm(x, self.groups, self.weight, self.bias)


class GELU(nn.Module):
    def forward(self, x):
        return gelu(x)


class FeedForward(nn.Module):
    """linear -> GELU -> linear."""

    def __init__(self, dim: int, hidden: int, out_dim: int | None = None):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, out_dim or dim)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


def ffn_flops(tokens: int, dim: int, hidden: int, out_dim: int | None = None) -> int:
    return 2 * tokens * dim * hidden + 2 * tokens * hidden * (out_dim or dim)


def scaled_dot_product(q, k, v):
    """Per-head attention. q: (..., H, n_q, dh); k, v: (..., H, n_k, dh)."""
    scores = matmul(q, k.transpose(-1, -2), attention=True) / math.sqrt(q.shape[-1])
    weights = softmax_lastdim(scores)
    return matmul(weights, v, attention=True), weights


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with learned input and output projections.

    ``forward`` returns ``(out, weights)`` where ``weights`` has shape
    (..., heads, n_q, n_k) and holds the post-softmax attention maps.
    An optional ``rotary`` callable is applied to the per-head queries and keys.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim)
        self.k_proj = Linear(dim, dim)
        self.v_proj = Linear(dim, dim)
        self.out_proj = Linear(dim, dim)

    def _split(self, x):
        *lead, n, _ = x.shape
        return x.reshape(*lead, n, self.heads, self.dim // self.heads).transpose(-2, -3)

    def forward(self, q, k, v, rotary=None):
        if q.shape[-1] != self.dim or k.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise ContractError(f"attention width must be {self.dim}")
        if k.shape[-2] != v.shape[-2]:
            raise ContractError("keys and values differ in length")
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k))
        vh = self._split(self.v_proj(v))
        if rotary is not None:
            qh, kh = rotary(qh), rotary(kh)
        out, weights = scaled_dot_product(qh, kh, vh)
        out = out.transpose(-2, -3)
        out = out.reshape(*out.shape[:-2], self.dim)
        return self.out_proj(out), weights


def multi_head_attention(q, k, v, heads: int, module: MultiHeadAttention | None = None):
    """Functional form: builds a fresh projection set unless ``module`` is given."""
    if q.shape[-1] % heads:
        raise ConfigError(f"dim {q.shape[-1]} not divisible by {heads} heads")
    module = module or MultiHeadAttention(q.shape[-1], heads).to(q.dtype)
    return module(q, k, v)


def attention_flops(batch: int, n_q: int, n_k: int, dim: int) -> tuple[int, int]:
    """(projection, score+mix) FLOPs of one :class:`MultiHeadAttention` call."""
    proj = 2 * batch * (2 * n_q * dim * dim + 2 * n_k * dim * dim)
    attn = 4 * batch * n_q * n_k * dim
    return proj, attn


def orthogonal_rows(rows: int, cols: int, generator: torch.Generator | None = None, dtype=None) -> torch.Tensor:
    """Matrix with orthonormal rows from QR of a seeded Gaussian draw (rows <= cols)."""
    if rows > cols:
        raise ConfigError(f"cannot make {rows} orthonormal rows in {cols} dims")
    dtype = dtype or torch.get_default_dtype()
    g = torch.randn(cols, rows, generator=generator, dtype=torch.float64)
    qmat, r = torch.linalg.qr(g)
    qmat = qmat * torch.sign(torch.diagonal(r)).unsqueeze(0)
    return qmat.t().contiguous().to(dtype)
