"""Pre-training and fine-tuning objectives."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .numeric import ConfigError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.05  # weight of the visible-patch term
    beta: float = 1.0  # Smooth-L1 transition point
    lambda_spec: float = 0.8
    mask_ratio: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0 or self.lambda_spec < 0:
            raise ConfigError("need alpha >= 0, beta > 0, lambda_spec >= 0")
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError("mask ratio must lie in [0, 1)")


def smooth_l1(x, x_hat, beta: float = 1.0):
    """Elementwise 0.5 d^2 for |d| < beta, else beta |d| - 0.5 beta^2."""
    d = torch.as_tensor(x) - torch.as_tensor(x_hat)
    a = d.abs()
    return torch.where(a < beta, 0.5 * d * d, beta * a - 0.5 * beta * beta)


def reconstruction_loss(orig, recon, mask, alpha: float = 0.05, beta: float = 1.0):
    """Mean Smooth-L1 over masked patch samples plus alpha times the visible mean.

    ``orig``/``recon`` are (B, C, S, P), ``mask`` is (B, C, S). Returns
    ``(total, masked_term, visible_term)``; an empty set contributes 0.
    """
    err = smooth_l1(orig, recon, beta)
    p = err.shape[-1]
    m = mask.unsqueeze(-1).to(err.dtype)
    n_masked = int(mask.sum()) * p
    n_visible = mask.numel() * p - n_masked
    zero = err.sum() * 0.0
    masked = (err * m).sum() / n_masked if n_masked else zero
    visible = (err * (1 - m)).sum() / n_visible if n_visible else zero
    return masked + alpha * visible, masked, visible


def specialization_loss(affinity: torch.Tensor, lambda_spec: float = 0.8) -> torch.Tensor:
    """Mean squared off-diagonal of the per-instance Gram matrix A A^T, scaled by lambda_spec."""
    n, q, _ = affinity.shape
    if q < 2:
        return affinity.sum() * 0.0
    gram = torch.matmul(affinity, affinity.transpose(-1, -2))
    off = gram * (1.0 - torch.eye(q, dtype=gram.dtype))
    return lambda_spec * (off ** 2).sum() / (n * q * (q - 1))


def smoothed_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.0):
    """Cross-entropy against (1 - smoothing) one-hot + smoothing / K uniform targets."""
    k = logits.shape[-1]
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.long().unsqueeze(-1)).squeeze(-1)
    uniform = -logp.mean(dim=-1)
    return ((1.0 - smoothing) * nll + smoothing * uniform).mean()


def pretrain_loss(orig, recon, mask, affinity, cfg: LossConfig):
    """Total L_rec + L_spec with its components as floats."""
    l_rec, l_masked, l_visible = reconstruction_loss(orig, recon, mask, cfg.alpha, cfg.beta)
    l_spec = specialization_loss(affinity, cfg.lambda_spec)
    parts = {"l_rec_masked": float(l_masked.detach()), "l_rec_visible": float(l_visible.detach()),
             "l_spec": float(l_spec.detach())}
    return l_rec + l_spec, parts
