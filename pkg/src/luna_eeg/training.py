"""Desk-scale pre-training and fine-tuning loops."""

from __future__ import annotations

import copy
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch

from .embedding import sample_mask
from .losses import LossConfig, pretrain_loss, smoothed_cross_entropy
from .metrics import classification_report
from .model import LUNAClassifier, LUNAPretrainer
from .montage import MontageLayout
from .numeric import ConfigError, ContractError, backward
from .preprocess import zscore_array

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "l_rec_masked", "l_rec_visible", "l_spec", "lr")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainSchedule:
    peak_lr: float = 1.25e-4
    min_lr: float = 2.5e-7
    warmup_steps: int = 10
    total_steps: int = 60
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.98)
    grad_clip: float = 1.0
    batch_size: int = 16

    def __post_init__(self):
        if not (math.isfinite(self.peak_lr) and math.isfinite(self.min_lr)) or self.peak_lr < 0 or self.min_lr < 0:
            raise ConfigError("learning rates must be finite and non-negative")
        if self.min_lr > self.peak_lr:
            raise ConfigError("min_lr exceeds peak_lr")
        if self.warmup_steps < 0 or self.total_steps < 0 or self.batch_size < 1 or not self.grad_clip > 0:
            raise ConfigError("need warmup_steps >= 0, total_steps >= 0, batch_size >= 1, grad_clip > 0")

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``peak_lr`` then cosine decay to ``min_lr``; ``step`` counts from 0."""
        if self.warmup_steps and step < self.warmup_steps:
            return self.peak_lr * (step + 1) / self.warmup_steps
        span = max(self.total_steps - self.warmup_steps, 1)
        t = min((step - self.warmup_steps) / span, 1.0)
        return self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1 + math.cos(math.pi * t))


PRETRAIN_SCHEDULE = TrainSchedule()
FINETUNE_SCHEDULE = TrainSchedule(peak_lr=1e-4, min_lr=5e-6, warmup_steps=5, total_steps=50, betas=(0.9, 0.999))
# Short CPU runs on LUNA-tiny need a larger step size than the full-scale values above.
DESK_PRETRAIN = TrainSchedule(peak_lr=3e-3, min_lr=3e-5, warmup_steps=10, total_steps=1000)
DESK_FINETUNE = TrainSchedule(peak_lr=1e-3, min_lr=5e-5, warmup_steps=10, total_steps=500, betas=(0.9, 0.999))


@dataclass
class PretrainResult:
    model: LUNAPretrainer
    trace: list[dict] = field(default_factory=list)

    def totals(self, alpha: float):
        return [r["l_rec_masked"] + alpha * r["l_rec_visible"] + r["l_spec"] for r in self.trace]


def _optimizer(groups, sched: TrainSchedule):
    return torch.optim.AdamW(groups, lr=sched.peak_lr, betas=sched.betas, weight_decay=sched.weight_decay)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr * g.get("lr_scale", 1.0)


def _check_finite(loss, step, parts=None):
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {float(loss)} at step {step} ({parts})")


def _check_params(model, step):
    for name, prm in model.named_parameters():
        if not torch.isfinite(prm).all():
            raise DivergenceError(f"parameter {name} became non-finite at step {step}")


@contextmanager
def _diverges_after_first(step):
    """Non-finite activations after an update mean the weights blew up."""
    try:
        yield
    except ContractError as exc:
        if step == 0:
            raise
        raise DivergenceError(f"non-finite activations at step {step}: {exc}") from exc


def as_batch_tensor(data, dtype=None) -> torch.Tensor:
    dtype = dtype or torch.get_default_dtype()
    return torch.as_tensor(np.asarray(data), dtype=dtype)


def pretrain(data, montage: MontageLayout, model: LUNAPretrainer, schedule: TrainSchedule,
             loss_cfg: LossConfig = LossConfig(), seed: int = 0, steps: int | None = None,
             callback=None) -> PretrainResult:
    """Masked-reconstruction pre-training on z-scored (N, C, T) data of one montage.

    Batches and masks are drawn from a generator seeded with ``seed``, so a
    run is bitwise reproducible for a fixed dtype and thread count.
    """
    x_all = as_batch_tensor(data, next(model.parameters()).dtype)
    n, c, t = x_all.shape
    p = model.cfg.patch_size
    gen = torch.Generator().manual_seed(seed)
    steps = schedule.total_steps if steps is None else steps
    opt = _optimizer(model.parameters(), schedule)
    model.train()
    result = PretrainResult(model)
    for step in range(steps):
        lr = schedule.lr_at(step)
        _set_lr(opt, lr)
        idx = torch.randint(0, n, (min(schedule.batch_size, n),), generator=gen)
        x = x_all[idx]
        mask = sample_mask(len(idx), c, t // p, loss_cfg.mask_ratio, gen)
        with _diverges_after_first(step):
            recon, enc = model(x, montage, mask)
        target = x.reshape(len(idx), c, t // p, p)
        loss, parts = pretrain_loss(target, recon, mask, enc.affinity, loss_cfg)
        _check_finite(loss, step, parts)
        opt.zero_grad(set_to_none=True)
        backward(loss)
        torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.grad_clip)
        opt.step()
        _check_params(model, step)
        row = {"step": step + 1, **parts, "lr": lr}
        result.trace.append(row)
        if callback is not None:
            callback(row)
        if step % 50 == 0:
            log.info("step %d loss %.5f", step + 1, float(loss.detach()))
    model.eval()
    return result


@torch.no_grad()
def masked_mse(model: LUNAPretrainer, data, montage: MontageLayout, mask_ratio: float = 0.5, seed: int = 1,
               batch_size: int = 64):
    """(model MSE, per-channel-mean predictor MSE) over masked patch samples.

    The baseline predicts each masked sample by the mean of the same
    channel's visible samples in that segment.
    """
    model.eval()
    x_all = as_batch_tensor(data, next(model.parameters()).dtype)
    n, c, t = x_all.shape
    p = model.cfg.patch_size
    gen = torch.Generator().manual_seed(seed)
    se_model = se_base = 0.0
    count = 0
    for start in range(0, n, batch_size):
        x = x_all[start:start + batch_size]
        b = x.shape[0]
        mask = sample_mask(b, c, t // p, mask_ratio, gen)
        recon, _ = model(x, montage, mask)
        target = x.reshape(b, c, t // p, p)
        m = mask.unsqueeze(-1).expand_as(target)
        vis = (~m).to(target.dtype)
        ch_mean = (target * vis).sum(dim=(2, 3)) / vis.sum(dim=(2, 3)).clamp_min(1)
        base = ch_mean[:, :, None, None].expand_as(target)
        se_model += float(((recon - target)[m] ** 2).sum())
        se_base += float(((base - target)[m] ** 2).sum())
        count += int(m.sum())
    return se_model / count, se_base / count


def layer_groups(model: LUNAClassifier, decay: float):
    """Parameter groups with lr scale decay**(max_depth - depth), deepest = head."""
    depth_of = {}
    n_blocks = len(model.encoder.temporal.blocks)
    top = n_blocks + 2
    for name, prm in model.named_parameters():
        if name.startswith("encoder.embedding"):
            d = 0
        elif name.startswith("encoder.unifier"):
            d = 1
        elif name.startswith("encoder.temporal.blocks."):
            d = 2 + int(name.split(".")[3])
        else:
            d = top
        depth_of.setdefault(d, []).append(prm)
    return [{"params": ps, "lr_scale": decay ** (top - d)} for d, ps in sorted(depth_of.items())]


@dataclass
class FinetuneResult:
    model: LUNAClassifier
    history: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    stopped_early: bool = False


@torch.no_grad()
def predict_scores(model: LUNAClassifier, data, positions, batch_size: int = 64) -> np.ndarray:
    model.eval()
    x_all = as_batch_tensor(data, next(model.parameters()).dtype)
    out = [torch.softmax(model(x_all[i:i + batch_size], positions)[0], dim=-1) for i in range(0, len(x_all), batch_size)]
    return torch.cat(out).double().numpy()


def finetune(data, labels, montage: MontageLayout, model: LUNAClassifier,
             schedule: TrainSchedule = FINETUNE_SCHEDULE, steps: int | None = None, seed: int = 0,
             layer_decay: float = 0.5, label_smoothing: float = 0.1, val_data=None, val_labels=None,
             eval_every: int = 25, patience: int = 10) -> FinetuneResult:
    """Supervised training of the classifier with layer-wise lr decay and early stopping.

    Label smoothing applies only when there are more than two classes.
    Early stopping watches validation loss every ``eval_every`` steps and
    restores the best weights.
    """
    dtype = next(model.parameters()).dtype
    x_all = as_batch_tensor(data, dtype)
    y_all = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    smoothing = label_smoothing if model.n_classes > 2 else 0.0
    gen = torch.Generator().manual_seed(seed)
    steps = schedule.total_steps if steps is None else steps
    opt = _optimizer(layer_groups(model, layer_decay), schedule)
    result = FinetuneResult(model)
    best, best_state, bad = math.inf, None, 0
    for step in range(steps):
        model.train()
        lr = schedule.lr_at(step)
        _set_lr(opt, lr)
        idx = torch.randint(0, len(x_all), (min(schedule.batch_size, len(x_all)),), generator=gen)
        with _diverges_after_first(step):
            logits, _ = model(x_all[idx], montage)
        loss = smoothed_cross_entropy(logits, y_all[idx], smoothing)
        _check_finite(loss, step)
        opt.zero_grad(set_to_none=True)
        backward(loss)
        torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.grad_clip)
        opt.step()
        _check_params(model, step)
        row = {"step": step + 1, "loss": float(loss.detach()), "lr": lr}
        if val_data is not None and (step + 1) % eval_every == 0:
            with torch.no_grad():
                model.eval()
                vl, _ = model(as_batch_tensor(val_data, dtype), montage)
                val_loss = float(smoothed_cross_entropy(vl, torch.as_tensor(np.asarray(val_labels)), smoothing))
            row["val_loss"] = val_loss
            if val_loss < best:
                best, best_state, bad = val_loss, copy.deepcopy(model.state_dict()), 0
            else:
                bad += 1
                if bad >= patience:
                    result.history.append(row)
                    result.stopped_early = True
                    break
        result.history.append(row)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    result.metrics["train"] = classification_report(y_all.numpy(), predict_scores(model, x_all, montage),
                                                    model.n_classes)
    if val_data is not None:
        result.metrics["val"] = classification_report(np.asarray(val_labels),
                                                      predict_scores(model, val_data, montage), model.n_classes)
    return result


def prepare(segments) -> np.ndarray:
    """Stack segments into (N, C, T) z-scored float64."""
    return np.stack([zscore_array(s.samples) for s in segments])
