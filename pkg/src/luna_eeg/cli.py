"""Command-line entry point: ``luna <command> ...``.

Settings come from a YAML config file (``--config`` or the ``LUNA_CONFIG``
environment variable) and are overridden by explicit flags. Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import bench as bench_mod
from .formats import (FormatError, checkpoint_from_model, load_into, read_checkpoint, read_dataset,
                      read_montage, read_segment, write_checkpoint, write_dataset)
from .losses import LossConfig
from .model import LUNAClassifier, LUNAPretrainer, ModelConfig, preset
from .montage import MontageError, standard_montage
from .numeric import ConfigError, ContractError
from .preprocess import preprocess_recording, zscore_array
from .synth import synth_eeg
from .training import (DESK_FINETUNE, DESK_PRETRAIN, TRACE_COLUMNS, DivergenceError, TrainSchedule, finetune,
                       prepare, pretrain)

log = logging.getLogger("luna_eeg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
CONFIG_ENV = "LUNA_CONFIG"

DEFAULTS = {
    "seed": 0,
    "precision": "float32",
    "model": {"preset": "tiny"},
    "pretrain": {**{k: getattr(DESK_PRETRAIN, k) for k in ("peak_lr", "min_lr", "warmup_steps", "batch_size",
                                                          "weight_decay", "grad_clip")},
                 "steps": DESK_PRETRAIN.total_steps, "alpha": 0.05, "beta": 1.0, "lambda_spec": 0.8,
                 "mask_ratio": 0.5},
    "finetune": {**{k: getattr(DESK_FINETUNE, k) for k in ("peak_lr", "min_lr", "warmup_steps", "batch_size",
                                                          "weight_decay", "grad_clip")},
                 "steps": DESK_FINETUNE.total_steps, "layer_decay": 0.5, "label_smoothing": 0.1,
                 "patience": 10, "eval_every": 25, "val_fraction": 0.2},
    "bench": {"preset": "base", "axis": "channels", "grid": [8, 16, 32, 64, 128],
              "models": list(bench_mod.MODELS), "patches": 20, "channels": 20, "batch": 1},
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None) -> dict:
    """Defaults, then the YAML file (explicit path, else $LUNA_CONFIG if set)."""
    path = path or os.environ.get(CONFIG_ENV)
    cfg = _merge(DEFAULTS, {})
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise UsageError(f"config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config file {path} must hold a mapping")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, data)
    return cfg


def _override(section: dict, args, names):
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            section[name] = v


def _dtype(cfg):
    if cfg["precision"] not in ("float32", "float64"):
        raise UsageError("precision must be float32 or float64")
    return torch.float64 if cfg["precision"] == "float64" else torch.float32


def _model_config(cfg) -> ModelConfig:
    m = dict(cfg["model"])
    name = m.pop("preset", "tiny")
    return preset(name, **m)


def _schedule(sec) -> TrainSchedule:
    try:
        return TrainSchedule(peak_lr=float(sec["peak_lr"]), min_lr=float(sec["min_lr"]),
                             warmup_steps=int(sec["warmup_steps"]), total_steps=int(sec["steps"]),
                             weight_decay=float(sec["weight_decay"]), grad_clip=float(sec["grad_clip"]),
                             batch_size=int(sec["batch_size"]),
                             betas=tuple(float(b) for b in sec.get("betas", (0.9, 0.98))))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad schedule value: {exc}") from None


def _montage(spec):
    if spec is None:
        return None
    p = Path(spec)
    return read_montage(p) if p.is_file() else standard_montage(spec)


def _load_segments(path):
    segs = read_dataset(path)
    if not segs:
        raise FormatError("dataset holds no segments", 0, path)
    return segs


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands -----------------------------------------------------------------

def cmd_preprocess(args, cfg):
    montage = _montage(args.montage)
    in_dir = Path(args.in_dir)
    raw = read_dataset(in_dir) if montage is None else [read_segment(p, montage) for p in sorted(in_dir.glob("*.seg"))]
    if not raw:
        raise FormatError("no input recordings", 0, in_dir)
    out = []
    for rec in raw:
        out.extend(preprocess_recording(rec, notch_freq=args.notch, window_seconds=args.window, bipolar=args.bipolar))
    if not out:
        raise FormatError("recordings are shorter than one window", 0, in_dir)
    write_dataset(args.out_dir, out)
    print(f"wrote {len(out)} segments to {args.out_dir}")


def cmd_synth(args, cfg):
    montage = _montage(args.montage)
    segs = synth_eeg(montage, args.n, seed=args.seed if args.seed is not None else cfg["seed"],
                     n_classes=args.classes, seconds=args.seconds)
    write_dataset(args.out_dir, segs, montage)
    print(f"wrote {len(segs)} segments to {args.out_dir}")


def cmd_pretrain(args, cfg):
    sec = cfg["pretrain"]
    _override(sec, args, ("steps", "peak_lr", "batch_size"))
    seed = args.seed if args.seed is not None else cfg["seed"]
    dtype = _dtype(cfg)
    sched = _schedule(sec)
    loss_cfg = LossConfig(sec["alpha"], sec["beta"], sec["lambda_spec"], sec["mask_ratio"])
    model_cfg = _model_config(cfg)
    segs = _load_segments(args.data)
    montage = segs[0].montage
    x = prepare(segs)
    if x.shape[-1] % model_cfg.patch_size:
        raise FormatError(f"segment length {x.shape[-1]} is not a multiple of the patch size", 0, args.data)
    model = LUNAPretrainer(model_cfg, montage.labels, seed=seed).to(dtype)
    result = pretrain(x, montage, model, sched, loss_cfg, seed=seed)
    write_checkpoint(args.out, checkpoint_from_model(model, "pretrainer", model.decoder.bank.labels(),
                                                     {"seed": seed, "steps": sec["steps"]}))
    trace = args.trace or str(Path(args.out).with_suffix(".trace.csv"))
    _write_csv(trace, TRACE_COLUMNS, ([r[c] for c in TRACE_COLUMNS] for r in result.trace))
    print(f"checkpoint {args.out}; loss trace {trace}")


def _split(n, fraction):
    n_val = int(round(n * fraction))
    return np.arange(n - n_val), np.arange(n - n_val, n)


def cmd_finetune(args, cfg):
    sec = cfg["finetune"]
    _override(sec, args, ("steps", "peak_lr", "batch_size"))
    seed = args.seed if args.seed is not None else cfg["seed"]
    dtype = _dtype(cfg)
    sched = _schedule({**sec, "betas": sec.get("betas", (0.9, 0.999))})
    ckpt = read_checkpoint(args.checkpoint)
    segs = _load_segments(args.data)
    labels = np.array([-1 if s.label is None else s.label for s in segs])
    if np.any(labels < 0) or np.any(labels >= args.classes):
        raise FormatError(f"every segment needs a label in [0, {args.classes})", 0, args.data)
    montage = segs[0].montage
    x = prepare(segs)
    model_cfg = ModelConfig.from_dict(ckpt.config)
    if ckpt.kind == "pretrainer":
        pre = load_into(LUNAPretrainer(model_cfg, ckpt.labels, seed=seed).to(dtype), ckpt)
        model = LUNAClassifier.from_pretrained(pre, args.classes, seed=seed)
    else:
        model = load_into(LUNAClassifier(model_cfg, args.classes, seed=seed).to(dtype), ckpt)
    model.encoder.temporal.set_drop_path(model_cfg.drop_path)
    tr, va = _split(len(x), sec["val_fraction"])
    val = dict(val_data=x[va], val_labels=labels[va]) if len(va) else {}
    result = finetune(x[tr], labels[tr], montage, model, sched, seed=seed, layer_decay=sec["layer_decay"],
                      label_smoothing=sec["label_smoothing"], eval_every=sec["eval_every"],
                      patience=sec["patience"], **val)
    write_checkpoint(args.out, checkpoint_from_model(model, "classifier", (), {"n_classes": args.classes}))
    metrics = args.metrics or str(Path(args.out).with_suffix(".metrics.csv"))
    rows = [(split, k, v) for split, m in result.metrics.items() for k, v in m.items()]
    _write_csv(metrics, ("split", "metric", "value"), rows)
    print(f"checkpoint {args.out}; metrics {metrics}")


def cmd_bench(args, cfg):
    sec = cfg["bench"]
    for name in ("axis", "grid", "models", "patches", "channels", "batch", "preset"):
        v = getattr(args, name, None)
        if v is not None:
            sec[name] = v
    grid = [int(g) for g in (sec["grid"].split(",") if isinstance(sec["grid"], str) else sec["grid"])]
    models = sec["models"].split(",") if isinstance(sec["models"], str) else list(sec["models"])
    fixed = {"cfg": preset(sec["preset"]), "B": int(sec["batch"])}
    fixed["S" if sec["axis"] == "channels" else "C"] = int(sec["patches"] if sec["axis"] == "channels"
                                                          else sec["channels"])
    report = bench_mod.sweep(sec["axis"], grid, models, fixed, workers=args.workers)
    report.to_csv(args.out)
    if args.plot:
        Path(args.plot).write_text(report.gnuplot_script(Path(args.out).name))
    for name, e in report.exponents.items():
        print(f"{name}: attention-term exponent {e:.3f}, affine R^2 {report.r2[name]:.6f}")


def cmd_inspect_queries(args, cfg):
    ckpt = read_checkpoint(args.checkpoint)
    seg_path = Path(args.segment)
    montage = _montage(args.montage) or read_montage(seg_path.parent / "montage.txt")
    seg = read_segment(seg_path, montage)
    model_cfg = ModelConfig.from_dict(ckpt.config)
    if ckpt.kind == "pretrainer":
        model = load_into(LUNAPretrainer(model_cfg, ckpt.labels).double(), ckpt)
    else:
        model = load_into(LUNAClassifier(model_cfg, int(ckpt.meta.get("n_classes", 2))).double(), ckpt)
    x = torch.as_tensor(zscore_array(seg.samples))[None]
    with torch.no_grad():
        enc = model.encoder(x, montage)
    aff = enc.affinity.mean(dim=0).numpy()  # (Q, C), mean over patches
    rows = [[f"q{i}"] + [f"{v:.10f}" for v in row] for i, row in enumerate(aff)]
    _write_csv(args.out, ["query", *montage.labels], rows)
    print(f"wrote {aff.shape[0]}x{aff.shape[1]} affinity table to {args.out}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="luna", description="Topology-agnostic EEG encoder toolkit.")
    p.add_argument("--config", help=f"YAML config file (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("preprocess", help="filter, resample, window and z-score recordings")
    s.add_argument("in_dir")
    s.add_argument("out_dir")
    s.add_argument("--montage", help="montage name or montage file (default: in_dir/montage.txt)")
    s.add_argument("--notch", type=int, choices=(50, 60))
    s.add_argument("--window", type=float, default=5.0)
    s.add_argument("--bipolar", action="store_true", help="convert to the 20-channel bipolar montage")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="write a synthetic EEG dataset")
    s.add_argument("out_dir")
    s.add_argument("--montage", default="tcp20")
    s.add_argument("-n", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.add_argument("--classes", type=int, default=0)
    s.add_argument("--seconds", type=float, default=5.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace", help="loss-trace CSV (default: <out>.trace.csv)")
    s.add_argument("--steps", type=int)
    s.add_argument("--peak-lr", dest="peak_lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="train a classifier from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--metrics", help="metrics CSV (default: <out>.metrics.csv)")
    s.add_argument("--steps", type=int)
    s.add_argument("--peak-lr", dest="peak_lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("bench", help="FLOPs / memory scaling sweep")
    s.add_argument("--axis", choices=("channels", "patches"))
    s.add_argument("--grid", help="comma-separated increasing values")
    s.add_argument("--models", help=f"comma-separated subset of {','.join(bench_mod.MODELS)}")
    s.add_argument("--preset")
    s.add_argument("--patches", type=int, help="fixed patch count on the channel axis")
    s.add_argument("--channels", type=int, help="fixed channel count on the patch axis")
    s.add_argument("--batch", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="also write a gnuplot script here")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("inspect-queries", help="per-query channel affinity of one segment")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--segment", required=True)
    s.add_argument("--montage", help="montage name or file (default: montage.txt beside the segment)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inspect_queries)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    stage = args.command
    try:
        cfg = load_config(args.config)
        torch.set_num_threads(1)
        args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"luna {stage}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, MontageError, ContractError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"luna {stage}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"luna {stage}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
