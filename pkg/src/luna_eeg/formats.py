"""On-disk containers for segments, montages, datasets and checkpoints.

All binary payloads use fixed little-endian IEEE-754 encodings so files move
between platforms unchanged.

Segment file (``.seg``)
    One line of JSON metadata terminated by ``\\n``, then C*T float32 values,
    channel-major.

Montage file (``.txt``)
    ``# luna-montage v1``, then ``kind <name>``, ``name <name>``, then one
    ``label x y z`` row per electrode with ``.17g`` coordinates.

Checkpoint file (``.ckpt``)
    8-byte magic, uint32 version, uint32 header length, JSON header holding
    the model config, channel labels and a parameter table (name, shape,
    offset), then all parameters as float64.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .montage import MontageError, MontageLayout
from .preprocess import EEGSegment

SEGMENT_VERSION = 1
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"LUNACKPT"
MONTAGE_MAGIC = "# luna-montage v1"
_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int = 0, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class VersionMismatchError(FormatError):
    pass


class SizeMismatchError(FormatError):
    def __init__(self, expected: int, actual: int, offset: int = 0, path=None):
        self.expected = expected
        self.actual = actual
        super().__init__(f"payload size mismatch: expected {expected} bytes, got {actual}", offset, path)


class NonFiniteError(FormatError):
    pass


def _check_finite(values: np.ndarray, base: int, itemsize: int, path):
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        raise NonFiniteError(f"non-finite value at element {bad[0]}", base + int(bad[0]) * itemsize, path)


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# -- segments -----------------------------------------------------------------

def encode_segment(seg: EEGSegment, montage_id: str | None = None) -> bytes:
    header = {
        "version": SEGMENT_VERSION,
        "channels": seg.n_channels,
        "samples": seg.n_samples,
        "rate": float(seg.rate),
        "montage": montage_id or seg.montage.name,
        "label": seg.label,
        "preprocessed": bool(seg.preprocessed),
    }
    payload = np.ascontiguousarray(seg.samples, dtype=_F32)
    _check_finite(payload, 0, 4, None)
    return json.dumps(header, sort_keys=True).encode() + b"\n" + payload.tobytes()


def decode_segment(data: bytes, montage: MontageLayout | None = None, path=None) -> EEGSegment:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header terminator", len(data), path)
    try:
        header = json.loads(data[:nl])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad header: {exc.msg}", exc.pos, path) from None
    if header.get("version") != SEGMENT_VERSION:
        raise VersionMismatchError(f"segment version {header.get('version')!r}, expected {SEGMENT_VERSION}", 0, path)
    c, t = int(header["channels"]), int(header["samples"])
    start = nl + 1
    expected = c * t * 4
    if len(data) - start != expected:
        raise SizeMismatchError(expected, len(data) - start, start, path)
    x = np.frombuffer(data, dtype=_F32, count=c * t, offset=start).reshape(c, t)
    _check_finite(x, start, 4, path)
    if montage is None:
        raise FormatError("a montage is required to attach electrode positions", 0, path)
    if len(montage) != c:
        raise FormatError(f"montage has {len(montage)} channels, segment has {c}", 0, path)
    return EEGSegment(x.astype(np.float64), header["rate"], montage, header.get("label"),
                      bool(header.get("preprocessed", False)))


def segment_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    return json.loads(line)


def write_segment(path, seg: EEGSegment, montage_id: str | None = None):
    _atomic_write(path, encode_segment(seg, montage_id))


def read_segment(path, montage: MontageLayout) -> EEGSegment:
    return decode_segment(Path(path).read_bytes(), montage, path)


# -- montages -----------------------------------------------------------------

def format_montage(montage: MontageLayout) -> str:
    lines = [MONTAGE_MAGIC, f"kind {montage.kind}", f"name {montage.name}"]
    for label, (x, y, z) in zip(montage.labels, montage.positions):
        lines.append(f"{label} {x:.17g} {y:.17g} {z:.17g}")
    return "\n".join(lines) + "\n"


def parse_montage(text: str, path=None) -> MontageLayout:
    lines = text.split("\n")
    if not lines or lines[0] != MONTAGE_MAGIC:
        raise VersionMismatchError(f"expected first line {MONTAGE_MAGIC!r}", 0, path)
    offset = len(lines[0]) + 1
    meta, labels, rows = {}, [], []
    for line in lines[1:]:
        parts = line.split()
        if not parts:
            offset += len(line) + 1
            continue
        if parts[0] in ("kind", "name") and len(parts) == 2 and not rows:
            meta[parts[0]] = parts[1]
        elif len(parts) == 4:
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise FormatError(f"bad coordinate in row {line!r}", offset, path) from None
            labels.append(parts[0])
        else:
            raise FormatError(f"unparseable montage row {line!r}", offset, path)
        offset += len(line) + 1
    if not labels:
        raise FormatError("montage has no electrodes", offset, path)
    try:
        return MontageLayout(tuple(labels), np.array(rows), meta.get("kind", "unipolar"), meta.get("name", "custom"))
    except MontageError as exc:
        raise FormatError(str(exc), 0, path) from None


def write_montage(path, montage: MontageLayout):
    _atomic_write(path, format_montage(montage).encode())


def read_montage(path) -> MontageLayout:
    return parse_montage(Path(path).read_text(), path)


# -- datasets -----------------------------------------------------------------

MONTAGE_FILE = "montage.txt"


def write_dataset(directory, segments, montage: MontageLayout | None = None):
    """Directory with ``montage.txt`` and zero-padded ``NNNNNN.seg`` files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    montage = montage or segments[0].montage
    write_montage(d / MONTAGE_FILE, montage)
    for i, seg in enumerate(segments):
        if seg.montage != montage:
            raise FormatError(f"segment {i} uses a different montage", 0, d)
        write_segment(d / f"{i:06d}.seg", seg, montage.name)
    return d


def read_dataset(directory) -> list[EEGSegment]:
    d = Path(directory)
    if not (d / MONTAGE_FILE).is_file():
        raise FormatError(f"no {MONTAGE_FILE} in dataset directory", 0, d)
    montage = read_montage(d / MONTAGE_FILE)
    return [read_segment(p, montage) for p in sorted(d.glob("*.seg"))]


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    config: dict
    state: dict  # name -> float64 ndarray
    labels: tuple = ()
    kind: str = "pretrainer"
    meta: dict | None = None


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    table, offset, chunks = [], 0, []
    for name in sorted(ckpt.state):
        arr = np.ascontiguousarray(np.asarray(ckpt.state[name]), dtype=_F64)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": ckpt.config, "labels": list(ckpt.labels), "kind": ckpt.kind,
                         "meta": ckpt.meta or {}, "params": table, "payload_bytes": offset},
                        sort_keys=True).encode()
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + b"".join(chunks)


def decode_checkpoint(data: bytes, path=None) -> Checkpoint:
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", 0, path)
    if len(data) < 16:
        raise SizeMismatchError(16, len(data), 0, path)
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}", 8, path)
    try:
        header = json.loads(data[16:16 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad header: {exc.msg}", 16 + exc.pos, path) from None
    base = 16 + hlen
    if len(data) - base != header["payload_bytes"]:
        raise SizeMismatchError(header["payload_bytes"], len(data) - base, base, path)
    state = {}
    for row in header["params"]:
        n = int(np.prod(row["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=_F64, count=n, offset=base + row["offset"]).reshape(row["shape"])
        _check_finite(arr, base + row["offset"], 8, path)
        state[row["name"]] = arr.copy()
    return Checkpoint(header["config"], state, tuple(header["labels"]), header["kind"], header["meta"])


def write_checkpoint(path, ckpt: Checkpoint):
    _atomic_write(path, encode_checkpoint(ckpt))


def read_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), path)


def checkpoint_from_model(model, kind: str, labels=(), meta=None) -> Checkpoint:
    state = {k: v.detach().to(torch.float64).cpu().numpy() for k, v in model.state_dict().items()}
    return Checkpoint(model.cfg.to_dict(), state, tuple(labels), kind, meta)


def load_into(model, ckpt: Checkpoint, strict: bool = True):
    """Copy checkpoint parameters into ``model`` at the model's dtype."""
    dtype = next(model.parameters()).dtype
    own = model.state_dict()
    missing = set(own) - set(ckpt.state)
    if strict and missing:
        raise FormatError(f"checkpoint lacks parameters: {sorted(missing)[:5]}", 0)
    for name, arr in ckpt.state.items():
        if name in own and tuple(own[name].shape) != arr.shape:
            raise FormatError(f"shape mismatch for {name}: {arr.shape} vs {tuple(own[name].shape)}", 0)
    model.load_state_dict({k: torch.as_tensor(v, dtype=dtype) for k, v in ckpt.state.items() if k in own},
                          strict=strict)
    return model
