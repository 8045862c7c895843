"""Electrode layouts and the built-in unit-sphere coordinate table.

Coordinates follow an idealised spherical 10-10 system: Cz at the pole,
Fpz/T7/Oz/T8 on the equator, x to the right ear, y to the nose, z up.
Each lateral electrode sits on the great-circle arc from its row's midline
point to the row's equatorial endpoint, at a fraction set by its index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

# (midline polar angle, midline azimuth, equatorial endpoint |azimuth|), degrees
_ROWS = {
    "FP": (90.0, 0.0, 18.0),
    "AF": (67.5, 0.0, 36.0),
    "F": (45.0, 0.0, 54.0),
    "FC": (22.5, 0.0, 72.0),
    "C": (0.0, 0.0, 90.0),
    "CP": (22.5, 180.0, 108.0),
    "P": (45.0, 180.0, 126.0),
    "PO": (67.5, 180.0, 144.0),
    "O": (90.0, 180.0, 162.0),
}
_ROW_ALIASES = {"FT": "FC", "T": "C", "TP": "CP"}
_LABEL_ALIASES = {"T3": "T7", "T4": "T8", "T5": "P7", "T6": "P8"}
# off-grid sites: (polar, |azimuth|) with left/right sign from the index parity
_SPECIAL = {"A": (120.0, 90.0), "CB": (112.5, 153.0)}
_LABEL_RE = re.compile(r"^(FP|AF|FT|FC|TP|CP|PO|CB|F|C|T|P|O|A)(Z|\d+)$")

TEN_TWENTY = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz",
              "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2")

SIENA_29 = ("Fp1", "F3", "C3", "P3", "O1", "F7", "T3", "T5", "FC1", "FC5",
            "CP1", "CP5", "F9", "Fz", "Cz", "Pz", "Fp2", "F4", "C4", "P4",
            "O2", "F8", "T4", "T6", "FC2", "FC6", "CP2", "CP6", "F10")

SEED_62 = ("FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2",
           "F4", "F6", "F8", "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6",
           "FT8", "T7", "C5", "C3", "C1", "CZ", "C2", "C4", "C6", "T8", "TP7", "CP5",
           "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6", "TP8", "P7", "P5", "P3", "P1",
           "PZ", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3", "POZ", "PO4", "PO6",
           "PO8", "CB1", "O1", "OZ", "O2", "CB2")

# longitudinal "double banana" pairs, in emission order
BIPOLAR_PAIRS = (
    ("Fp1", "F7"), ("F7", "T3"), ("T3", "T5"), ("T5", "O1"),
    ("Fp2", "F8"), ("F8", "T4"), ("T4", "T6"), ("T6", "O2"),
    ("T3", "C3"), ("C3", "CZ"),
    ("Fp1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("Fp2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
    ("CZ", "C4"), ("C4", "T4"),
)


class MontageError(ValueError):
    pass


class UnknownElectrodeError(MontageError):
    def __init__(self, label):
        super().__init__(f"no coordinates for electrode {label!r}")
        self.label = label


def _unit(polar_deg, az_deg):
    t, p = np.radians(polar_deg), np.radians(az_deg)
    return np.array([np.sin(t) * np.sin(p), np.sin(t) * np.cos(p), np.cos(t)])


def _slerp(a, b, frac):
    omega = np.arccos(np.clip(a @ b, -1.0, 1.0))
    if omega < 1e-12:
        return a.copy()
    return (np.sin((1 - frac) * omega) * a + np.sin(frac * omega) * b) / np.sin(omega)


def electrode_position(label: str) -> np.ndarray:
    """Unit-sphere coordinates of a 10-10 / 10-20 electrode label (case-insensitive)."""
    key = label.strip().upper()
    key = _LABEL_ALIASES.get(key, key)
    m = _LABEL_RE.match(key)
    if not m:
        raise UnknownElectrodeError(label)
    row, idx = m.groups()
    if row in _SPECIAL:
        if idx == "Z":
            raise UnknownElectrodeError(label)
        polar, az = _SPECIAL[row]
        side = -1.0 if int(idx) % 2 else 1.0
        return _unit(polar, side * az)
    row = _ROW_ALIASES.get(row, row)
    polar_m, az_m, az_end = _ROWS[row]
    mid = _unit(polar_m, az_m)
    if idx == "Z":
        return mid
    n = int(idx)
    if n < 1 or n > 10:
        raise UnknownElectrodeError(label)
    side = -1.0 if n % 2 else 1.0
    end = _unit(90.0, side * az_end)
    if n >= 9:
        return _unit(108.0, side * az_end)
    if row in ("FP", "O"):
        if n > 2:
            raise UnknownElectrodeError(label)
        return end
    frac = ((n + 1) // 2) / 4.0
    p = _slerp(mid, end, frac)
    return p / np.linalg.norm(p)


@dataclass(frozen=True)
class MontageLayout:
    """Ordered channel labels with unit-sphere positions."""

    labels: tuple[str, ...]
    positions: np.ndarray
    kind: str = "unipolar"
    name: str = "custom"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "positions", pos)
        if self.kind not in ("unipolar", "bipolar"):
            raise MontageError(f"montage kind must be unipolar or bipolar, got {self.kind!r}")
        if pos.shape != (len(self.labels), 3):
            raise MontageError(f"positions shape {pos.shape} does not match {len(self.labels)} labels")
        seen = set()
        for lab in self.labels:
            if lab.upper() in seen:
                raise MontageError(f"duplicate channel label {lab!r}")
            seen.add(lab.upper())
        norms = np.linalg.norm(pos, axis=1)
        bad = np.flatnonzero((norms < 0.99) | (norms > 1.01))
        if bad.size:
            raise MontageError(f"channel {self.labels[bad[0]]!r} position norm {norms[bad[0]]:.4f} not on unit sphere")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        key = label.upper()
        for i, lab in enumerate(self.labels):
            if lab.upper() == key:
                return i
        raise UnknownElectrodeError(label)

    def permuted(self, perm) -> "MontageLayout":
        perm = list(perm)
        return MontageLayout(tuple(self.labels[i] for i in perm), self.positions[perm], self.kind, self.name)

    def __eq__(self, other):
        if not isinstance(other, MontageLayout):
            return NotImplemented
        return (self.labels == other.labels and self.kind == other.kind and self.name == other.name
                and np.array_equal(self.positions, other.positions))

    def __hash__(self):
        return hash((self.labels, self.kind, self.name))


def montage_from_labels(labels, name: str = "custom") -> MontageLayout:
    return MontageLayout(tuple(labels), np.stack([electrode_position(l) for l in labels]), "unipolar", name)


def standard_montage(name: str) -> MontageLayout:
    """One of 'tcp20' (bipolar), '10-20' (19 ch), 'siena29', 'seed62'."""
    tables = {"10-20": TEN_TWENTY, "siena29": SIENA_29, "seed62": SEED_62}
    if name == "tcp20":
        return bipolar_montage(montage_from_labels(TEN_TWENTY, "10-20"))
    if name not in tables:
        raise MontageError(f"unknown montage {name!r}; choose from tcp20, {', '.join(tables)}")
    return montage_from_labels(tables[name], name)


def bipolar_montage(unipolar: MontageLayout) -> MontageLayout:
    """Layout of the 20 longitudinal pairs; positions are normalised midpoints."""
    labels, pos = [], []
    for a, b in BIPOLAR_PAIRS:
        mid = unipolar.positions[unipolar.index(a)] + unipolar.positions[unipolar.index(b)]
        labels.append(f"{a}-{b}")
        pos.append(mid / np.linalg.norm(mid))
    return MontageLayout(tuple(labels), np.stack(pos), "bipolar", "tcp20")
