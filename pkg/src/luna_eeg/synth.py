"""Synthetic multi-channel EEG: spatially mixed band-limited sources plus white noise."""

from __future__ import annotations

import numpy as np

from .montage import MontageLayout
from .preprocess import EEGSegment

BANDS = {"delta": (1.0, 4.0), "alpha": (8.0, 12.0), "beta": (13.0, 30.0)}
BAND_WEIGHTS = {"delta": 1.0, "alpha": 0.6, "beta": 0.3}
CLASS_GAIN = 4.0
MICROVOLTS = 20.0


def band_noise(rng, n: int, rate: float, lo: float, hi: float) -> np.ndarray:
    """Unit-variance Gaussian noise with its spectrum confined to [lo, hi] Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (x.std() + 1e-12)


def mixing_matrix(positions: np.ndarray, sources: np.ndarray, width: float) -> np.ndarray:
    """Gaussian fall-off of each source over electrode distance, rows normalised to unit norm."""
    d = np.linalg.norm(positions[:, None, :] - sources[None, :, :], axis=-1)
    w = np.exp(-0.5 * (d / width) ** 2)
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def synth_eeg(montage: MontageLayout, n_segments: int, seed: int = 0, rate: float = 256.0,
              seconds: float = 5.0, n_classes: int = 0, n_sources: int = 3, noise: float = 0.2,
              width: float = 0.8, band_weights: dict | None = None) -> list[EEGSegment]:
    """Generate ``n_segments`` raw (microvolt-scale) segments.

    Source locations are fixed for the whole dataset; activity is drawn per
    segment. With ``n_classes`` > 0, segment i has label i % n_classes and the
    band of index ``label % 3`` (delta, alpha, beta) is amplified by CLASS_GAIN.
    """
    rng = np.random.default_rng(seed)
    weights = dict(BAND_WEIGHTS if band_weights is None else band_weights)
    src = rng.standard_normal((n_sources, 3))
    src /= np.linalg.norm(src, axis=1, keepdims=True)
    mix = mixing_matrix(montage.positions, src, width)
    n = int(round(rate * seconds))
    names = list(BANDS)
    out = []
    for i in range(n_segments):
        label = i % n_classes if n_classes else None
        gains = dict(weights)
        if label is not None:
            gains[names[label % len(names)]] *= CLASS_GAIN
        acts = np.zeros((n_sources, n))
        for name, (lo, hi) in BANDS.items():
            if gains[name]:
                acts += gains[name] * np.stack([band_noise(rng, n, rate, lo, hi) for _ in range(n_sources)])
        x = mix @ acts + noise * rng.standard_normal((len(montage), n))
        out.append(EEGSegment(MICROVOLTS * x, rate, montage, label))
    return out


def stack_segments(segments, dtype=np.float64):
    """(N, C, T) array plus label vector (-1 where unlabelled)."""
    x = np.stack([s.samples for s in segments]).astype(dtype)
    y = np.array([-1 if s.label is None else s.label for s in segments], dtype=np.int64)
    return x, y
