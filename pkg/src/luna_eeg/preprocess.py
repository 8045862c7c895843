"""Preprocessing: bandpass, notch, resample, bipolar montage, windowing, z-score."""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .montage import BIPOLAR_PAIRS, MontageLayout, UnknownElectrodeError, bipolar_montage
from .numeric import ConfigError

TARGET_RATE = 256.0
BUTTER_ORDER = 4
NOTCH_Q = 30.0
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class EEGSegment:
    """C x T samples at ``rate`` Hz on ``montage``."""

    samples: np.ndarray
    rate: float
    montage: MontageLayout
    label: int | None = None
    preprocessed: bool = False

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 2 or x.shape[0] != len(self.montage):
            raise ValueError(f"samples shape {x.shape} does not match {len(self.montage)}-channel montage")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.n_samples / self.rate


def bandpass(x, rate, lo=0.1, hi=75.0, order=BUTTER_ORDER):
    """Zero-phase Butterworth bandpass along the last axis."""
    if rate <= 2 * hi:
        raise ConfigError(f"rate {rate} Hz must exceed twice the upper edge {hi} Hz")
    if not 0 < lo < hi:
        raise ConfigError(f"invalid band [{lo}, {hi}] Hz")
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=rate, output="sos")
    return sps.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=-1)


def notch(x, rate, freq=50, q=NOTCH_Q):
    """Zero-phase second-order IIR notch at the mains frequency."""
    if freq not in (50, 60):
        raise ConfigError(f"notch frequency must be 50 or 60 Hz, got {freq}")
    if rate <= 2 * freq:
        raise ConfigError(f"rate {rate} Hz too low for a {freq} Hz notch")
    b, a = sps.iirnotch(freq, q, fs=rate)
    return sps.filtfilt(b, a, np.asarray(x, dtype=np.float64), axis=-1)


def resample(x, from_rate, to_rate=TARGET_RATE):
    """Polyphase rational resampling along the last axis."""
    if from_rate <= 0 or to_rate <= 0:
        raise ConfigError("sampling rates must be positive")
    x = np.asarray(x, dtype=np.float64)
    ratio = Fraction(to_rate / from_rate).limit_denominator(1000)
    if ratio == 1:
        return x.copy()
    return sps.resample_poly(x, ratio.numerator, ratio.denominator, axis=-1, padtype="line")


def build_bipolar(seg: EEGSegment) -> EEGSegment:
    """Differences of the 20 longitudinal pairs, in pair-list order."""
    mont = seg.montage
    for a, b in BIPOLAR_PAIRS:
        for lab in (a, b):
            try:
                mont.index(lab)
            except UnknownElectrodeError:
                raise UnknownElectrodeError(lab) from None
    rows = [seg.samples[mont.index(a)] - seg.samples[mont.index(b)] for a, b in BIPOLAR_PAIRS]
    return replace(seg, samples=np.stack(rows), montage=bipolar_montage(mont))


def segment(seg: EEGSegment, window_seconds: float = 5.0) -> list[EEGSegment]:
    """Non-overlapping windows; a trailing remainder shorter than a window is dropped."""
    n = seg.rate * window_seconds
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"window of {window_seconds} s is not a whole number of samples at {seg.rate} Hz")
    n = int(round(n))
    count = seg.n_samples // n
    return [replace(seg, samples=seg.samples[:, i * n:(i + 1) * n].copy()) for i in range(count)]


def zscore_array(x):
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = np.maximum(x.std(axis=-1, keepdims=True), STD_FLOOR)
    out = (x - mu) / sd
    out[np.broadcast_to(x.std(axis=-1, keepdims=True) < STD_FLOOR, out.shape)] = 0.0
    return out


def zscore(seg: EEGSegment) -> EEGSegment:
    """Per-channel standardisation; constant channels map to zeros."""
    return replace(seg, samples=zscore_array(seg.samples))


def preprocess_recording(rec: EEGSegment, notch_freq=None, window_seconds=5.0,
                         bipolar=False, lo=0.1, hi=75.0) -> list[EEGSegment]:
    """Full pipeline: bandpass, notch, resample to 256 Hz, optional bipolar, window, z-score."""
    x = bandpass(rec.samples, rec.rate, lo, hi)
    if notch_freq is not None:
        x = notch(x, rec.rate, notch_freq)
    x = resample(x, rec.rate, TARGET_RATE)
    seg = replace(rec, samples=x, rate=TARGET_RATE)
    if bipolar:
        seg = build_bipolar(seg)
    return [replace(zscore(w), preprocessed=True) for w in segment(seg, window_seconds)]
