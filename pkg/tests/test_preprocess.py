import numpy as np
import pytest

from luna_eeg.montage import MontageLayout, UnknownElectrodeError, montage_from_labels, standard_montage, TEN_TWENTY
from luna_eeg.numeric import ConfigError
from luna_eeg.preprocess import (EEGSegment, bandpass, build_bipolar, notch, preprocess_recording, resample, segment,
                                 zscore, zscore_array)

from oracles import tone_amplitude

RATE = 256.0


def tone(freq, seconds=10.0, rate=RATE, phase=0.3):
    t = np.arange(int(seconds * rate)) / rate
    return np.sin(2 * np.pi * freq * t + phase)


def db(a, b):
    return 20 * np.log10(a / b)


class TestBandpass:
    def test_passband_within_5_percent(self):
        y = bandpass(tone(10), RATE)
        assert abs(tone_amplitude(y, 10, RATE, trim=256) - 1) <= 0.05

    def test_stopband_attenuation(self):
        a10 = tone_amplitude(bandpass(tone(10), RATE), 10, RATE, trim=256)
        a100 = tone_amplitude(bandpass(tone(100), RATE), 100, RATE, trim=256)
        assert db(a10, a100) >= 20

    def test_zero(self):
        assert np.array_equal(bandpass(np.zeros(1000), RATE), np.zeros(1000))

    def test_rate_too_low(self):
        with pytest.raises(ConfigError):
            bandpass(np.zeros(100), 150.0)

    def test_deterministic_multichannel(self, rng):
        x = rng.standard_normal((3, 2000))
        a, b = bandpass(x, RATE), bandpass(x, RATE)
        assert a.tobytes() == b.tobytes()
        np.testing.assert_allclose(a[1], bandpass(x[1], RATE), atol=1e-12)


class TestNotch:
    @pytest.mark.parametrize("mains", [50, 60])
    def test_attenuation_and_passband(self, mains):
        a_mains = tone_amplitude(notch(tone(mains, 20), RATE, mains), mains, RATE, trim=512)
        a10 = tone_amplitude(notch(tone(10, 20), RATE, mains), 10, RATE, trim=512)
        assert db(1.0, a_mains) >= 20
        assert abs(a10 - 1) <= 0.05

    def test_zero(self):
        assert np.array_equal(notch(np.zeros(500), RATE, 50), np.zeros(500))

    def test_unsupported(self):
        with pytest.raises(ConfigError):
            notch(np.zeros(100), RATE, 55)


class TestResample:
    def test_identity(self, rng):
        x = rng.standard_normal(300)
        assert np.array_equal(resample(x, 256, 256), x)

    @pytest.mark.parametrize("src", [512.0, 500.0, 250.0, 1000.0])
    def test_tone_correlation(self, src):
        y = resample(tone(5, 10, src), src, RATE)
        ref = tone(5, 10, RATE)
        assert len(y) == len(ref)
        corr = np.dot(y, ref) / np.linalg.norm(y) / np.linalg.norm(ref)
        assert corr >= 0.999

    def test_constant(self):
        y = resample(np.full(1024, 3.5), 512, 256)
        np.testing.assert_allclose(y, 3.5, atol=1e-9)

    def test_bad_rate(self):
        with pytest.raises(ConfigError):
            resample(np.zeros(10), 0, 256)


def _unipolar(x):
    return EEGSegment(x, RATE, montage_from_labels(TEN_TWENTY, "10-20"))


class TestBipolar:
    def test_identical_signals_give_zero(self, rng):
        x = np.tile(rng.standard_normal(64), (19, 1))
        assert np.array_equal(build_bipolar(_unipolar(x)).samples, np.zeros((20, 64)))

    def test_unit_impulse(self):
        x = np.zeros((19, 8))
        x[TEN_TWENTY.index("Fp1")] = 1.0
        out = build_bipolar(_unipolar(x))
        assert out.n_channels == 20
        assert np.all(out.samples[out.montage.index("Fp1-F7")] == 1)
        assert np.all(out.samples[out.montage.index("F7-T3")] == 0)
        assert out.montage.kind == "bipolar"

    def test_missing_electrode_named(self):
        labels = [l for l in TEN_TWENTY if l != "T5"]
        seg = EEGSegment(np.zeros((18, 4)), RATE, montage_from_labels(labels))
        with pytest.raises(UnknownElectrodeError) as exc:
            build_bipolar(seg)
        assert "T5" in str(exc.value)

    def test_order_matches_pairs(self, rng):
        seg = _unipolar(rng.standard_normal((19, 16)))
        out = build_bipolar(seg)
        for row, lab in zip(out.samples, out.montage.labels):
            a, b = lab.split("-")
            np.testing.assert_array_equal(row, seg.samples[seg.montage.index(a)] - seg.samples[seg.montage.index(b)])


class TestSegment:
    def test_counts(self):
        m = standard_montage("10-20")
        for seconds, count in [(12, 2), (5, 1), (4.9, 0)]:
            seg = EEGSegment(np.zeros((19, int(seconds * RATE))), RATE, m)
            out = segment(seg, 5)
            assert len(out) == count
            assert all(s.n_samples == 1280 for s in out)

    def test_contents(self, rng):
        x = rng.standard_normal((19, 3000))
        out = segment(EEGSegment(x, RATE, standard_montage("10-20")), 5)
        np.testing.assert_array_equal(out[1].samples, x[:, 1280:2560])


class TestZscore:
    def test_moments(self, rng):
        y = zscore_array(rng.standard_normal((5, 1280)) * 40 + 7)
        assert np.max(np.abs(y.mean(axis=1))) < 1e-9
        assert np.max(np.abs(y.std(axis=1) - 1)) < 1e-6

    def test_constant_channel(self):
        y = zscore_array(np.full((2, 50), 4.0))
        assert np.array_equal(y, np.zeros((2, 50)))

    def test_affine_invariance(self, rng):
        x = rng.standard_normal((3, 400))
        np.testing.assert_allclose(zscore_array(3.5 * x - 9), zscore_array(x), atol=1e-12)

    def test_idempotent(self, rng):
        y = zscore_array(rng.standard_normal((3, 400)) * 5)
        np.testing.assert_allclose(zscore_array(y), y, atol=1e-9)

    def test_segment_wrapper(self, rng):
        seg = EEGSegment(rng.standard_normal((19, 100)), RATE, standard_montage("10-20"), label=2)
        z = zscore(seg)
        assert z.label == 2 and z.montage is seg.montage


def test_pipeline(rng):
    rec = EEGSegment(rng.standard_normal((19, 500 * 11)) * 30, 500.0, standard_montage("10-20"))
    out = preprocess_recording(rec, notch_freq=60, bipolar=True)
    assert len(out) == 2
    assert all(s.samples.shape == (20, 1280) and s.rate == 256 and s.preprocessed for s in out)
    assert np.max(np.abs(out[0].samples.mean(axis=1))) < 1e-9
    again = preprocess_recording(rec, notch_freq=60, bipolar=True)
    assert again[1].samples.tobytes() == out[1].samples.tobytes()


def test_segment_validation():
    with pytest.raises(ValueError):
        EEGSegment(np.zeros((3, 10)), RATE, standard_montage("10-20"))
