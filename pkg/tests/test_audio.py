import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal as sps

from conftest import raw_wav
from oracles import component_snr_db
from scenerec.audio import (ChannelCountError, MalformedWavError, NotRiffError, SampleRateError, SilentClipError,
                            UnsupportedEncodingError, Waveform, apply_gain, fourier_resample, mix_at_snr,
                            mix_components, quantise, read_wav, resampled_length, rms, wav_info, write_wav)


def words(path):
    with wave.open(str(path)) as fh:
        return np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")


class TestWaveform:
    def test_rejects_stereo_shape(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros((10, 2)))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Waveform(np.array([0.0, np.nan]))

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros(4), 0)

    def test_is_float32_and_read_only(self):
        w = Waveform(np.arange(4.0))
        assert w.samples.dtype == np.float32
        with pytest.raises(ValueError):
            w.samples[0] = 1.0

    def test_duration(self):
        assert Waveform(np.zeros(8000)).duration_s == 0.5


class TestCodec:
    def test_dequantise_known_words(self, tmp_path):
        path = raw_wav(tmp_path / "a.wav", np.array([0, 16384, -32768], "<i2").tobytes())
        np.testing.assert_array_equal(read_wav(path).samples, [0.0, 0.5, -1.0])

    def test_full_scale_and_zero(self, tmp_path):
        write_wav(Waveform(np.array([1.0, 0.0, -1.0])), tmp_path / "a.wav")
        np.testing.assert_array_equal(words(tmp_path / "a.wav"), [32767, 0, -32768])

    def test_clamp_counts(self, tmp_path):
        clipped = write_wav(Waveform(np.array([1.2, 0.5, -3.0])), tmp_path / "a.wav")
        assert clipped == 2
        assert words(tmp_path / "a.wav")[0] == 32767
        assert words(tmp_path / "a.wav")[2] == -32768

    def test_round_half_away_from_zero(self):
        w, _ = quantise(np.array([0.5, -0.5, 1.5, -1.5, 2.5]) / 32768)
        np.testing.assert_array_equal(w, [1, -1, 2, -2, 3])

    def test_every_pcm_word_round_trips(self, tmp_path):
        pcm = np.arange(-32768, 32768, dtype="<i2")
        path = raw_wav(tmp_path / "all.wav", pcm.tobytes())
        write_wav(read_wav(path), tmp_path / "again.wav")
        np.testing.assert_array_equal(words(tmp_path / "again.wav"), pcm)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=200))
    def test_write_read_write_is_stable(self, tmp_path_factory, values):
        d = tmp_path_factory.mktemp("rt")
        write_wav(Waveform(np.array(values)), d / "a.wav")
        first = words(d / "a.wav")
        write_wav(read_wav(d / "a.wav"), d / "b.wav")
        np.testing.assert_array_equal(words(d / "b.wav"), first)

    def test_rate_preserved_when_unchecked(self, tmp_path):
        write_wav(Waveform(np.zeros(10), 8000), tmp_path / "a.wav")
        assert read_wav(tmp_path / "a.wav", expected_rate=None).sample_rate_hz == 8000
        with pytest.raises(SampleRateError):
            read_wav(tmp_path / "a.wav")

    def test_partial_read(self, tmp_path):
        write_wav(Waveform(np.arange(10) / 100), tmp_path / "a.wav")
        w = read_wav(tmp_path / "a.wav", offset=3, frames=4)
        np.testing.assert_allclose(w.samples, np.arange(3, 7) / 100, atol=1 / 32768)
        assert wav_info(tmp_path / "a.wav") == (16000, 10)

    def test_stereo_rejected(self, tmp_path):
        with pytest.raises(ChannelCountError):
            read_wav(raw_wav(tmp_path / "s.wav", b"\0" * 8, channels=2))

    def test_float_rejected(self, tmp_path):
        with pytest.raises(UnsupportedEncodingError):
            read_wav(raw_wav(tmp_path / "f.wav", b"\0" * 8, fmt_code=3, bits=32))

    def test_8bit_rejected(self, tmp_path):
        with pytest.raises(UnsupportedEncodingError):
            read_wav(raw_wav(tmp_path / "b.wav", b"\0" * 8, bits=8))

    def test_not_riff(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"OggS" + b"\0" * 40)
        with pytest.raises(NotRiffError):
            read_wav(tmp_path / "x.wav")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_odd_data_length(self, tmp_path):
        with pytest.raises(MalformedWavError):
            read_wav(raw_wav(tmp_path / "o.wav", b"\0" * 3))

    def test_truncated_data(self, tmp_path):
        with pytest.raises(MalformedWavError):
            read_wav(raw_wav(tmp_path / "t.wav", b"\0" * 4, data_size=100))

    def test_skips_unknown_chunks(self, tmp_path):
        extra = b"LIST" + struct.pack("<I", 3) + b"abc\0"
        path = raw_wav(tmp_path / "l.wav", np.array([5], "<i2").tobytes(), extra_chunks=extra)
        assert read_wav(path).samples[0] == 5 / 32768

    def test_extensible_pcm_accepted(self, tmp_path):
        guid = bytes.fromhex("0100000000001000800000aa00389b71")
        body = struct.pack("<HHIIHHHHI", 0xFFFE, 1, 16000, 32000, 2, 16, 22, 16, 4) + guid
        path = raw_wav(tmp_path / "e.wav", np.array([7], "<i2").tobytes(), fmt_body=body)
        assert read_wav(path).samples[0] == 7 / 32768


class TestLevels:
    def test_rms_cases(self):
        assert rms(Waveform(np.full(100, 0.5))) == pytest.approx(0.5)
        t = np.arange(16000) / 16000
        assert rms(Waveform(np.sin(2 * np.pi * 100 * t))) == pytest.approx(1 / math.sqrt(2), abs=1e-4)
        assert rms(Waveform(np.zeros(10))) == 0.0

    def test_rms_empty(self):
        with pytest.raises(ValueError):
            rms(Waveform(np.zeros(0)))

    def test_rms_scale_equivariant(self, rng):
        w = Waveform(rng.uniform(-0.3, 0.3, 1000))
        for c in (-3.0, 0.25, 2.0):
            assert rms(w.with_samples(w.samples.astype(np.float64) * c)) == pytest.approx(abs(c) * rms(w), rel=1e-6)

    def test_gain_identity_and_doubling(self, rng):
        w = Waveform(rng.uniform(-0.3, 0.3, 1000))
        np.testing.assert_array_equal(apply_gain(w, 0.0).samples, w.samples)
        np.testing.assert_allclose(apply_gain(w, 20 * math.log10(2)).samples, 2 * w.samples, rtol=1e-6)

    def test_gain_rms_formula(self, rng):
        w = Waveform(rng.uniform(-0.3, 0.3, 4000))
        for g in range(-20, 21, 5):
            assert rms(apply_gain(w, g)) == pytest.approx(rms(w) * 10 ** (g / 20), rel=1e-6)

    def test_gain_inverse(self, rng):
        w = Waveform(rng.uniform(-0.3, 0.3, 4000))
        back = apply_gain(apply_gain(w, 7.5), -7.5)
        assert rms(back.with_samples(back.samples - w.samples)) <= 1e-6 * rms(w)

    def test_gain_must_be_finite(self):
        with pytest.raises(ValueError):
            apply_gain(Waveform(np.zeros(3)), float("inf"))


class TestMixing:
    def test_equal_rms_zero_snr_is_plain_sum(self, rng):
        s = rng.choice([-0.2, 0.2], 1000)
        n = rng.choice([-0.2, 0.2], 1000)
        out = mix_at_snr(Waveform(s), Waveform(n), 0.0)
        np.testing.assert_array_equal(out.samples, (s + n).astype(np.float32))

    @pytest.mark.parametrize("snr", [-10, -5, 0, 5, 10])
    def test_component_snr(self, rng, snr):
        s = Waveform(rng.normal(0, 0.05, 3000))
        n = Waveform(rng.uniform(-0.5, 0.5, 3000))
        cs, cn = mix_components(s, n, snr)
        assert component_snr_db(cs, cn) == pytest.approx(snr, abs=0.01)

    def test_quiet_signal_boosted_first(self, rng):
        base = rng.choice([-1.0, 1.0], 2000)
        s = Waveform(0.1 * base)
        n = Waveform(0.4 * rng.choice([-1.0, 1.0], 2000))
        cs, cn = mix_components(s, n, 0.0)
        np.testing.assert_allclose(cs, 4 * s.samples.astype(np.float64), rtol=1e-6)
        np.testing.assert_array_equal(cn, n.samples.astype(np.float64))

    def test_quiet_noise_boosted(self, rng):
        s = Waveform(0.4 * rng.choice([-1.0, 1.0], 2000))
        n = Waveform(0.1 * rng.choice([-1.0, 1.0], 2000))
        _, cn = mix_components(s, n, 0.0)
        assert math.sqrt(np.mean(cn ** 2)) == pytest.approx(0.4, rel=1e-6)

    def test_output_not_clamped(self):
        out = mix_at_snr(Waveform(np.full(10, 0.9)), Waveform(np.full(10, 0.9)), 0.0)
        assert out.samples.max() > 1.0

    def test_silence_and_mismatch(self):
        with pytest.raises(SilentClipError):
            mix_at_snr(Waveform(np.zeros(10)), Waveform(np.ones(10)), 0)
        with pytest.raises(SilentClipError):
            mix_at_snr(Waveform(np.ones(10)), Waveform(np.zeros(10)), 0)
        with pytest.raises(ValueError):
            mix_at_snr(Waveform(np.ones(10)), Waveform(np.ones(11)), 0)


class TestResample:
    def test_identity(self, rng):
        x = rng.uniform(-1, 1, 1001)
        np.testing.assert_allclose(fourier_resample(Waveform(x), 1.0).samples, x, atol=1e-5)

    def test_tone_shift(self):
        t = np.arange(16000) / 16000
        y = fourier_resample(Waveform(np.sin(2 * np.pi * 1000 * t)), 1.1).samples
        assert len(y) == 17600
        peak_hz = np.argmax(np.abs(np.fft.rfft(y))) * 16000 / len(y)
        assert abs(peak_hz - 1000 / 1.1) <= 16000 / len(y)

    def test_constant_preserved(self):
        y = fourier_resample(Waveform(np.full(1000, 0.3)), 0.9).samples
        assert len(y) == 900
        np.testing.assert_allclose(y, 0.3, atol=1e-4)

    def test_length_formula_randomised(self, rng):
        for _ in range(1000):
            n = int(rng.integers(1, 400))
            f = float(rng.uniform(0.5, 2.0))
            assert len(fourier_resample(Waveform(np.ones(n)), f)) == math.floor(n * f + 0.5)

    @pytest.mark.parametrize("n,m", [(100, 110), (101, 111), (100, 90), (101, 91), (64, 128), (128, 64), (99, 50)])
    def test_matches_scipy(self, rng, n, m):
        x = rng.uniform(-1, 1, n)
        factor = m / n
        assert resampled_length(n, factor) == m
        np.testing.assert_allclose(fourier_resample(Waveform(x), factor).samples,
                                   sps.resample(x.astype(np.float32).astype(np.float64), m), atol=1e-5)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            fourier_resample(Waveform(np.ones(10)), 2.5)
        with pytest.raises(ValueError):
            fourier_resample(Waveform(np.zeros(0)), 1.0)
