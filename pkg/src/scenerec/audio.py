"""Mono PCM16 audio I/O and the DSP primitives the rest of the pipeline uses.

Samples live in memory as float32 in [-1, 1]; on disk they are 16-bit PCM.
Quantisation is symmetric with dequantisation (scale 32768 both ways) so a
PCM word survives any number of read/write cycles unchanged.
"""
from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

CANONICAL_RATE = 16000
PCM_SCALE = 32768.0
SILENCE_RMS = 1e-8

_PCM_FORMAT = 0x0001
_EXTENSIBLE_FORMAT = 0xFFFE
_PCM_SUBFORMAT = bytes.fromhex("0100000000001000800000aa00389b71")


class WavError(ValueError):
    """Base class for WAV files this package refuses to read."""


class NotRiffError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class ChannelCountError(WavError):
    pass


class SampleRateError(WavError):
    pass


class MalformedWavError(WavError):
    pass


class SilentClipError(ValueError):
    """Raised when a clip's RMS is below the digital-silence threshold."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """A single-channel buffer of float32 samples at a fixed rate."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D (mono), got shape {samples.shape}")
        samples = samples.astype(np.float32, copy=True)
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains NaN or Inf samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz)


def _parse_header(fh) -> tuple[int, int, int]:
    """Walk the RIFF chunks; return (sample rate, data offset, data byte length)."""
    riff = fh.read(12)
    if len(riff) < 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
        raise NotRiffError("not a RIFF/WAVE file")
    fmt = None
    while True:
        head = fh.read(8)
        if len(head) < 8:
            raise MalformedWavError("no data chunk found")
        cid, size = head[:4], struct.unpack("<I", head[4:])[0]
        if cid == b"fmt ":
            body = fh.read(size)
            if len(body) < 16:
                raise MalformedWavError("fmt chunk too short")
            code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", body[:16])
            if code == _EXTENSIBLE_FORMAT:
                if len(body) < 40 or body[24:40] != _PCM_SUBFORMAT:
                    raise UnsupportedEncodingError("extensible WAV with non-PCM subformat")
            elif code != _PCM_FORMAT:
                raise UnsupportedEncodingError(f"format code {code:#06x} is not integer PCM")
            if bits != 16:
                raise UnsupportedEncodingError(f"{bits}-bit samples; only 16-bit PCM is supported")
            if channels != 1:
                raise ChannelCountError(f"{channels} channels; only mono is supported")
            fmt = rate
            if size % 2:
                fh.read(1)
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError("data chunk precedes fmt chunk")
            if size % 2:
                raise MalformedWavError(f"odd data chunk length {size}")
            start = fh.tell()
            end = fh.seek(0, 2)
            if start + size > end:
                raise MalformedWavError(
                    f"data chunk declares {size} bytes but only {end - start} present")
            return fmt, start, size
        else:
            fh.seek(size + (size % 2), 1)


def wav_info(path: str | PathLike) -> tuple[int, int]:
    """Return (sample rate, frame count) without reading the samples."""
    with open(path, "rb") as fh:
        rate, _, size = _parse_header(fh)
    return rate, size // 2


def read_wav(path: str | PathLike, expected_rate: int | None = CANONICAL_RATE,
             offset: int = 0, frames: int | None = None) -> Waveform:
    """Read a mono PCM16 WAV file, optionally only ``frames`` samples from ``offset``.

    Files at a rate other than ``expected_rate`` are rejected; pass
    ``expected_rate=None`` to accept any rate.
    """
    with open(path, "rb") as fh:
        rate, start, size = _parse_header(fh)
        if expected_rate is not None and rate != expected_rate:
            raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
        total = size // 2
        if offset < 0 or offset > total:
            raise ValueError(f"offset {offset} outside [0, {total}]")
        count = total - offset if frames is None else min(frames, total - offset)
        fh.seek(start + 2 * offset)
        raw = fh.read(2 * count)
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float32) / np.float32(PCM_SCALE), rate)


def quantise(samples: np.ndarray) -> tuple[np.ndarray, int]:
    """Float samples to PCM16 words, rounding half away from zero.

    Returns the words and the number of samples outside [-1, 1] that were
    clamped.
    """
    x = np.asarray(samples, dtype=np.float64)
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    scaled = x * PCM_SCALE
    words = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(words, -32768, 32767).astype("<i2"), clipped


def write_wav(w: Waveform, path: str | PathLike) -> int:
    """Write ``w`` as mono PCM16; return the count of clamped samples."""
    words, clipped = quantise(w.samples)
    path = Path(path)
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate_hz)
        out.writeframes(words.tobytes())
    return clipped


def rms(w: Waveform) -> float:
    if len(w) == 0:
        raise ValueError("RMS of an empty waveform")
    x = w.samples.astype(np.float64)
    return float(math.sqrt(np.dot(x, x) / x.size))


def db_to_amplitude(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def apply_gain(w: Waveform, gain_db: float) -> Waveform:
    if not math.isfinite(gain_db):
        raise ValueError(f"gain must be finite, got {gain_db}")
    return w.with_samples(w.samples.astype(np.float64) * db_to_amplitude(gain_db))


def mix_components(signal: Waveform, noise: Waveform, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Level-match and SNR-scale a signal/noise pair; return both float64 components.

    The quieter input is first boosted to the louder input's RMS, then the
    signal alone is scaled by the requested SNR.
    """
    if len(signal) != len(noise):
        raise ValueError(f"length mismatch: signal {len(signal)} vs noise {len(noise)}")
    if signal.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("sample rate mismatch between signal and noise")
    rs, rn = rms(signal), rms(noise)
    if rs < SILENCE_RMS:
        raise SilentClipError(f"signal RMS {rs:.3g} is digital silence")
    if rn < SILENCE_RMS:
        raise SilentClipError(f"noise RMS {rn:.3g} is digital silence")
    s = signal.samples.astype(np.float64)
    n = noise.samples.astype(np.float64)
    if rs < rn:
        s = s * (rn / rs)
    elif rn < rs:
        n = n * (rs / rn)
    if snr_db != 0:
        s = s * db_to_amplitude(snr_db)
    return s, n


def mix_at_snr(signal: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Mix speech (signal) into an environment (noise) at ``snr_db``.

    The result is not clamped; values beyond [-1, 1] are only saturated on
    write.
    """
    s, n = mix_components(signal, noise, snr_db)
    return signal.with_samples(s + n)


def resampled_length(n: int, factor: float) -> int:
    return int(math.floor(n * factor + 0.5))


def fourier_resample(w: Waveform, factor: float) -> Waveform:
    """Stretch (factor > 1) or shrink a clip in time by DFT truncation/zero-padding.

    The sample rate is kept, so playback duration scales by ``factor`` and
    pitch by ``1 / factor``.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValueError(f"stretch factor {factor} outside [0.5, 2.0]")
    n = len(w)
    if n == 0:
        raise ValueError("cannot resample an empty waveform")
    m = resampled_length(n, factor)
    if m == n:
        return w.with_samples(w.samples)
    spec = np.fft.fft(w.samples.astype(np.float64))
    out = np.zeros(m, dtype=np.complex128)
    keep = min(n, m)
    half = keep // 2
    pos = (keep + 1) // 2
    out[:pos] = spec[:pos]
    out[m - (keep - pos):] = spec[n - (keep - pos):]
    if keep % 2 == 0:
        # The Nyquist bin of the shorter length is shared by both halves.
        if m > n:
            nyq = spec[half]
            out[half] = nyq / 2
            out[m - half] = nyq / 2
        else:
            out[m - half] = spec[half] + spec[n - half]
    y = np.fft.ifft(out).real * (m / n)
    return w.with_samples(y)
