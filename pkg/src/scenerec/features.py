"""Log-mel frontend: 960 ms windows at a 480 ms hop, each turned into a 96x64 patch."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from os import PathLike

import numpy as np

from .audio import CANONICAL_RATE, Waveform


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = CANONICAL_RATE
    window_ms: int = 960
    hop_ms: int = 480
    stft_window_samples: int = 400
    stft_hop_samples: int = 160
    fft_size: int = 512
    mel_bands: int = 64
    mel_low_hz: float = 125.0
    mel_high_hz: float = 7500.0
    log_offset: float = 0.001
    patch_frames: int = 96

    def __post_init__(self):
        if not 0 <= self.mel_low_hz < self.mel_high_hz < self.sample_rate_hz / 2:
            raise ValueError("mel band edges must satisfy 0 <= low < high < nyquist")
        if self.stft_window_samples > self.fft_size:
            raise ValueError("STFT window longer than FFT size")
        needed = (self.patch_frames - 1) * self.stft_hop_samples + self.stft_window_samples
        if needed > self.window_samples + self.stft_padding:
            raise ValueError("patch frames do not fit in the window")

    @property
    def window_samples(self) -> int:
        return self.sample_rate_hz * self.window_ms // 1000

    @property
    def hop_samples(self) -> int:
        return self.sample_rate_hz * self.hop_ms // 1000

    @property
    def stft_padding(self) -> int:
        # Right-pad by whole STFT hops until the window yields patch_frames frames.
        natural = (self.window_samples - self.stft_window_samples) // self.stft_hop_samples + 1
        return max(0, self.patch_frames - natural) * self.stft_hop_samples

    @property
    def spectrum_bins(self) -> int:
        return self.fft_size // 2 + 1


DEFAULT_CONFIG = FrontendConfig()


@dataclass(frozen=True)
class LogMelPatch:
    values: np.ndarray
    source_window_start_s: float = 0.0


def window_count(n_samples: int, cfg: FrontendConfig = DEFAULT_CONFIG) -> int:
    win, hop = cfg.window_samples, cfg.hop_samples
    return max(1, math.ceil((n_samples - win + hop) / hop))


def frame_windows(w: Waveform, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Cut a clip into overlapping fixed-length windows; shape (count, window_samples).

    The last window is zero-padded on the right.
    """
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"frontend expects {cfg.sample_rate_hz} Hz audio, got {w.sample_rate_hz} Hz")
    win, hop = cfg.window_samples, cfg.hop_samples
    count = window_count(len(w), cfg)
    total = (count - 1) * hop + win
    padded = np.zeros(total, dtype=np.float32)
    padded[:len(w)] = w.samples[:total]
    idx = np.arange(count)[:, None] * hop + np.arange(win)[None, :]
    return padded[idx]


def hertz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hertz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_band_edges(cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Band edges in mel: mel_bands + 2 points, evenly spaced."""
    lo, hi = hertz_to_mel(cfg.mel_low_hz), hertz_to_mel(cfg.mel_high_hz)
    return np.linspace(lo, hi, cfg.mel_bands + 2)


def mel_centres_hz(cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    return mel_to_hertz(mel_band_edges(cfg)[1:-1])


def mel_weights_at(freqs_hz, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Triangular filter responses at arbitrary frequencies; shape (len(freqs), bands)."""
    edges = mel_band_edges(cfg)
    lower, centre, upper = edges[:-2], edges[1:-1], edges[2:]
    if np.any(centre - lower <= 0) or np.any(upper - centre <= 0):
        raise ValueError("degenerate mel band edges")
    m = hertz_to_mel(freqs_hz)[:, None]
    rising = (m - lower) / (centre - lower)
    falling = (upper - m) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def build_mel_filterbank(cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Weight matrix of shape (fft_size // 2 + 1, mel_bands) for one-sided spectra."""
    freqs = np.linspace(0.0, cfg.sample_rate_hz / 2, cfg.spectrum_bins)
    weights = mel_weights_at(freqs, cfg)
    weights[0, :] = 0.0
    return weights


@lru_cache(maxsize=8)
def _frontend_tables(cfg: FrontendConfig) -> tuple[np.ndarray, np.ndarray]:
    n = cfg.stft_window_samples
    hann = (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)).astype(np.float32)
    bank = build_mel_filterbank(cfg).astype(np.float32)
    hann.flags.writeable = False
    bank.flags.writeable = False
    return hann, bank


def stft_magnitude(windows: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Magnitude spectra for a batch of windows; shape (count, patch_frames, bins)."""
    windows = np.asarray(windows, dtype=np.float32)
    hann, _ = _frontend_tables(cfg)
    pad = cfg.stft_padding
    x = np.pad(windows, ((0, 0), (0, pad))) if pad else windows
    idx = (np.arange(cfg.patch_frames)[:, None] * cfg.stft_hop_samples
           + np.arange(cfg.stft_window_samples)[None, :])
    frames = x[:, idx] * hann
    return np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=-1)).astype(np.float32)


def log_mel_batch(windows: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Log-mel patches for a batch of windows; shape (count, patch_frames, mel_bands)."""
    windows = np.asarray(windows)
    if windows.ndim != 2 or windows.shape[1] != cfg.window_samples:
        raise ValueError(f"expected windows of {cfg.window_samples} samples, got shape {windows.shape}")
    _, bank = _frontend_tables(cfg)
    mel = stft_magnitude(windows, cfg) @ bank
    return np.log(mel + np.float32(cfg.log_offset))


def log_mel_spectrogram(window: np.ndarray, cfg: FrontendConfig = DEFAULT_CONFIG,
                        start_s: float = 0.0) -> LogMelPatch:
    window = np.asarray(window)
    if window.shape != (cfg.window_samples,):
        raise ValueError(f"window must have exactly {cfg.window_samples} samples, got {window.shape}")
    return LogMelPatch(log_mel_batch(window[None, :], cfg)[0], start_s)


def clip_patches(w: Waveform, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    return log_mel_batch(frame_windows(w, cfg), cfg)


# Debug dump: u32 frames, u32 bands, then little-endian f32 values row-major.
def write_patch(patch: LogMelPatch | np.ndarray, path: str | PathLike) -> None:
    values = patch.values if isinstance(patch, LogMelPatch) else np.asarray(patch)
    frames, bands = values.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", frames, bands))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_patch(path: str | PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ValueError("patch file shorter than its header")
    frames, bands = struct.unpack("<II", raw[:8])
    if len(raw) != 8 + 4 * frames * bands:
        raise ValueError("patch file size does not match its header")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(frames, bands).copy()
