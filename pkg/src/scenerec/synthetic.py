"""Generated audio for tests, demos and desk-scale experiments.

Everything here is deterministic given a seed. Corpora are returned as lazy
``SourceClip``/``LabeledClip`` objects, so sizing a corpus to thousands of
clips costs nothing until the clips are loaded.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .audio import Waveform
from .dataset import CLIP_SECONDS, SPLITS, SPLIT_RATIOS, SceneLabel, SourceClip, split_sizes, stable_key
from .training import LabeledClip

RATE = 16000

# environment corpus sizes of the reference dataset, plus its speech supply
REFERENCE_CORPUS_SIZES = {
    SceneLabel.IN_TRAFFIC: 1056,
    SceneLabel.IN_VEHICLE: 1168,
    SceneLabel.MUSIC: 2992,
    SceneLabel.QUIET_INDOORS: 1050,
    SceneLabel.REVERBERANT_ENVIRONMENT: 443,
    SceneLabel.WIND_TURBULENCE: 878,
    SceneLabel.COCKTAIL_PARTY: 1334,
}
REFERENCE_SPEECH_CLIPS = 4840


def _rng(*parts) -> np.random.Generator:
    return np.random.default_rng([stable_key(*parts)])


def tone(freq_hz: float, duration_s: float, amplitude: float = 0.5, sample_rate: int = RATE,
         phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return Waveform((amplitude * np.sin(2 * np.pi * freq_hz * t + phase)).astype(np.float32), sample_rate)


def white_noise(duration_s: float, amplitude: float = 0.1, seed: int = 0, sample_rate: int = RATE) -> Waveform:
    """Uniform noise in [-amplitude, amplitude]."""
    n = int(round(duration_s * sample_rate))
    return Waveform(_rng("white", seed).uniform(-amplitude, amplitude, n).astype(np.float32), sample_rate)


def band_noise(low_hz: float, high_hz: float, duration_s: float, rms_level: float = 0.05, seed: int = 0,
               sample_rate: int = RATE) -> Waveform:
    """Gaussian noise restricted to [low_hz, high_hz) by zeroing FFT bins, scaled to ``rms_level``."""
    if not 0 <= low_hz < high_hz <= sample_rate / 2:
        raise ValueError("band must satisfy 0 <= low < high <= Nyquist")
    n = int(round(duration_s * sample_rate))
    spec = np.fft.rfft(_rng("band", low_hz, high_hz, seed).standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < low_hz) | (f >= high_hz)] = 0.0
    x = np.fft.irfft(spec, n)
    level = np.sqrt(np.mean(x * x))
    if level > 0:
        x *= rms_level / level
    return Waveform(x.astype(np.float32), sample_rate)


def babble(duration_s: float, seed: int = 0, sample_rate: int = RATE) -> Waveform:
    """Speech-like stand-in: harmonic stacks with syllable-rate amplitude modulation."""
    rng = _rng("babble", seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(90, 220)
    x = sum(np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 9))
    envelope = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3, 6) * t + rng.uniform(0, 2 * np.pi)))
    x = x * envelope
    x *= 0.05 / np.sqrt(np.mean(x * x))
    return Waveform(x.astype(np.float32), sample_rate)


# ---------------------------------------------------------------- source corpora

_ENV_BANDS = {
    SceneLabel.IN_TRAFFIC: (60.0, 1500.0),
    SceneLabel.IN_VEHICLE: (30.0, 400.0),
    SceneLabel.MUSIC: (200.0, 5000.0),
    SceneLabel.QUIET_INDOORS: (100.0, 7000.0),
    SceneLabel.REVERBERANT_ENVIRONMENT: (300.0, 3000.0),
    SceneLabel.WIND_TURBULENCE: (20.0, 250.0),
    SceneLabel.COCKTAIL_PARTY: (150.0, 4000.0),
}


@lru_cache(maxsize=32)
def _bank(kind: str, duration_s: float, variants: int = 4) -> tuple[np.ndarray, ...]:
    if kind == "speech":
        return tuple(babble(duration_s, v).samples for v in range(variants))
    lo, hi = _ENV_BANDS[SceneLabel(kind)]
    return tuple(band_noise(lo, hi, duration_s, 0.05, v).samples for v in range(variants))


def _bank_clip(kind: str, index: int, duration_s: float) -> SourceClip:
    def load(kind=kind, index=index):
        bank = _bank(kind, duration_s)
        gain = 0.5 + (stable_key(kind, index) % 1000) / 1000.0
        return Waveform(bank[index % len(bank)] * np.float32(gain), RATE)
    return SourceClip(f"{kind}-{index // 110:03d}", float((index % 110) * duration_s), load)


def synthetic_corpora(sizes: Mapping[SceneLabel, int] | None = None, speech_clips: int = REFERENCE_SPEECH_CLIPS,
                      duration_s: float = CLIP_SECONDS
                      ) -> tuple[list[SourceClip], dict[SceneLabel, list[SourceClip]]]:
    """Speech and environment corpora of the requested sizes (reference sizes by default).

    Clips are scaled copies of a few pre-generated waveforms per corpus, so
    loading is cheap and every clip has non-zero energy.
    """
    sizes = REFERENCE_CORPUS_SIZES if sizes is None else sizes
    speech = [_bank_clip("speech", i, duration_s) for i in range(speech_clips)]
    envs = {label: [_bank_clip(label.value, i, duration_s) for i in range(n)] for label, n in sizes.items()}
    return speech, envs


# ---------------------------------------------------------------- labelled sets

def _fixed(w: Waveform) -> callable:
    return lambda: w


def tone_vs_noise_dataset(n_clips: int = 200, duration_s: float = 2.0, seed: int = 0) -> list[LabeledClip]:
    """Label 0: pure tones at random frequency and level; label 1: white noise at random level."""
    clips = []
    for i in range(n_clips):
        rng = _rng("tvn", seed, i)
        if i % 2 == 0:
            w = tone(rng.uniform(200, 4000), duration_s, rng.uniform(0.05, 0.5), phase=rng.uniform(0, 2 * np.pi))
            clips.append(LabeledClip(f"tone-{i:04d}", 0, _fixed(w)))
        else:
            w = white_noise(duration_s, rng.uniform(0.02, 0.3), seed=stable_key(seed, i))
            clips.append(LabeledClip(f"noise-{i:04d}", 1, _fixed(w)))
    return clips


def band_edges(class_count: int, low_hz: float = 125.0, high_hz: float = 7500.0) -> np.ndarray:
    """Geometrically spaced band edges, one band per class."""
    return np.geomspace(low_hz, high_hz, class_count + 1)


def band_noise_dataset(class_count: int = 14, clips_per_class: int = 20, duration_s: float = 2.0,
                       seed: int = 0) -> list[LabeledClip]:
    """One non-overlapping noise band per class, random level per clip."""
    edges = band_edges(class_count)
    clips = []
    for k in range(class_count):
        for j in range(clips_per_class):
            level = float(_rng("bnd-level", seed, k, j).uniform(0.01, 0.1))
            w = band_noise(edges[k], edges[k + 1], duration_s, level, seed=stable_key(seed, k, j))
            clips.append(LabeledClip(f"band{k:02d}-{j:04d}", k, _fixed(w)))
    return clips


def level_dataset(n_clips: int = 120, duration_s: float = 2.0, seed: int = 0,
                  quiet_dbfs: tuple[float, float] = (-50.0, -40.0),
                  loud_dbfs: tuple[float, float] = (-20.0, -10.0)) -> list[LabeledClip]:
    """Same white-noise texture at two level ranges; label 0 quiet, label 1 loud."""
    clips = []
    for i in range(n_clips):
        rng = _rng("lvl", seed, i)
        lo, hi = quiet_dbfs if i % 2 == 0 else loud_dbfs
        rms_level = 10 ** (rng.uniform(lo, hi) / 20)
        w = white_noise(duration_s, rms_level * np.sqrt(3), seed=stable_key("lvl", seed, i))
        clips.append(LabeledClip(f"{'quiet' if i % 2 == 0 else 'loud'}-{i:04d}", i % 2, _fixed(w)))
    return clips


def split_clips(clips: Sequence[LabeledClip], ratios: Sequence[float] = SPLIT_RATIOS,
                seed: int = 0) -> dict[str, list[LabeledClip]]:
    """Per-label seeded shuffle then largest-remainder apportionment."""
    out: dict[str, list[LabeledClip]] = {s: [] for s in SPLITS}
    for label in sorted({c.label for c in clips}):
        members = [c for c in clips if c.label == label]
        order = np.random.default_rng([seed, stable_key("split", label)]).permutation(len(members))
        start = 0
        for name, size in zip(SPLITS, split_sizes(len(members), ratios)):
            out[name] += [members[k] for k in order[start:start + size]]
            start += size
    return out
