"""Dataset construction: level standardisation, speech/environment mixing,
per-label splitting, a provenance manifest, and training-time augmentation.

All ordering decisions are deterministic. Speech and environment clips are
paired sequentially over sorted lists, and the only randomness (split
shuffles, augmentation) comes from generators seeded by explicit keys.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from fractions import Fraction
from os import PathLike
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .audio import (SILENCE_RMS, Waveform, apply_gain, fourier_resample, mix_at_snr, rms,
                    write_wav)

log = logging.getLogger(__name__)


class SceneLabel(str, Enum):
    COCKTAIL_PARTY = "cocktail_party"
    INTERFERING_SPEAKERS = "interfering_speakers"
    IN_TRAFFIC = "in_traffic"
    IN_VEHICLE = "in_vehicle"
    MUSIC = "music"
    QUIET_INDOORS = "quiet_indoors"
    REVERBERANT_ENVIRONMENT = "reverberant_environment"
    WIND_TURBULENCE = "wind_turbulence"
    SPEECH_IN_TRAFFIC = "speech_in_traffic"
    SPEECH_IN_VEHICLE = "speech_in_vehicle"
    SPEECH_IN_MUSIC = "speech_in_music"
    SPEECH_IN_QUIET_INDOORS = "speech_in_quiet_indoors"
    SPEECH_IN_REVERBERANT_ENV = "speech_in_reverberant_env"
    SPEECH_IN_WIND_TURBULENCE = "speech_in_wind_turbulence"

    def __str__(self) -> str:
        return self.value

    @property
    def index(self) -> int:
        return LABELS.index(self)

    @property
    def is_speech_mix(self) -> bool:
        return self.value.startswith("speech_in_")


LABELS: tuple[SceneLabel, ...] = tuple(SceneLabel)

SPEECH_PAIRS: dict[SceneLabel, SceneLabel] = {
    SceneLabel.IN_TRAFFIC: SceneLabel.SPEECH_IN_TRAFFIC,
    SceneLabel.IN_VEHICLE: SceneLabel.SPEECH_IN_VEHICLE,
    SceneLabel.MUSIC: SceneLabel.SPEECH_IN_MUSIC,
    SceneLabel.QUIET_INDOORS: SceneLabel.SPEECH_IN_QUIET_INDOORS,
    SceneLabel.REVERBERANT_ENVIRONMENT: SceneLabel.SPEECH_IN_REVERBERANT_ENV,
    SceneLabel.WIND_TURBULENCE: SceneLabel.SPEECH_IN_WIND_TURBULENCE,
}

SNR_CYCLE_DB = (-10.0, -5.0, 0.0, 5.0, 10.0)
SPLITS = ("train", "validation", "test")
SPLIT_RATIOS = (0.70, 0.10, 0.20)
CLIP_SECONDS = 10.0
SPEECH_SKIP_SECONDS = 1.0
SPEECH_CLIPS_PER_RECORDING = 110
MANIFEST_FORMAT = "scenerec-manifest/1"


class DatasetError(ValueError):
    pass


class InsufficientSpeechError(DatasetError):
    pass


# ---------------------------------------------------------------- standardisation

def compute_corpus_rms(clips: Iterable[Waveform]) -> float:
    """RMS pooled over every sample of every clip (not a mean of per-clip RMS)."""
    total, count = 0.0, 0
    for w in clips:
        x = w.samples.astype(np.float64)
        total += float(np.dot(x, x))
        count += x.size
    if count == 0:
        raise DatasetError("cannot compute the RMS of an empty corpus")
    return math.sqrt(total / count)


def standardisation_gain(own_rms: float, reference_rms: float) -> float:
    if own_rms <= 0:
        raise DatasetError(f"corpus RMS must be positive, got {own_rms}")
    return reference_rms / own_rms


def standardise_corpus(clips: Sequence[Waveform], own_rms: float, reference_rms: float) -> list[Waveform]:
    """Scale every clip by reference_rms / own_rms."""
    g = standardisation_gain(own_rms, reference_rms)
    return [w.with_samples(w.samples.astype(np.float64) * g) for w in clips]


# ---------------------------------------------------------------- speech slicing

def speech_slice_offsets(n_samples: int, sample_rate_hz: int,
                         max_clips: int = SPEECH_CLIPS_PER_RECORDING) -> list[int]:
    """Start offsets (in samples) of the 10 s clips cut from a conversation recording."""
    skip = int(SPEECH_SKIP_SECONDS * sample_rate_hz)
    clip = int(CLIP_SECONDS * sample_rate_hz)
    if n_samples < skip:
        raise DatasetError(f"recording of {n_samples} samples is shorter than {SPEECH_SKIP_SECONDS} s")
    count = min(max_clips, (n_samples - skip) // clip)
    return [skip + i * clip for i in range(count)]


def slice_speech_recording(w: Waveform, max_clips: int = SPEECH_CLIPS_PER_RECORDING) -> list[Waveform]:
    """Drop the first second (start beep), then cut consecutive 10 s clips."""
    clip = int(CLIP_SECONDS * w.sample_rate_hz)
    return [w.with_samples(w.samples[o:o + clip])
            for o in speech_slice_offsets(len(w), w.sample_rate_hz, max_clips)]


# ---------------------------------------------------------------- manifest types

@dataclass(frozen=True)
class SourceClip:
    """A lazily loaded source clip with its provenance key."""

    source_id: str
    offset_s: float = 0.0
    load: Callable[[], Waveform] = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[str, float]:
        return (self.source_id, self.offset_s)


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    path: str
    label: SceneLabel
    split: str | None = None
    duration_s: float = CLIP_SECONDS
    snr_db: float | None = None
    speech_source: tuple[str, float] | None = None
    environment_source: str | None = None

    def __post_init__(self):
        label = SceneLabel(self.label)
        object.__setattr__(self, "label", label)
        if self.speech_source is not None:
            object.__setattr__(self, "speech_source", (str(self.speech_source[0]), float(self.speech_source[1])))
        mixed = label.is_speech_mix
        if mixed != (self.snr_db is not None):
            raise DatasetError(f"{self.clip_id}: snr_db must be set iff the label is a speech mix")
        if label is not SceneLabel.INTERFERING_SPEAKERS and mixed != (self.speech_source is not None):
            raise DatasetError(f"{self.clip_id}: speech_source must be set iff the label is a speech mix")
        if (label is SceneLabel.INTERFERING_SPEAKERS) == (self.environment_source is not None):
            raise DatasetError(f"{self.clip_id}: environment_source must be set iff label is not interfering_speakers")
        if self.split is not None and self.split not in SPLITS:
            raise DatasetError(f"{self.clip_id}: unknown split {self.split!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = self.label.value
        d["speech_source"] = list(self.speech_source) if self.speech_source else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClipRecord":
        d = dict(d)
        if d.get("speech_source") is not None:
            d["speech_source"] = tuple(d["speech_source"])
        return cls(**d)


@dataclass(frozen=True)
class DatasetManifest:
    clips: tuple[ClipRecord, ...]
    reference_rms: float = 1.0
    per_corpus_rms: dict = field(default_factory=dict)
    seed: int = 0
    split_ratios: tuple[float, float, float] = SPLIT_RATIOS
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        object.__setattr__(self, "notes", tuple(self.notes))
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate clip ids in manifest")
        if len(self.split_ratios) != 3 or not math.isclose(sum(self.split_ratios), 1.0, abs_tol=1e-9):
            raise DatasetError(f"split ratios {self.split_ratios} must be three values summing to 1")

    def label_counts(self) -> dict[str, int]:
        counts = {l.value: 0 for l in LABELS}
        for c in self.clips:
            counts[c.label.value] += 1
        return counts

    def split_counts(self) -> dict[str, dict[str, int]]:
        table = {l.value: {s: 0 for s in SPLITS} for l in LABELS}
        for c in self.clips:
            if c.split is not None:
                table[c.label.value][c.split] += 1
        return table

    def select(self, split: str) -> list[ClipRecord]:
        return [c for c in self.clips if c.split == split]

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "seed": self.seed,
            "reference_rms": self.reference_rms,
            "per_corpus_rms": dict(sorted(self.per_corpus_rms.items())),
            "split_ratios": list(self.split_ratios),
            "notes": list(self.notes),
            "clips": [c.to_dict() for c in self.clips],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise DatasetError(f"unrecognised manifest format {doc.get('format')!r}")
        return cls(clips=tuple(ClipRecord.from_dict(c) for c in doc["clips"]),
                   reference_rms=doc["reference_rms"], per_corpus_rms=doc["per_corpus_rms"],
                   seed=doc["seed"], split_ratios=tuple(doc["split_ratios"]), notes=tuple(doc["notes"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["clip_id", "path", "label", "split", "snr_db"])
        for c in self.clips:
            writer.writerow([c.clip_id, c.path, c.label.value, c.split or "",
                             "" if c.snr_db is None else c.snr_db])
        return buf.getvalue()

    def save(self, root: str | PathLike) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.json").write_text(self.to_json())
        (root / "manifest.csv").write_text(self.to_csv())

    @classmethod
    def load(cls, root: str | PathLike) -> "DatasetManifest":
        path = Path(root)
        if path.is_dir():
            path = path / "manifest.json"
        return cls.from_json(path.read_text())


# ---------------------------------------------------------------- mixing

@dataclass(frozen=True)
class _Job:
    record: ClipRecord
    environment: SourceClip | None
    speech: SourceClip | None


def _is_silent(clip: SourceClip) -> bool:
    w = clip.load()
    return len(w) == 0 or rms(w) < SILENCE_RMS


def _clip_path(label: SceneLabel, clip_id: str) -> str:
    return f"clips/{label.value}/{clip_id}.wav"


def plan_mixed_dataset(speech: Sequence[SourceClip], environments: Mapping[SceneLabel, Sequence[SourceClip]],
                       interfering_quota: int | None = None, check_silence: bool = True
                       ) -> tuple[list[_Job], list[str]]:
    """Decide every output clip and its sources without rendering audio."""
    notes: list[str] = []
    speech_sorted = sorted(speech, key=lambda c: c.key)
    if len({c.key for c in speech_sorted}) != len(speech_sorted):
        raise DatasetError("duplicate (source, offset) among speech clips")
    usable_speech = []
    for c in speech_sorted:
        if check_silence and _is_silent(c):
            notes.append(f"skipped silent speech clip {c.source_id}@{c.offset_s}")
            log.warning("skipping silent speech clip %s@%s", c.source_id, c.offset_s)
        else:
            usable_speech.append(c)

    env_plan: dict[SceneLabel, list[SourceClip]] = {}
    for label in LABELS:
        if label not in environments:
            continue
        if label.is_speech_mix or label is SceneLabel.INTERFERING_SPEAKERS:
            raise DatasetError(f"{label.value} cannot be supplied as an environment corpus")
        kept = []
        for c in sorted(environments[label], key=lambda c: c.key):
            if check_silence and _is_silent(c):
                notes.append(f"skipped silent {label.value} clip {c.source_id}@{c.offset_s}")
                log.warning("skipping silent %s clip %s", label.value, c.source_id)
            else:
                kept.append(c)
        env_plan[label] = kept

    needed = sum(len(v) // 2 for k, v in env_plan.items() if k in SPEECH_PAIRS)
    if needed > len(usable_speech):
        raise InsufficientSpeechError(f"mixing needs {needed} speech clips, only {len(usable_speech)} available")
    leftover = len(usable_speech) - needed
    quota = leftover if interfering_quota is None else interfering_quota
    if quota > leftover:
        raise InsufficientSpeechError(
            f"interfering_speakers quota {quota} exceeds the {leftover} speech clips left after mixing")

    jobs: list[_Job] = []
    next_speech = 0
    for label, clips in env_plan.items():
        pair = SPEECH_PAIRS.get(label)
        n_plain = len(clips) - len(clips) // 2 if pair else len(clips)
        for i, c in enumerate(clips[:n_plain]):
            cid = f"{label.value}-{i:05d}"
            jobs.append(_Job(ClipRecord(cid, _clip_path(label, cid), label, environment_source=c.source_id), c, None))
        if pair is None:
            continue
        for i, c in enumerate(clips[n_plain:]):
            s = usable_speech[next_speech]
            next_speech += 1
            cid = f"{pair.value}-{i:05d}"
            rec = ClipRecord(cid, _clip_path(pair, cid), pair, snr_db=SNR_CYCLE_DB[i % len(SNR_CYCLE_DB)],
                             speech_source=s.key, environment_source=c.source_id)
            jobs.append(_Job(rec, c, s))
    label = SceneLabel.INTERFERING_SPEAKERS
    for i, s in enumerate(usable_speech[next_speech:next_speech + quota]):
        cid = f"{label.value}-{i:05d}"
        jobs.append(_Job(ClipRecord(cid, _clip_path(label, cid), label, speech_source=s.key), None, s))
    return jobs, notes


def _render(job: _Job) -> Waveform:
    rec = job.record
    if rec.snr_db is not None:
        return mix_at_snr(job.speech.load(), job.environment.load(), rec.snr_db)
    return (job.environment or job.speech).load()


def build_mixed_dataset(speech: Sequence[SourceClip], environments: Mapping[SceneLabel, Sequence[SourceClip]],
                        out_dir: str | PathLike | None = None, *, interfering_quota: int | None = None,
                        seed: int = 0, reference_rms: float = 1.0, per_corpus_rms: Mapping | None = None,
                        check_silence: bool = True) -> DatasetManifest:
    """Mix half of every pairable environment corpus with speech and catalogue the result.

    Environment clips are sorted by (source id, offset). The first half,
    rounded up, stays unmixed; the rest is mixed with successive distinct
    speech clips at SNRs cycling through -10, -5, 0, 5, 10 dB. Speech clips
    left over go to interfering_speakers unmodified. With ``out_dir`` the
    clips are rendered to ``clips/<label>/<clip_id>.wav``; without it only
    the manifest is produced. Inputs are expected to be level-standardised.
    """
    jobs, notes = plan_mixed_dataset(speech, environments, interfering_quota, check_silence)
    records = []
    clipped_total = 0
    if out_dir is not None:
        out = Path(out_dir)
        for label in {j.record.label for j in jobs}:
            (out / "clips" / label.value).mkdir(parents=True, exist_ok=True)
        for job in jobs:
            w = _render(job)
            clipped_total += write_wav(w, out / job.record.path)
            records.append(replace(job.record, duration_s=w.duration_s))
        if clipped_total:
            notes.append(f"{clipped_total} samples clamped to full scale on write")
            log.warning("%d samples clamped to full scale while writing clips", clipped_total)
    else:
        records = [j.record for j in jobs]
    return DatasetManifest(tuple(records), reference_rms=reference_rms,
                           per_corpus_rms=dict(per_corpus_rms or {}), seed=seed, notes=tuple(notes))


# ---------------------------------------------------------------- splitting

def apportion(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; remainder ties go to the earlier split.

    Ratios are converted via their decimal string so 0.7 is exactly 7/10.
    """
    exact = [Fraction(str(r)) for r in ratios]
    if sum(exact) != 1:
        raise DatasetError(f"split ratios {tuple(ratios)} do not sum to 1")
    quotas = [n * r for r in exact]
    sizes = [math.floor(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> list[int]:
    """Largest-remainder sizes, then any empty split takes one clip from the largest.

    The top-up only matters for very small labels (fewer than 10 clips at
    the default ratios); larger labels keep the plain apportionment.
    """
    sizes = apportion(n, ratios)
    if n >= len(sizes):
        for i in range(len(sizes)):
            if sizes[i] == 0:
                sizes[int(np.argmax(sizes))] -= 1
                sizes[i] = 1
    return sizes


def stable_key(*parts) -> int:
    """A 64-bit integer derived from the parts' string forms, stable across runs."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def split_dataset(manifest: DatasetManifest, ratios: Sequence[float] = SPLIT_RATIOS,
                  seed: int | None = None) -> DatasetManifest:
    """Assign train/validation/test per label after a seeded shuffle."""
    seed = manifest.seed if seed is None else seed
    by_label: dict[SceneLabel, list[int]] = {}
    for i, c in enumerate(manifest.clips):
        by_label.setdefault(c.label, []).append(i)
    splits: list[str | None] = [None] * len(manifest.clips)
    for label, idx in by_label.items():
        if len(idx) < len(SPLITS):
            raise DatasetError(f"{label.value} has {len(idx)} clips; need at least {len(SPLITS)} to split")
        rng = np.random.default_rng([seed & (2**64 - 1), stable_key(label.value)])
        order = [idx[k] for k in rng.permutation(len(idx))]
        start = 0
        for name, size in zip(SPLITS, split_sizes(len(idx), ratios)):
            for k in order[start:start + size]:
                splits[k] = name
            start += size
    clips = tuple(replace(c, split=s) for c, s in zip(manifest.clips, splits))
    return replace(manifest, clips=clips, split_ratios=tuple(ratios), seed=seed)


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentationConfig:
    probability_each: float = 0.5
    gain_range_db: tuple[float, float] = (-6.0, 6.0)
    noise_range: tuple[float, float] = (-0.003, 0.003)
    stretch_range: tuple[float, float] = (0.9, 1.1)
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability_each <= 1.0:
            raise ValueError("augmentation probability must lie in [0, 1]")
        for r in (self.gain_range_db, self.noise_range, self.stretch_range):
            if len(r) != 2 or r[0] > r[1]:
                raise ValueError(f"invalid range {r}")
        object.__setattr__(self, "gain_range_db", tuple(self.gain_range_db))
        object.__setattr__(self, "noise_range", tuple(self.noise_range))
        object.__setattr__(self, "stretch_range", tuple(self.stretch_range))

    @property
    def enabled(self) -> bool:
        return self.probability_each > 0


NO_AUGMENTATION = AugmentationConfig(probability_each=0.0)


@dataclass(frozen=True)
class AugmentationDraw:
    gain_db: float | None
    noise: bool
    stretch: float | None


def augmentation_rng(seed: int, clip_id: str, epoch: int) -> np.random.Generator:
    """Generator keyed by (seed, clip, epoch), independent of processing order."""
    return np.random.default_rng([seed & (2**64 - 1), stable_key(clip_id), epoch])


def draw_augmentation(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentationDraw:
    flips = rng.random(3) < cfg.probability_each
    gain = rng.uniform(*cfg.gain_range_db)
    stretch = rng.uniform(*cfg.stretch_range)
    return AugmentationDraw(gain if flips[0] else None, bool(flips[1]), stretch if flips[2] else None)


def apply_augmentation(w: Waveform, draw: AugmentationDraw, cfg: AugmentationConfig,
                       rng: np.random.Generator) -> Waveform:
    if draw.gain_db is not None:
        w = apply_gain(w, draw.gain_db)
    if draw.noise:
        w = w.with_samples(w.samples + rng.uniform(*cfg.noise_range, size=len(w)))
    if draw.stretch is not None:
        w = fourier_resample(w, draw.stretch)
    return w


def augment_clip(w: Waveform, cfg: AugmentationConfig, rng: np.random.Generator) -> Waveform:
    """Gain, then additive uniform noise, then time stretch; each applied with its own coin flip."""
    return apply_augmentation(w, draw_augmentation(cfg, rng), cfg, rng)
