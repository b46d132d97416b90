"""Latency benchmark: time clip inference at several durations and fit a line.

The timed span starts once the audio is in memory and ends when the score
rows are readable, so it covers framing, the log-mel frontend and the
network. Model loading is timed once, separately, and reported alongside.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import Waveform
from .model import ModelWeights, clip_scores
from .weightfile import load_weights

log = logging.getLogger(__name__)

DEFAULT_DURATIONS_S = (5.0, 10.0, 20.0, 30.0)


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r_squared: float


def fit_line(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Ordinary least squares y = slope * x + intercept, with R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length 1-D sequences with at least two points")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0:
        raise ValueError("x values are all equal; slope is undefined")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(resid @ resid)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    # noiseless input should give exact numbers; clean up last-ulp noise
    if ss_res <= 1e-24 * max(ss_tot, 1.0):
        r2 = 1.0
    return LineFit(slope, intercept, r2)


@dataclass
class LatencyReport:
    durations_s: list[float]
    timings_ms: list[list[float]]
    load_ms: float | None = None
    fit: LineFit = field(init=False)

    def __post_init__(self):
        if len(self.durations_s) != len(self.timings_ms) or not self.durations_s:
            raise ValueError("one timing list per duration is required")
        if any(b <= a for a, b in zip(self.durations_s, self.durations_s[1:])):
            raise ValueError("durations must be strictly increasing")
        if any(len(t) < 1 for t in self.timings_ms):
            raise ValueError("repeats must be >= 1")
        self.fit = fit_line(self.durations_s, self.mean_ms)

    @property
    def mean_ms(self) -> list[float]:
        return [float(np.mean(t)) for t in self.timings_ms]

    @property
    def intercept_with_load_ms(self) -> float | None:
        """Intercept under the convention where every run also loads the model."""
        return None if self.load_ms is None else self.fit.intercept + self.load_ms

    def to_dict(self) -> dict:
        return {
            "durations_s": list(self.durations_s),
            "timings_ms": [list(t) for t in self.timings_ms],
            "mean_ms": self.mean_ms,
            "slope_ms_per_s": self.fit.slope,
            "intercept_ms": self.fit.intercept,
            "r_squared": self.fit.r_squared,
            "load_ms": self.load_ms,
            "intercept_with_load_ms": self.intercept_with_load_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["duration_s", "repeat", "ms"])
        for d, times in zip(self.durations_s, self.timings_ms):
            for i, t in enumerate(times):
                w.writerow([d, i, repr(t)])
        return buf.getvalue()

    def write(self, out_dir: str | PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "latency.json").write_text(self.to_json())
        (out / "latency.csv").write_text(self.to_csv())


def benchmark_audio(duration_s: float, seed: int = 0, sample_rate: int = 16000) -> Waveform:
    """Deterministic low-level noise of the given length."""
    rng = np.random.default_rng([seed, int(round(duration_s * 1000))])
    n = int(round(duration_s * sample_rate))
    return Waveform(rng.uniform(-0.1, 0.1, n).astype(np.float32), sample_rate)


def latency_benchmark(model: ModelWeights | str | PathLike, durations_s: Sequence[float] = DEFAULT_DURATIONS_S,
                      repeats: int = 5, infer: Callable[[Waveform, ModelWeights], object] = clip_scores,
                      clock: Callable[[], float] = time.perf_counter, warmup: bool = True,
                      seed: int = 0) -> LatencyReport:
    """Mean wall-clock ms per duration plus a least-squares line through the means.

    A path is loaded once under the clock and reported as ``load_ms``; the
    per-run timings exclude it.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if any(d <= 0 for d in durations_s):
        raise ValueError("durations must be positive")
    load_ms = None
    if not isinstance(model, ModelWeights):
        t0 = clock()
        model = load_weights(model)
        load_ms = (clock() - t0) * 1000.0
    clips = [benchmark_audio(d, seed) for d in durations_s]
    if warmup:
        infer(clips[0], model)
    timings = []
    for d, clip in zip(durations_s, clips):
        runs = []
        for _ in range(repeats):
            t0 = clock()
            infer(clip, model)
            runs.append((clock() - t0) * 1000.0)
        log.info("%.1f s audio: mean %.2f ms over %d runs", d, np.mean(runs), repeats)
        timings.append(runs)
    return LatencyReport([float(d) for d in durations_s], timings, load_ms)
