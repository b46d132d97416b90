"""Window-level metrics: thresholded precision/recall, threshold-averaged mAP,
argmax confusion matrix and accuracy, plus the input-gain sweep.

mAP here is the mean over labels of the mean precision at the eleven
thresholds 0.0, 0.1, ..., 1.0. It is not the area under the PR curve.

A window counts as a positive prediction for a label when its score is
``>= threshold`` and also non-zero. The second condition only matters at
threshold 0.0: it keeps a hard 0.0 score from being a positive prediction,
so flawless one-hot scores reach mAP 1.0. Sigmoid scores are never
exactly zero in practice, so threshold 0.0 still predicts every window.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import Waveform, apply_gain
from .model import ModelWeights, clip_scores

log = logging.getLogger(__name__)

THRESHOLDS = np.arange(11) / 10.0
DEFAULT_GAINS_DB = tuple(float(g) for g in range(-20, 21, 5))


def _check(scores: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.ndim != 2 or truth.ndim != 1 or scores.shape[0] != truth.shape[0]:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} are not aligned per window")
    if scores.shape[0] == 0:
        raise ValueError("no windows to evaluate")
    if truth.min() < 0 or truth.max() >= scores.shape[1]:
        raise ValueError("truth label index out of range")
    return scores, truth


def _ratio(num: np.ndarray, den: np.ndarray, zero_division: float) -> np.ndarray:
    num, den = np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64)
    out = np.full(np.broadcast(num, den).shape, zero_division, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def precision_recall_at_threshold(scores, truth, label: int, threshold: float,
                                  zero_division: float = 1.0) -> tuple[float, float]:
    """Precision and recall of the decision ``score >= threshold`` (and ``score > 0``) for one label.

    0/0 counts as ``zero_division`` (1.0 by default: no predictions and no
    positives means no mistakes).
    """
    scores, truth = _check(scores, truth)
    predicted = (scores[:, label] >= threshold) & (scores[:, label] > 0)
    actual = truth == label
    tp = np.count_nonzero(predicted & actual)
    fp = np.count_nonzero(predicted & ~actual)
    fn = np.count_nonzero(~predicted & actual)
    return float(_ratio(tp, tp + fp, zero_division)), float(_ratio(tp, tp + fn, zero_division))


def pr_curves(scores, truth, thresholds=THRESHOLDS, zero_division: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall for every label and threshold; each of shape (labels, thresholds)."""
    scores, truth = _check(scores, truth)
    t = np.asarray(thresholds, dtype=np.float64)
    predicted = (scores[:, :, None] >= t[None, None, :]) & (scores[:, :, None] > 0)
    actual = (truth[:, None] == np.arange(scores.shape[1])[None, :])[:, :, None]
    tp = np.sum(predicted & actual, axis=0)
    fp = np.sum(predicted & ~actual, axis=0)
    fn = np.sum(~predicted & actual, axis=0)
    return _ratio(tp, tp + fp, zero_division), _ratio(tp, tp + fn, zero_division)


def average_precisions(scores, truth, thresholds=THRESHOLDS, zero_division: float = 1.0) -> np.ndarray:
    """Per-label mean precision over thresholds; NaN for labels with no true windows."""
    scores, truth = _check(scores, truth)
    precision, _ = pr_curves(scores, truth, thresholds, zero_division)
    ap = precision.mean(axis=1)
    present = np.bincount(truth, minlength=scores.shape[1]) > 0
    for label in np.nonzero(~present)[0]:
        warnings.warn(f"label {label} has no true windows; skipped in mAP", stacklevel=2)
    ap[~present] = np.nan
    return ap


def mean_average_precision(scores, truth, thresholds=THRESHOLDS, zero_division: float = 1.0) -> float:
    ap = average_precisions(scores, truth, thresholds, zero_division)
    if np.all(np.isnan(ap)):
        raise ValueError("no label has any true windows; mAP is undefined")
    return float(np.nanmean(ap))


def confusion_and_accuracy(scores, truth, class_count: int | None = None) -> tuple[np.ndarray, float]:
    """Rows are true labels, columns predicted (argmax, lowest index wins ties)."""
    scores, truth = _check(scores, truth)
    c = class_count or scores.shape[1]
    predicted = np.argmax(scores, axis=1)
    matrix = np.zeros((c, c), dtype=np.int64)
    np.add.at(matrix, (truth, predicted), 1)
    return matrix, float(np.trace(matrix) / matrix.sum())


@dataclass
class EvalReport:
    labels: list[str]
    precision: np.ndarray
    recall: np.ndarray
    average_precision: np.ndarray
    mean_average_precision: float
    confusion: np.ndarray
    accuracy: float
    window_count: int
    thresholds: np.ndarray = field(default_factory=lambda: THRESHOLDS.copy())

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "thresholds": [round(float(t), 10) for t in self.thresholds],
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "average_precision": [None if np.isnan(a) else float(a) for a in self.average_precision],
            "mAP": self.mean_average_precision,
            "confusion_matrix": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "window_count": self.window_count,
        }

    def write(self, out_dir: str | PathLike, plot: bool = True) -> None:
        """report.json, confusion.csv, pr_curves.csv and (optionally) report.svg."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        with open(out / "confusion.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(self.labels))
            for name, row in zip(self.labels, self.confusion):
                w.writerow([name] + [int(v) for v in row])
        with open(out / "pr_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "threshold", "precision", "recall"])
            for i, name in enumerate(self.labels):
                for j, t in enumerate(self.thresholds):
                    w.writerow([name, f"{t:.1f}", repr(float(self.precision[i, j])), repr(float(self.recall[i, j]))])
        if plot:
            plot_report(self, out / "report.svg")


def evaluate(scores, truth, labels: Sequence[str]) -> EvalReport:
    scores, truth = _check(scores, truth)
    precision, recall = pr_curves(scores, truth)
    ap = average_precisions(scores, truth)
    if np.all(np.isnan(ap)):
        raise ValueError("no label has any true windows; mAP is undefined")
    confusion, acc = confusion_and_accuracy(scores, truth, len(labels))
    return EvalReport(list(labels), precision, recall, ap, float(np.nanmean(ap)), confusion, acc, len(truth))


def plot_report(report: EvalReport, path: str | PathLike) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_pr, ax_cm) = plt.subplots(1, 2, figsize=(14, 6))
    for i, name in enumerate(report.labels):
        if not np.isnan(report.average_precision[i]):
            ax_pr.plot(report.recall[i], report.precision[i], marker=".", label=name)
    ax_pr.set_xlabel("recall")
    ax_pr.set_ylabel("precision")
    ax_pr.set_xlim(0, 1.02)
    ax_pr.set_ylim(0, 1.02)
    ax_pr.set_title(f"PR curves (mAP {report.mean_average_precision:.2f})")
    ax_pr.legend(fontsize=6)
    ax_cm.imshow(report.confusion, cmap="Blues")
    ticks = range(len(report.labels))
    ax_cm.set_xticks(ticks, report.labels, rotation=90, fontsize=6)
    ax_cm.set_yticks(ticks, report.labels, fontsize=6)
    for (r, c), v in np.ndenumerate(report.confusion):
        if v:
            ax_cm.text(c, r, int(v), ha="center", va="center", fontsize=5)
    ax_cm.set_title(f"confusion (accuracy {report.accuracy:.2f})")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------- clip-level helpers

def score_clips(clips: Sequence, model: ModelWeights, gain_db: float | None = None,
                scorer: Callable[[Waveform, ModelWeights], np.ndarray] = clip_scores
                ) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-window scores for labelled clips; every window takes its clip's label.

    ``clips`` are objects with ``label`` (int) and ``load()``.
    """
    all_scores, truth = [], []
    for clip in clips:
        w = clip.load()
        if gain_db is not None:
            w = apply_gain(w, gain_db)
        s = scorer(w, model)
        all_scores.append(s)
        truth.append(np.full(len(s), clip.label, dtype=np.int64))
    return np.concatenate(all_scores), np.concatenate(truth)


def evaluate_clips(clips: Sequence, model: ModelWeights, gain_db: float | None = None) -> EvalReport:
    scores, truth = score_clips(clips, model, gain_db)
    return evaluate(scores, truth, model.labels)


@dataclass(frozen=True)
class GainResult:
    gain_db: float
    mean_average_precision: float
    accuracy: float


def gain_sweep_eval(clips: Sequence, model: ModelWeights,
                    gains_db: Sequence[float] = DEFAULT_GAINS_DB) -> list[GainResult]:
    """mAP and accuracy with every test clip scaled by each gain in turn."""
    results = []
    for g in gains_db:
        report = evaluate_clips(clips, model, gain_db=float(g))
        log.info("gain %+.1f dB: mAP %.4f accuracy %.4f", g, report.mean_average_precision, report.accuracy)
        results.append(GainResult(float(g), report.mean_average_precision, report.accuracy))
    return results
