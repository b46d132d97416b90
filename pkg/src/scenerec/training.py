"""Head-only training on frozen-backbone embeddings.

Focal loss on label-smoothed targets, Adam, halve-on-plateau learning rate
with early stopping, per-epoch shuffling and on-the-fly augmentation. Only
the final dense layer (1024 * C + C parameters) is optimised.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .audio import Waveform
from .dataset import NO_AUGMENTATION, AugmentationConfig, augment_clip, augmentation_rng
from .evaluation import confusion_and_accuracy, mean_average_precision
from .features import DEFAULT_CONFIG, FrontendConfig, clip_patches
from .kernels import sigmoid
from .model import EMBEDDING_SIZE, ModelWeights, default_labels, forward

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    max_epochs: int = 100
    plateau_patience_epochs: int = 3
    decay_factor: float = 0.5
    early_stop_patience_epochs: int = 6
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    label_smoothing: float = 0.1
    seed: int = 0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    head_only: bool = True
    batch_size: int = 32
    head_init: str = "random"

    def __post_init__(self):
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.plateau_patience_epochs < 1 or self.early_stop_patience_epochs < 1:
            raise ValueError("patience values must be positive")
        if not 0 <= self.label_smoothing < 0.5:
            raise ValueError("label_smoothing must lie in [0, 0.5)")
        if self.learning_rate < 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate must be >= 0; max_epochs and batch_size >= 1")
        if not self.head_only:
            raise ValueError("only head-only training is supported; the backbone stays frozen")
        if self.head_init not in ("random", "zeros"):
            raise ValueError("head_init must be 'random' or 'zeros'")
        if isinstance(self.augmentation, dict):
            object.__setattr__(self, "augmentation", AugmentationConfig(**self.augmentation))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["augmentation"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- loss

def smooth_labels(y: np.ndarray, epsilon: float) -> np.ndarray:
    """Pull 1 targets down to 1 - eps/2 and 0 targets up to eps/2."""
    return np.asarray(y, dtype=np.float64) * (1.0 - epsilon) + epsilon / 2.0


def focal_loss_terms(p: np.ndarray, y: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return (-alpha * y * (1.0 - p) ** gamma * np.log(p)
            - (1.0 - alpha) * (1.0 - y) * p ** gamma * np.log1p(-p))


def focal_loss(p: np.ndarray, y: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Mean two-sided focal loss over every label of every example."""
    return float(np.mean(focal_loss_terms(p, y, alpha, gamma)))


def focal_loss_grad_logits(z: np.ndarray, y: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Elementwise d(loss term)/d(logit); zero where the probability is clamped."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p_raw = sigmoid(z)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = 1.0 - p
    d_pos = -alpha * y * (-gamma * q ** (gamma - 1) * np.log(p) + q ** gamma / p)
    d_neg = -(1.0 - alpha) * (1.0 - y) * (gamma * p ** (gamma - 1) * np.log(q) - p ** gamma / q)
    grad = (d_pos + d_neg) * p * q
    grad[(p_raw < PROB_CLAMP) | (p_raw > 1.0 - PROB_CLAMP)] = 0.0
    return grad


def head_loss_and_grads(weights: np.ndarray, bias: np.ndarray, embeddings: np.ndarray, targets: np.ndarray,
                        alpha: float, gamma: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch focal loss of a sigmoid dense head and its gradients w.r.t. weights and bias."""
    z = embeddings @ weights + bias
    loss = focal_loss(sigmoid(z), targets, alpha, gamma)
    dz = focal_loss_grad_logits(z, targets, alpha, gamma) / z.size
    return loss, embeddings.T @ dz, dz.sum(axis=0)


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState({k: np.zeros_like(v) for k, v in params.items()},
                     {k: np.zeros_like(v) for k, v in params.items()})


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
                lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam step; returns new parameter and state objects."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient names differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, replace(state, m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------- schedule

class PlateauAction(str, Enum):
    KEEP = "keep_lr"
    DECAY = "decay_lr"
    STOP = "stop"


@dataclass(frozen=True)
class PlateauState:
    learning_rate: float
    best: float = math.inf
    since_best: int = 0
    since_decay: int = 0


def plateau_step(state: PlateauState, val_loss: float, cfg: TrainConfig) -> tuple[PlateauAction, PlateauState]:
    """Update the schedule after an epoch's validation loss.

    Three non-improving epochs in a row halve the rate (the counter then
    restarts); six since the last improvement stop training.
    """
    if val_loss < state.best:
        return PlateauAction.KEEP, replace(state, best=val_loss, since_best=0, since_decay=0)
    since_best, since_decay = state.since_best + 1, state.since_decay + 1
    if since_best >= cfg.early_stop_patience_epochs:
        return PlateauAction.STOP, replace(state, since_best=since_best, since_decay=since_decay)
    if since_decay >= cfg.plateau_patience_epochs:
        return PlateauAction.DECAY, replace(state, learning_rate=state.learning_rate * cfg.decay_factor,
                                            since_best=since_best, since_decay=0)
    return PlateauAction.KEEP, replace(state, since_best=since_best, since_decay=since_decay)


def plateau_trace(losses: Sequence[float], cfg: TrainConfig = TrainConfig()) -> list[PlateauAction]:
    state = PlateauState(cfg.learning_rate)
    actions = []
    for loss in losses:
        action, state = plateau_step(state, loss, cfg)
        actions.append(action)
        if action is PlateauAction.STOP:
            break
    return actions


# ---------------------------------------------------------------- embeddings

@dataclass(frozen=True)
class LabeledClip:
    clip_id: str
    label: int
    load: Callable[[], Waveform] = field(compare=False, repr=False)


class EmbeddingCache:
    """Backbone embeddings keyed by (clip_id, window index, augmentation epoch).

    Epoch ``None`` means un-augmented audio.
    """

    def __init__(self):
        self._clips: dict[tuple[str, int | None], np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def get(self, clip_id: str, window: int, epoch: int | None) -> np.ndarray:
        return self._clips[(clip_id, epoch)][window]

    def __contains__(self, key: tuple[str, int, int | None]) -> bool:
        clip_id, window, epoch = key
        arr = self._clips.get((clip_id, epoch))
        return arr is not None and 0 <= window < len(arr)

    def clip(self, clip_id: str, epoch: int | None, compute: Callable[[], np.ndarray]) -> np.ndarray:
        key = (clip_id, epoch)
        if key in self._clips:
            self.hits += 1
        else:
            self.misses += 1
            arr = compute()
            arr.flags.writeable = False
            self._clips[key] = arr
        return self._clips[key]

    def evict_epochs(self, keep: set) -> None:
        for key in [k for k in self._clips if k[1] not in keep]:
            del self._clips[key]

    def __len__(self) -> int:
        return sum(len(a) for a in self._clips.values())


def extract_embeddings(clips: Sequence[LabeledClip], backbone: ModelWeights, cache: EmbeddingCache | None = None,
                       epoch: int | None = None, augmentation: AugmentationConfig = NO_AUGMENTATION,
                       frontend: FrontendConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pooled 1024-d backbone outputs for every window of every clip.

    Returns (embeddings, label per window, clip index per window). With an
    enabled ``augmentation`` and an integer ``epoch``, each clip is first
    augmented using a generator keyed by (augmentation seed, clip id, epoch).
    """
    cache = cache if cache is not None else EmbeddingCache()
    key_epoch = epoch if augmentation.enabled else None
    out, labels, owner = [], [], []
    for i, clip in enumerate(clips):
        def compute(clip=clip):
            w = clip.load()
            if key_epoch is not None:
                w = augment_clip(w, augmentation, augmentation_rng(augmentation.rng_seed, clip.clip_id, key_epoch))
            return forward(clip_patches(w, frontend), backbone, output="embedding")
        e = cache.clip(clip.clip_id, key_epoch, compute)
        out.append(e)
        labels.append(np.full(len(e), clip.label, dtype=np.int64))
        owner.append(np.full(len(e), i, dtype=np.int64))
    if not out:
        return np.zeros((0, EMBEDDING_SIZE), np.float32), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out), np.concatenate(labels), np.concatenate(owner)


# ---------------------------------------------------------------- training loop

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_map: float
    val_accuracy: float


@dataclass
class TrainingHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_loss", "val_map", "val_acc"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.learning_rate), repr(r.train_loss), repr(r.val_loss),
                        repr(r.val_map), repr(r.val_accuracy)])
        return buf.getvalue()


@dataclass
class TrainResult:
    model: ModelWeights
    final_model: ModelWeights
    history: TrainingHistory


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    y = np.zeros((len(labels), class_count))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def init_head(class_count: int, scheme: str, seed: int) -> dict[str, np.ndarray]:
    if scheme == "zeros":
        w = np.zeros((EMBEDDING_SIZE, class_count))
    else:
        rng = np.random.default_rng([seed & (2**64 - 1), 0x4EAD])
        w = rng.normal(0.0, math.sqrt(1.0 / EMBEDDING_SIZE), (EMBEDDING_SIZE, class_count))
    return {"weights": w, "bias": np.zeros(class_count)}


def _validate(params, e_val, t_val, y_val, cfg) -> tuple[float, float, float]:
    scores = sigmoid(e_val @ params["weights"] + params["bias"])
    loss = focal_loss(scores, t_val, cfg.focal_alpha, cfg.focal_gamma)
    _, acc = confusion_and_accuracy(scores, y_val)
    return loss, mean_average_precision(scores, y_val), acc


def train_head(train: Sequence[LabeledClip], validation: Sequence[LabeledClip], backbone: ModelWeights,
               cfg: TrainConfig = TrainConfig(), labels: Sequence[str] | None = None,
               cache: EmbeddingCache | None = None,
               on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Fit the dense head on frozen-backbone embeddings of ``train``.

    The returned ``model`` carries the head from the epoch with the lowest
    validation loss (earliest on ties); ``final_model`` the last head.
    """
    if not train or not validation:
        raise TrainingError("training and validation sets must both be non-empty")
    labels = tuple(labels) if labels is not None else backbone.labels
    c = len(labels)
    missing = set(range(c)) - {clip.label for clip in train}
    if missing:
        raise TrainingError(f"labels missing from the training split: {sorted(labels[i] for i in missing)}")
    cache = cache if cache is not None else EmbeddingCache()
    aug = cfg.augmentation

    e_val, y_val, _ = extract_embeddings(validation, backbone, cache, None)
    e_val = e_val.astype(np.float64)
    t_val = smooth_labels(one_hot(y_val, c), cfg.label_smoothing)

    params = init_head(c, cfg.head_init, cfg.seed)
    adam = adam_init(params)
    schedule = PlateauState(cfg.learning_rate)
    history = TrainingHistory()
    best = (math.inf, params)

    for epoch in range(1, cfg.max_epochs + 1):
        if aug.enabled:
            cache.evict_epochs({None, epoch})
        e_tr, y_tr, _ = extract_embeddings(train, backbone, cache, epoch, aug)
        e_tr = e_tr.astype(np.float64)
        t_tr = smooth_labels(one_hot(y_tr, c), cfg.label_smoothing)
        order = np.random.default_rng([cfg.seed & (2**64 - 1), epoch]).permutation(len(e_tr))
        lr = schedule.learning_rate
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g_w, g_b = head_loss_and_grads(params["weights"], params["bias"], e_tr[idx], t_tr[idx],
                                                 cfg.focal_alpha, cfg.focal_gamma)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            params, adam = adam_update(params, {"weights": g_w, "bias": g_b}, adam, lr)
        val_loss, val_map, val_acc = _validate(params, e_val, t_val, y_val, cfg)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        record = EpochRecord(epoch, lr, total / len(order), val_loss, val_map, val_acc)
        history.epochs.append(record)
        log.info("epoch %d lr %.3g train %.5f val %.5f mAP %.4f acc %.4f",
                 epoch, lr, record.train_loss, val_loss, val_map, val_acc)
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best[0]:
            best = (val_loss, params)
            history.best_epoch = epoch
        action, schedule = plateau_step(schedule, val_loss, cfg)
        if action is PlateauAction.STOP:
            history.stopped_early = True
            break

    def _model(p):
        return backbone.with_head(p["weights"].astype(np.float32), p["bias"].astype(np.float32), labels)
    return TrainResult(_model(best[1]), _model(params), history)
