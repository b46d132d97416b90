"""MobileNet-style classifier over 96x64 log-mel patches.

A stride-2 3x3 convolution stem, 13 depthwise-separable blocks, global
average pooling to a 1024-vector and a sigmoid dense head. Batch-norm
layers are center-only (beta plus moving statistics, no learned scale),
which is the layout of the pretrained backbone this architecture mirrors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .audio import Waveform
from .features import DEFAULT_CONFIG, FrontendConfig, LogMelPatch, clip_patches

LAYER_KINDS = ("conv", "depthwise_conv", "batch_norm", "relu", "global_avg_pool", "dense", "sigmoid")
PARAMETRIC_KINDS = ("conv", "depthwise_conv", "batch_norm", "dense")

STEM_FILTERS = 32
STEM_STRIDE = 2
# (pointwise filters, depthwise stride) for each separable block.
BLOCKS = (
    (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
    (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1),
)
EMBEDDING_SIZE = BLOCKS[-1][0]
BN_EPSILON = 1e-3
INIT_STD = 0.09
DTYPES = ("f32", "f16")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    name: str
    kind: str
    kernel: tuple[int, int] = (0, 0)
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        kh, kw = self.kernel
        if self.kind == "conv":
            return {"kernel": (kh, kw, self.in_channels, self.out_channels)}
        if self.kind == "depthwise_conv":
            return {"kernel": (kh, kw, self.in_channels)}
        if self.kind == "batch_norm":
            c = self.in_channels
            return {"beta": (c,), "moving_mean": (c,), "moving_var": (c,)}
        if self.kind == "dense":
            return {"weights": (self.in_channels, self.out_channels), "bias": (self.out_channels,)}
        return {}

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.tensor_shapes().values())


@dataclass(frozen=True)
class ScoreVector:
    scores: np.ndarray
    window_index: int = 0


def _conv_bn_relu(name: str, kind: str, kernel: int, cin: int, cout: int, stride: int) -> list[LayerSpec]:
    return [
        LayerSpec(name, kind, (kernel, kernel), cin, cout, stride),
        LayerSpec(f"{name}/bn", "batch_norm", in_channels=cout, out_channels=cout),
        LayerSpec(f"{name}/relu", "relu", in_channels=cout, out_channels=cout),
    ]


def architecture(class_count: int) -> list[LayerSpec]:
    """Layer list without tensors."""
    if class_count < 1:
        raise ValueError("class_count must be positive")
    layers = _conv_bn_relu("layer1/conv", "conv", 3, 1, STEM_FILTERS, STEM_STRIDE)
    cin = STEM_FILTERS
    for i, (cout, stride) in enumerate(BLOCKS, start=2):
        layers += _conv_bn_relu(f"layer{i}/depthwise", "depthwise_conv", 3, cin, cin, stride)
        layers += _conv_bn_relu(f"layer{i}/pointwise", "conv", 1, cin, cout, 1)
        cin = cout
    layers += [
        LayerSpec("pool", "global_avg_pool", in_channels=cin, out_channels=cin),
        LayerSpec("logits", "dense", (1, 1), cin, class_count),
        LayerSpec("scores", "sigmoid", in_channels=class_count, out_channels=class_count),
    ]
    return layers


def default_labels(class_count: int) -> tuple[str, ...]:
    from .dataset import LABELS
    if class_count == len(LABELS):
        return tuple(l.value for l in LABELS)
    return tuple(f"class_{i}" for i in range(class_count))


@dataclass(frozen=True, eq=False)
class ModelWeights:
    layers: tuple[LayerSpec, ...]
    labels: tuple[str, ...]
    dtype: str = "f32"
    bn_epsilon: float = BN_EPSILON
    format_version: int = 1

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "labels", tuple(self.labels))
        np_dtype = np.float16 if self.dtype == "f16" else np.float32
        prev = 1
        for layer in self.layers:
            if layer.in_channels and layer.in_channels != prev:
                raise ValueError(f"{layer.name}: expects {layer.in_channels} channels, gets {prev}")
            prev = layer.out_channels or prev
            shapes = layer.tensor_shapes()
            if set(layer.tensors) != set(shapes):
                raise ValueError(f"{layer.name}: tensors {sorted(layer.tensors)} != {sorted(shapes)}")
            for key, shape in shapes.items():
                t = layer.tensors[key]
                if t.shape != shape:
                    raise ValueError(f"{layer.name}/{key}: shape {t.shape}, expected {shape}")
                if t.dtype != np_dtype:
                    raise ValueError(f"{layer.name}/{key}: dtype {t.dtype}, model is {self.dtype}")
        if self.layers[-1].kind != "sigmoid" or self.layers[-2].kind != "dense":
            raise ValueError("model must end with a dense layer followed by a sigmoid")
        if len(self.labels) != self.class_count:
            raise ValueError(f"{len(self.labels)} label names for {self.class_count} classes")

    @property
    def class_count(self) -> int:
        return self.head.out_channels

    @property
    def head(self) -> LayerSpec:
        return self.layers[-2]

    def astype(self, dtype: str) -> "ModelWeights":
        """Convert tensor storage; f32 -> f16 rounds to nearest even."""
        np_dtype = np.float16 if dtype == "f16" else np.float32
        layers = [replace(l, tensors={k: v.astype(np_dtype) for k, v in l.tensors.items()})
                  for l in self.layers]
        return replace(self, layers=tuple(layers), dtype=dtype)

    def with_head(self, weights: np.ndarray, bias: np.ndarray, labels: Sequence[str] | None = None) -> "ModelWeights":
        """Replace the dense head (class count may change)."""
        np_dtype = np.float16 if self.dtype == "f16" else np.float32
        head = self.head
        new_head = replace(head, out_channels=bias.shape[0],
                           tensors={"weights": np.asarray(weights, dtype=np_dtype),
                                    "bias": np.asarray(bias, dtype=np_dtype)})
        sig = replace(self.layers[-1], in_channels=bias.shape[0], out_channels=bias.shape[0])
        labels = tuple(labels) if labels is not None else (
            self.labels if bias.shape[0] == self.class_count else default_labels(bias.shape[0]))
        return replace(self, layers=self.layers[:-2] + (new_head, sig), labels=labels)


def count_parameters(m: ModelWeights) -> int:
    """Element count over every stored tensor, batch-norm statistics included."""
    return sum(int(t.size) for layer in m.layers for t in layer.tensors.values())


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while np.any(bad):
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def init_model(class_count: int, seed: int | None = 0, labels: Sequence[str] | None = None,
               scheme: str = "truncated_normal", std: float = INIT_STD) -> ModelWeights:
    """Initialised weights, deterministic under ``seed``.

    ``truncated_normal`` draws every kernel with a fixed ``std`` (the
    from-scratch baseline). ``fan_in`` scales each kernel's std by
    sqrt(2 / fan_in), which keeps activations at unit scale through all
    27 conv layers; use it for a frozen random feature extractor, since the
    fixed-std scheme shrinks embeddings to ~1e-12. ``zeros`` zeroes every
    kernel, bias and beta. Moving variances always start at one.
    """
    if scheme not in ("truncated_normal", "fan_in", "zeros"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for layer in architecture(class_count):
        tensors = {}
        for key, shape in layer.tensor_shapes().items():
            if key == "moving_var":
                t = np.ones(shape)
            elif scheme == "zeros" or key in ("beta", "moving_mean", "bias"):
                t = np.zeros(shape)
            elif scheme == "fan_in":
                fan_in = int(np.prod(shape[:-1])) if layer.kind != "depthwise_conv" else shape[0] * shape[1]
                gain = 2.0 if layer.kind != "dense" else 1.0
                # A 2-sigma truncated normal has std 0.8796 of its parent.
                t = _truncated_normal(rng, shape, math.sqrt(gain / fan_in) / 0.8796)
            else:
                t = _truncated_normal(rng, shape, std)
            tensors[key] = t.astype(np.float32)
        layers.append(replace(layer, tensors=tensors))
    return ModelWeights(tuple(layers), tuple(labels) if labels else default_labels(class_count))


# ---------------------------------------------------------------- forward pass

@dataclass(frozen=True)
class _Op:
    kind: str
    stride: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None


def _compile(m: ModelWeights, fold: bool) -> list[_Op]:
    """Flatten layers into f32 ops, optionally folding batch norm into the preceding conv."""
    ops: list[_Op] = []
    f32 = {id(l): {k: v.astype(np.float32) for k, v in l.tensors.items()} for l in m.layers}
    layers = list(m.layers)
    i = 0
    while i < len(layers):
        layer, t = layers[i], f32[id(layers[i])]
        nxt = layers[i + 1] if i + 1 < len(layers) else None
        if fold and layer.kind in ("conv", "depthwise_conv") and nxt is not None and nxt.kind == "batch_norm":
            bn = f32[id(nxt)]
            scale = (1.0 / np.sqrt(bn["moving_var"].astype(np.float64) + m.bn_epsilon))
            kernel = (t["kernel"] * scale).astype(np.float32)
            bias = (bn["beta"] - bn["moving_mean"] * scale).astype(np.float32)
            ops.append(_Op(layer.kind, layer.stride, kernel, bias))
            i += 2
            continue
        if layer.kind in ("conv", "depthwise_conv"):
            ops.append(_Op(layer.kind, layer.stride, t["kernel"]))
        elif layer.kind == "batch_norm":
            ops.append(_Op("batch_norm", 1, np.stack([t["beta"], t["moving_mean"], t["moving_var"]])))
        elif layer.kind == "dense":
            ops.append(_Op("dense", 1, t["weights"], t["bias"]))
        else:
            ops.append(_Op(layer.kind, 1))
        i += 1
    return ops


def _plan(m: ModelWeights, fold: bool) -> list[_Op]:
    cache = m.__dict__.setdefault("_plans", {})
    if fold not in cache:
        cache[fold] = _compile(m, fold)
    return cache[fold]


OUTPUTS = ("prepool", "embedding", "logits", "scores")


def forward(patches: np.ndarray, m: ModelWeights, output: str = "scores", fold: bool = True,
            chunk: int = 16) -> np.ndarray:
    """Run a batch of patches (N x 96 x 64, or a single 96 x 64) through the network.

    ``output`` selects where to stop: the 3x2x1024 map before pooling, the
    pooled embedding, pre-sigmoid logits, or sigmoid scores.
    """
    if output not in OUTPUTS:
        raise ValueError(f"output must be one of {OUTPUTS}")
    x = np.asarray(patches, dtype=np.float32)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected patches of shape N x frames x bands, got {x.shape}")
    if x.shape[0] > chunk:
        parts = [forward(x[i:i + chunk], m, output, fold, chunk) for i in range(0, x.shape[0], chunk)]
        out = np.concatenate(parts)
        return out[0] if single else out
    x = x[..., None]
    for op in _plan(m, fold):
        if op.kind == "global_avg_pool":
            if output == "prepool":
                break
            x = x.mean(axis=(1, 2))
            if output == "embedding":
                break
        elif op.kind == "conv":
            x = kernels.conv2d(x, op.a, op.stride, op.b)
        elif op.kind == "depthwise_conv":
            x = kernels.depthwise_conv2d(x, op.a, op.stride, op.b)
        elif op.kind == "batch_norm":
            beta, mean, var = op.a
            x = kernels.batch_norm_inference(x, None, beta, mean, var, m.bn_epsilon).astype(np.float32)
        elif op.kind == "relu":
            x = kernels.relu(x)
        elif op.kind == "dense":
            x = kernels.dense(x, op.a, op.b)
            if output == "logits":
                break
        elif op.kind == "sigmoid":
            x = kernels.sigmoid(x)
    return x[0] if single else x


def forward_patch(patch: LogMelPatch | np.ndarray, m: ModelWeights, window_index: int = 0) -> ScoreVector:
    values = patch.values if isinstance(patch, LogMelPatch) else np.asarray(patch)
    if values.shape != (DEFAULT_CONFIG.patch_frames, DEFAULT_CONFIG.mel_bands):
        raise ValueError(f"patch must be 96 x 64, got {values.shape}")
    return ScoreVector(forward(values, m), window_index)


def clip_scores(w: Waveform, m: ModelWeights, cfg: FrontendConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Per-window scores for a clip as an array of shape (windows, classes)."""
    return forward(clip_patches(w, cfg), m)


def infer_clip(w: Waveform, m: ModelWeights, cfg: FrontendConfig = DEFAULT_CONFIG) -> list[ScoreVector]:
    """One independent score vector per 960 ms window; windows are not aggregated."""
    return [ScoreVector(s, i) for i, s in enumerate(clip_scores(w, m, cfg))]


def softmax_aggregate(scores: np.ndarray) -> np.ndarray:
    """Clip-level summary: sum window scores, then softmax over labels."""
    total = np.asarray(scores, dtype=np.float64).sum(axis=0)
    e = np.exp(total - total.max())
    return e / e.sum()
