"""NHWC convolution, batch-norm and dense kernels in plain numpy.

Inputs may be a single H x W x C tensor or a batch N x H x W x C; the
leading batch axis is preserved. "same" padding follows the usual
convention: output size ceil(size / stride), with any odd padding going to
the bottom/right.
"""
from __future__ import annotations

import numpy as np


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected H x W x C or N x H x W x C, got shape {x.shape}")
    return x, False


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Return (output size, pad before, pad after)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _pad_same(x: np.ndarray, kh: int, kw: int, stride: int):
    _, h, w, _ = x.shape
    oh, top, bottom = same_padding(h, kh, stride)
    ow, left, right = same_padding(w, kw, stride)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, oh, ow


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, bias: np.ndarray | None = None) -> np.ndarray:
    """Cross-correlation with "same" zero padding; kernel is kh x kw x Cin x Cout."""
    xb, single = _batched(x)
    kh, kw, cin, cout = kernel.shape
    if xb.shape[-1] != cin:
        raise ValueError(f"input has {xb.shape[-1]} channels, kernel expects {cin}")
    if kh == kw == 1 and stride == 1:
        y = xb @ kernel.reshape(cin, cout)
    else:
        xp, oh, ow = _pad_same(xb, kh, kw, stride)
        cols = [xp[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride, :]
                for i in range(kh) for j in range(kw)]
        patches = np.concatenate(cols, axis=-1)
        y = patches @ kernel.reshape(kh * kw * cin, cout)
    if bias is not None:
        y = y + bias
    return y[0] if single else y


def depthwise_conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1,
                     bias: np.ndarray | None = None) -> np.ndarray:
    """Per-channel spatial filtering; kernel is kh x kw x C."""
    xb, single = _batched(x)
    kh, kw, c = kernel.shape
    if xb.shape[-1] != c:
        raise ValueError(f"input has {xb.shape[-1]} channels, kernel expects {c}")
    xp, oh, ow = _pad_same(xb, kh, kw, stride)
    y = None
    for i in range(kh):
        for j in range(kw):
            tap = xp[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride, :] * kernel[i, j]
            y = tap if y is None else y + tap
    if bias is not None:
        y = y + bias
    return y[0] if single else y


def batch_norm_inference(x: np.ndarray, gamma: np.ndarray | None, beta: np.ndarray,
                         moving_mean: np.ndarray, moving_var: np.ndarray,
                         epsilon: float = 1e-3) -> np.ndarray:
    """Per-channel affine normalisation with frozen statistics; ``gamma=None`` means 1."""
    c = np.shape(x)[-1]
    params = [beta, moving_mean, moving_var] + ([] if gamma is None else [gamma])
    if any(np.shape(p) != (c,) for p in params):
        raise ValueError(f"batch-norm parameters must all have length {c}")
    scale = 1.0 / np.sqrt(moving_var + epsilon)
    if gamma is not None:
        scale = scale * gamma
    return (x - moving_mean) * scale.astype(np.result_type(x, scale)) + beta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0, dtype=x.dtype)


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if np.shape(x)[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ValueError("dense layer shape mismatch")
    return x @ weights + bias


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
