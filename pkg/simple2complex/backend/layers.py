"""Forward/backward pairs for the primitive layers of a series network.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes the
upstream gradient and that cache. Layout is batch x channels x height x width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from simple2complex.common.errors import DataError, ShapeError
from simple2complex.common.tensor import SeededRng, channel_moments, check_same


# -------------------------------
# Parameter containers
# -------------------------------
@dataclass
class ConvParams:
    weights: np.ndarray  # out_channels x in_channels x kh x kw, no bias
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        if self.weights.ndim != 4:
            raise ShapeError(f"Conv weights must be 4-d, got shape {self.weights.shape}.")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"Conv kernels must be odd, got {kh}x{kw}.")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"Invalid stride/padding {self.stride}/{self.padding}.")

    @property
    def out_channels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.weights.shape[1])

    @property
    def kernel(self) -> int:
        return int(self.weights.shape[2])


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    ema_decay: float = 0.9999
    warmup: bool = False
    updates: int = 0

    def __post_init__(self) -> None:
        n = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"BatchNorm {name} must have length {n}.")
        if self.epsilon <= 0:
            raise ValueError("BatchNorm epsilon must be > 0.")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("BatchNorm ema_decay must lie in (0, 1).")

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])

    def effective_decay(self) -> float:
        if not self.warmup:
            return self.ema_decay
        return min(self.ema_decay, (1.0 + self.updates) / (10.0 + self.updates))


@dataclass
class HeadParams:
    weights: np.ndarray  # classes x features
    bias: np.ndarray  # classes

    @property
    def classes(self) -> int:
        return int(self.weights.shape[0])


# -------------------------------
# Initialization
# -------------------------------
def he_normal(shape: Sequence[int], fan_in: int, rng: SeededRng, dtype: Any) -> np.ndarray:
    return rng.normal(shape, stddev=math.sqrt(2.0 / fan_in), dtype=dtype)


def init_conv(
    in_channels: int,
    out_channels: int,
    kernel: int,
    *,
    stride: int,
    padding: int,
    rng: SeededRng,
    dtype: Any,
) -> ConvParams:
    fan_in = in_channels * kernel * kernel
    weights = he_normal((out_channels, in_channels, kernel, kernel), fan_in, rng, dtype)
    return ConvParams(weights=weights, stride=stride, padding=padding)


def init_batch_norm(
    channels: int,
    *,
    dtype: Any,
    gamma: float = 1.0,
    epsilon: float = 1e-5,
    ema_decay: float = 0.9999,
    warmup: bool = False,
) -> BatchNormParams:
    return BatchNormParams(
        gamma=np.full(channels, gamma, dtype=dtype),
        beta=np.zeros(channels, dtype=dtype),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
        epsilon=epsilon,
        ema_decay=ema_decay,
        warmup=warmup,
    )


def init_head(features: int, classes: int, *, rng: SeededRng, dtype: Any) -> HeadParams:
    return HeadParams(
        weights=he_normal((classes, features), features, rng, dtype),
        bias=np.zeros(classes, dtype=dtype),
    )


# -------------------------------
# Convolution (cross-correlation, zero padding, no bias)
# -------------------------------
def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # N x C x Ho x Wo x kh x kw
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv_forward(x: np.ndarray, p: ConvParams) -> Tuple[np.ndarray, Tuple[Any, ...]]:
    if x.ndim != 4:
        raise ShapeError(f"Conv input must be 4-d, got shape {x.shape}.")
    if x.shape[1] != p.in_channels:
        raise ShapeError(
            f"Conv expects {p.in_channels} input channels, got {x.shape[1]}."
        )
    if x.dtype != p.weights.dtype:
        raise ShapeError(f"Mixed precision: input {x.dtype} vs weights {p.weights.dtype}.")
    kh, kw = p.weights.shape[2:]
    ho = conv_output_size(x.shape[2], kh, p.stride, p.padding)
    wo = conv_output_size(x.shape[3], kw, p.stride, p.padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"Input {x.shape[2]}x{x.shape[3]} too small for a {kh}x{kw} kernel.")
    win = _windows(x, kh, kw, p.stride, p.padding)
    out = np.tensordot(win, p.weights, axes=([1, 4, 5], [1, 2, 3]))  # N x Ho x Wo x O
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    return out, (x.shape, win, p)


def conv_backward(dout: np.ndarray, cache: Tuple[Any, ...]) -> Tuple[np.ndarray, np.ndarray]:
    x_shape, win, p = cache
    n, c, h, w = x_shape
    kh, kw = p.weights.shape[2:]
    s, pad = p.stride, p.padding
    ho, wo = dout.shape[2:]
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # O x C x kh x kw
    dcols = np.tensordot(dout, p.weights, axes=([1], [0]))  # N x Ho x Wo x C x kh x kw
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    dx = dxp[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(dx), dw.astype(p.weights.dtype, copy=False)


# -------------------------------
# Batch normalization
# -------------------------------
def batch_norm_forward(
    x: np.ndarray, p: BatchNormParams, mode: str = "train"
) -> Tuple[np.ndarray, Tuple[Any, ...]]:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"BatchNorm expects {p.channels} channels, got shape {x.shape}.")
    if mode == "train":
        mean, var = channel_moments(x)
        decay = p.effective_decay()
        p.running_mean[...] = decay * p.running_mean + (1.0 - decay) * mean
        p.running_var[...] = decay * p.running_var + (1.0 - decay) * var
        p.updates += 1
    elif mode == "eval":
        mean, var = p.running_mean, p.running_var
    else:
        raise ValueError(f"Unknown batch-norm mode {mode!r}.")
    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (mode, xhat, inv_std, p.gamma)


def batch_norm_backward(
    dout: np.ndarray, cache: Tuple[Any, ...]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mode, xhat, inv_std, gamma = cache
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if mode == "eval":
        return dout * scale, dgamma, dbeta
    # train mode: batch moments depend on x
    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (scale / count) * (
        count * dout - dbeta[None, :, None, None] - xhat * dgamma[None, :, None, None]
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


# -------------------------------
# Activations
# -------------------------------
def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0).astype(x.dtype, copy=False), x


def relu_backward(dout: np.ndarray, cache: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is 0
    return dout * (cache > 0)


ACTIVATIONS: Dict[str, Tuple[Callable[..., Any], Callable[..., Any]]] = {
    "relu": (relu_forward, relu_backward),
}


def activation_pair(name: str) -> Tuple[Callable[..., Any], Callable[..., Any]]:
    try:
        return ACTIVATIONS[name]
    except KeyError as exc:
        raise ValueError(f"Unknown activation {name!r}; known: {sorted(ACTIVATIONS)}.") from exc


# -------------------------------
# Add junction
# -------------------------------
def add_junction_forward(inputs: Sequence[np.ndarray]) -> Tuple[np.ndarray, int]:
    if not inputs:
        raise ShapeError("An add junction needs at least one input.")
    out = inputs[0].copy()
    for other in inputs[1:]:
        check_same(inputs[0], other, "junction inputs")
        out += other  # fixed left-to-right order
    return out, len(inputs)


def add_junction_backward(dout: np.ndarray, cache: int) -> List[np.ndarray]:
    return [dout for _ in range(cache)]


# -------------------------------
# Classifier head: global average pool -> linear -> softmax cross-entropy
# -------------------------------
def head_logits(features: np.ndarray, p: HeadParams) -> Tuple[np.ndarray, np.ndarray]:
    if features.ndim != 4 or features.shape[1] != p.weights.shape[1]:
        raise ShapeError(
            f"Head expects {p.weights.shape[1]} feature channels, got shape {features.shape}."
        )
    pooled = features.mean(axis=(2, 3))
    return pooled @ p.weights.T + p.bias, pooled


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, float, np.ndarray]:
    classes = logits.shape[1]
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise DataError(f"Expected {logits.shape[0]} labels, got shape {labels.shape}.")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"Labels must lie in [0, {classes}).")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = np.arange(logits.shape[0])
    loss = float(-log_probs[idx, labels].mean())
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    probs = np.exp(log_probs)
    probs[idx, labels] -= 1.0
    dlogits = probs / logits.shape[0]
    return loss, accuracy, dlogits


def classifier_head_loss(
    features: np.ndarray, labels: np.ndarray, p: HeadParams
) -> Tuple[float, float, Tuple[Any, ...]]:
    logits, pooled = head_logits(features, p)
    loss, accuracy, dlogits = softmax_cross_entropy(logits, labels)
    return loss, accuracy, (features.shape, pooled, dlogits, p, logits)


def classifier_head_backward(
    cache: Tuple[Any, ...],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    feat_shape, pooled, dlogits, p, _ = cache
    dweights = dlogits.T @ pooled
    dbias = dlogits.sum(axis=0)
    dpooled = dlogits @ p.weights
    area = feat_shape[2] * feat_shape[3]
    dfeatures = np.broadcast_to(
        (dpooled / area)[:, :, None, None], feat_shape
    ).astype(dlogits.dtype)
    return dfeatures, dweights, dbias
