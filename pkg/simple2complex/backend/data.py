from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
import structlog

from simple2complex.common.errors import DataError, LabelError, NumericError
from simple2complex.common.tensor import SeededRng
from simple2complex.common.utils import derive_seed

log = structlog.get_logger(__name__)


# -------------------------------
# Data Models
# -------------------------------
@dataclass
class LabeledImageSet:
    images: np.ndarray  # N x 3 x H x W
    labels: np.ndarray  # N, int64
    classes: int = 10

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise DataError(f"Images must be N x C x H x W, got shape {self.images.shape}.")
        n = self.images.shape[0]
        if n == 0:
            raise DataError("Image set is empty.")
        if self.labels.shape != (n,):
            raise DataError(f"Expected {n} labels, got shape {self.labels.shape}.")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise LabelError(f"Labels must lie in [0, {self.classes}).")
        if not np.all(np.isfinite(self.images)):
            raise DataError("Image values must be finite.")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(int(s) for s in self.images.shape[1:])  # type: ignore[return-value]

    def take(self, indices: np.ndarray) -> "LabeledImageSet":
        return LabeledImageSet(self.images[indices], self.labels[indices], self.classes)

    def astype(self, dtype: np.dtype) -> "LabeledImageSet":
        return LabeledImageSet(self.images.astype(dtype), self.labels, self.classes)


@dataclass(frozen=True)
class NormalizationStats:
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def arrays(self, dtype: np.dtype) -> Tuple[np.ndarray, np.ndarray]:
        mean = np.asarray(self.mean, dtype=np.float64)[None, :, None, None]
        std = np.asarray(self.std, dtype=np.float64)[None, :, None, None]
        return mean.astype(dtype), std.astype(dtype)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 128
    seed: int = 0
    drop_last: bool = True

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1.")


# -------------------------------
# Normalization
# -------------------------------
def compute_stats(data: LabeledImageSet) -> NormalizationStats:
    x = data.images.astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    return NormalizationStats(tuple(float(m) for m in mean), tuple(float(s) for s in std))


def normalize_images(
    data: LabeledImageSet, stats: Optional[NormalizationStats] = None
) -> Tuple[LabeledImageSet, NormalizationStats]:
    """x <- (x - mean_c) / std_c; stats are computed from ``data`` when not supplied."""
    if stats is None:
        stats = compute_stats(data)
    if len(stats.std) != data.images.shape[1] or any(s <= 0 for s in stats.std):
        raise NumericError(f"Per-channel std must be positive, got {stats.std}.")
    dtype = data.images.dtype
    x = data.images.astype(np.float64)
    mean = np.asarray(stats.mean)[None, :, None, None]
    std = np.asarray(stats.std)[None, :, None, None]
    images = ((x - mean) / std).astype(dtype)
    return LabeledImageSet(images, data.labels, data.classes), stats


def denormalize_images(data: LabeledImageSet, stats: NormalizationStats) -> LabeledImageSet:
    x = data.images.astype(np.float64)
    mean = np.asarray(stats.mean)[None, :, None, None]
    std = np.asarray(stats.std)[None, :, None, None]
    return LabeledImageSet((x * std + mean).astype(data.images.dtype), data.labels, data.classes)


# -------------------------------
# Batching
# -------------------------------
def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return SeededRng(derive_seed(seed, "shuffle", epoch)).permutation(n)


def make_minibatches(
    data: LabeledImageSet, plan: BatchPlan, epoch: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    order = epoch_permutation(len(data), plan.seed, epoch)
    batches = []
    for start in range(0, len(order), plan.batch_size):
        idx = order[start : start + plan.batch_size]
        if plan.drop_last and len(idx) < plan.batch_size:
            break
        batches.append((data.images[idx], data.labels[idx]))
    return batches


def iterate_batches(
    data: LabeledImageSet, plan: BatchPlan, *, start_epoch: int = 0
) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """Endless stream of (epoch, images, labels) following the seeded per-epoch permutations."""
    epoch = start_epoch
    while True:
        batches = make_minibatches(data, plan, epoch)
        if not batches:
            raise DataError(
                f"Dataset of {len(data)} images yields no batch of size {plan.batch_size}."
            )
        for images, labels in batches:
            yield epoch, images, labels
        epoch += 1


def subset(data: LabeledImageSet, size: Optional[int], seed: int) -> LabeledImageSet:
    if size is None or size >= len(data):
        return data
    order = SeededRng(derive_seed(seed, "subset")).permutation(len(data))
    return data.take(np.sort(order[:size]))


# -------------------------------
# Augmentation (off by default)
# -------------------------------
def augment_batch(images: np.ndarray, rng: SeededRng, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus pad-and-crop by up to ``pad`` pixels."""
    n, _, h, w = images.shape
    out = np.empty_like(images)
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    flips = rng.integers(0, 2, size=(n,))
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    for i in range(n):
        dy, dx = offsets[i]
        crop = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out
