from __future__ import annotations

from typing import Tuple

import numpy as np

from simple2complex.backend.data import LabeledImageSet
from simple2complex.common.tensor import SeededRng


def synth_class_patterns(classes: int, size: int, rng: SeededRng, channels: int = 3) -> np.ndarray:
    if classes < 2:
        raise ValueError("A synthetic dataset needs at least 2 classes.")
    return rng.normal((classes, channels, size, size))


def synth_samples(
    patterns: np.ndarray,
    per_class: int,
    rng: SeededRng,
    *,
    noise: float = 0.0,
    dtype: np.dtype = np.float32,
) -> LabeledImageSet:
    classes = patterns.shape[0]
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    images = patterns[labels]
    if noise > 0:
        images = images + noise * rng.normal(images.shape)
    return LabeledImageSet(images.astype(dtype), labels, classes=classes)


def synth_dataset_generate(
    classes: int,
    per_class: int,
    size: int,
    rng: SeededRng,
    *,
    noise: float = 0.0,
    dtype: np.dtype = np.float32,
) -> LabeledImageSet:
    """Gaussian-blob classes: a per-class mean pattern plus isotropic noise."""
    patterns = synth_class_patterns(classes, size, rng)
    return synth_samples(patterns, per_class, rng, noise=noise, dtype=dtype)


def synth_train_test(
    classes: int,
    per_class: int,
    test_per_class: int,
    size: int,
    rng: SeededRng,
    *,
    noise: float = 0.0,
    dtype: np.dtype = np.float32,
) -> Tuple[LabeledImageSet, LabeledImageSet]:
    patterns = synth_class_patterns(classes, size, rng)
    train = synth_samples(patterns, per_class, rng, noise=noise, dtype=dtype)
    test = synth_samples(patterns, test_per_class, rng, noise=noise, dtype=dtype)
    return train, test
