from __future__ import annotations

from pathlib import Path
from typing import List, Union

import numpy as np
import structlog

from simple2complex.backend.data import LabeledImageSet
from simple2complex.common.errors import DataError, DataTruncationError, LabelError
from simple2complex.common.models import CIFAR10_CLASSES, CIFAR10_INPUT_SHAPE

log = structlog.get_logger(__name__)

RECORD_BYTES = 1 + int(np.prod(CIFAR10_INPUT_SHAPE))  # label byte + pixel bytes
BATCH_FILE_BYTES = 10000 * RECORD_BYTES
TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES = ["test_batch.bin"]


def load_cifar10_batchfile(path: Union[str, Path], *, dtype: np.dtype = np.float32) -> LabeledImageSet:
    """Parse one CIFAR-10 binary batch file; pixels scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"CIFAR-10 batch file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES:
        raise DataTruncationError(
            f"{path.name}: {raw.size} bytes is not a positive multiple of {RECORD_BYTES}."
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= CIFAR10_CLASSES:
        bad = int(np.argmax(labels >= CIFAR10_CLASSES))
        raise LabelError(f"{path.name}: record {bad} has label byte {labels[bad]}.")
    images = (records[:, 1:].reshape(-1, *CIFAR10_INPUT_SHAPE).astype(np.float64) / 255.0).astype(dtype)
    return LabeledImageSet(images, labels, classes=CIFAR10_CLASSES)


def _resolve_dir(data_dir: Path) -> Path:
    nested = data_dir / "cifar-10-batches-bin"
    return nested if nested.is_dir() else data_dir


def load_cifar10_split(
    data_dir: Union[str, Path], split: str = "train", *, dtype: np.dtype = np.float32
) -> LabeledImageSet:
    root = _resolve_dir(Path(data_dir))
    names: List[str] = TRAIN_FILES if split == "train" else TEST_FILES
    parts = [load_cifar10_batchfile(root / name, dtype=dtype) for name in names]
    images = np.concatenate([p.images for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    log.info("cifar10_loaded", split=split, records=int(labels.size), root=str(root))
    return LabeledImageSet(images, labels, classes=CIFAR10_CLASSES)
