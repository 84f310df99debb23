"""Dense tensors, elementwise arithmetic, channel statistics and the seeded random source.

Tensors are plain ``numpy.ndarray`` values in batch x channels x height x width layout.
Precision is ``single`` (float32) or ``double`` (float64) and never mixes inside one
operation.
"""

from __future__ import annotations

from typing import Any, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from simple2complex.common.errors import ShapeError

Precision = Literal["single", "double"]
PRECISIONS: Dict[str, type] = {"single": np.float32, "double": np.float64}


def dtype_for(precision: str) -> np.dtype:
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError as exc:
        raise ValueError(f"Unknown precision {precision!r}; use 'single' or 'double'.") from exc


def precision_of(t: np.ndarray) -> str:
    if t.dtype == np.float32:
        return "single"
    if t.dtype == np.float64:
        return "double"
    raise ShapeError(f"Unsupported tensor dtype {t.dtype}.")


class SeededRng:
    """PCG64 (64-bit permuted congruential generator) behind a small, explicit interface."""

    algorithm = "PCG64"

    def __init__(self, seed: Union[int, np.random.SeedSequence]):
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def normal(
        self,
        shape: Sequence[int],
        *,
        mean: float = 0.0,
        stddev: float = 1.0,
        dtype: Any = np.float64,
    ) -> np.ndarray:
        # Draw in double then cast, so single and double runs share one stream.
        return self._gen.normal(mean, stddev, size=tuple(shape)).astype(dtype)

    def uniform(self, shape: Sequence[int], low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape))

    def integers(self, low: int, high: int, size: Optional[Sequence[int]] = None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> Dict[str, Any]:
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value: Dict[str, Any]) -> None:
        self._gen.bit_generator.state = value


def _check_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ShapeError("Tensor shape must be nonempty.")
    if any(s < 1 for s in shape):
        raise ShapeError(f"All extents must be >= 1, got {list(shape)}.")
    return shape


def alloc_tensor(
    shape: Sequence[int],
    fill: str = "zeros",
    *,
    value: float = 0.0,
    mean: float = 0.0,
    stddev: float = 1.0,
    rng: Optional[SeededRng] = None,
    precision: str = "single",
) -> np.ndarray:
    shape = _check_shape(shape)
    dtype = dtype_for(precision)
    if fill == "zeros":
        return np.zeros(shape, dtype=dtype)
    if fill == "constant":
        return np.full(shape, value, dtype=dtype)
    if fill == "normal":
        if stddev < 0:
            raise ValueError(f"stddev must be >= 0, got {stddev}.")
        if rng is None:
            raise ValueError("Seeded-normal fill needs an rng.")
        return rng.normal(shape, mean=mean, stddev=stddev, dtype=dtype)
    raise ValueError(f"Unknown fill {fill!r}.")


def check_same(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch between {what}: {a.shape} vs {b.shape}.")
    if a.dtype != b.dtype:
        raise ShapeError(f"Mixed precision between {what}: {a.dtype} vs {b.dtype}.")


_BINARY_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def map_binary(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    try:
        fn = _BINARY_OPS[op]
    except KeyError as exc:
        raise ValueError(f"Unknown op {op!r}.") from exc
    check_same(a, b)
    return fn(a, b)


def channel_moments(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance (divide by count) over batch, height, width."""
    if t.ndim != 4:
        raise ShapeError(f"Expected batch x channels x height x width, got shape {t.shape}.")
    mean = t.mean(axis=(0, 2, 3))
    centered = t - mean[None, :, None, None]
    var = (centered * centered).mean(axis=(0, 2, 3))
    return mean, var
