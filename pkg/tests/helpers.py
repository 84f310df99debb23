"""Numeric helpers shared by the test modules."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from simple2complex.backend.graph import SeriesNetwork, build_plain_network
from simple2complex.common.models import LayerSpec
from simple2complex.common.tensor import SeededRng

# Two small layers; kernel 3 so grown paths use (3x3, 1x1).
TINY_PLAN = [
    LayerSpec(filters=2, kernel=3, stride=1, padding=1),
    LayerSpec(filters=4, kernel=3, stride=2, padding=1),
]


def numeric_gradient(
    f: Callable[[], float],
    x: np.ndarray,
    *,
    h: float = 1e-5,
    indices: Optional[Iterable[Tuple[int, ...]]] = None,
) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    for idx in indices if indices is not None else np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def identity_net(layers: int) -> SeriesNetwork:
    """1x1 identity convs on a 3x1x1 input with an identity head, so logits == output junction."""
    plan = [LayerSpec(filters=3, kernel=1, stride=1, padding=0)] * layers
    net = build_plain_network(plan, classes=3, rng=SeededRng(0), input_shape=(3, 1, 1), precision="double")
    for e in net.edges:
        e.conv.weights[...] = np.eye(3).reshape(3, 3, 1, 1)
    net.head.weights[...] = np.eye(3)
    return net


def randomize_norms(net: SeriesNetwork, rng: SeededRng) -> None:
    """Stand-in for training: nonzero gammas/betas and non-default running statistics."""
    for e in net.edges:
        n = e.bn.channels
        dtype = e.bn.gamma.dtype
        e.bn.gamma[...] = rng.normal((n,), mean=1.0, stddev=0.5, dtype=dtype)
        e.bn.beta[...] = rng.normal((n,), stddev=0.2, dtype=dtype)
        e.bn.running_mean[...] = rng.normal((n,), stddev=0.3, dtype=dtype)
        e.bn.running_var[...] = rng.uniform((n,), 0.5, 2.0).astype(dtype)
    net.head.bias[...] = rng.normal(net.head.bias.shape, stddev=0.1, dtype=net.head.bias.dtype)

# Seconds-scale synthetic run: 2 classes of 8x8 images, 2 growth stages, 20 steps in total.
SYNTH_SETTINGS = [
    "data.source=synthetic",
    "data.batch_size=16",
    "data.synthetic.classes=2",
    "data.synthetic.per_class=16",
    "data.synthetic.test_per_class=8",
    "growth.stages=2",
    "growth.steps_per_growth=6",
    "growth.check_batches=2",
    "schedule.steps_final_base_lr=4",
    "schedule.steps_decay_phase=4",
    "schedule.max_halvings=2",
    "eval.every=4",
    "eval.batch_size=16",
    "run.freeze_wall_time=true",
]
