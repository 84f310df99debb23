"""Momentum SGD, the two-phase learning-rate schedule and EMA shadows."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from simple2complex.common.errors import ConsistencyError, NumericError

log = structlog.get_logger(__name__)

NORM_SUFFIXES = (".gamma", ".beta")


def _check_keys(expected: Mapping[str, object], got: Mapping[str, object], what: str) -> None:
    if set(expected) != set(got):
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise ConsistencyError(f"{what} keys differ: missing={missing} extra={extra}")


# -------------------------------
# SGD with momentum
# -------------------------------
@dataclass
class SgdState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0002
    decay_norm_params: bool = True
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def sync(self, params: Mapping[str, np.ndarray]) -> List[str]:
        """Zero velocity for parameters added since the last step (e.g. after growth)."""
        added = [k for k in params if k not in self.velocity]
        for key in added:
            self.velocity[key] = np.zeros_like(params[key])
        for key in [k for k in self.velocity if k not in params]:
            del self.velocity[key]
        return added

    def decays(self, key: str) -> bool:
        return self.decay_norm_params or not key.endswith(NORM_SUFFIXES)


def sgd_momentum_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: SgdState,
) -> None:
    """In place: g' = g + wd*w; v = momentum*v + g'; w = w - lr*v."""
    _check_keys(params, grads, "Gradient")
    _check_keys(params, state.velocity, "Velocity")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for {key}.", key=key)
    for key, w in params.items():
        g = grads[key]
        if state.weight_decay and state.decays(key):
            g = g + state.weight_decay * w
        v = state.velocity[key]
        v *= state.momentum
        v += g
        w -= state.lr * v


# -------------------------------
# Learning-rate schedule
# -------------------------------
@dataclass
class LrSchedule:
    phase: str = "growing"  # "growing" | "final"
    kind: str = "stagnation"  # "stagnation" | "fixed_step"
    base_lr: float = 0.1
    halve_factor: float = 0.5
    max_halvings: int = 4
    min_lr: float = 0.0
    window: int = 1000
    epsilon: float = 1e-3
    base_steps: int = 0  # final phase steps held at base_lr before any halving
    rung_steps: int = 1  # fixed_step: steps per decayed rung
    lr: float = 0.1
    halvings: int = 0
    last_checked: int = 0
    events: List[Tuple[int, float, float]] = field(default_factory=list)

    def start_final(self) -> None:
        self.phase = "final"
        self.lr = self.base_lr
        self.halvings = 0
        self.last_checked = 0
        log.info("lr_phase_final", lr=self.lr, kind=self.kind)

    def _can_halve(self) -> bool:
        nxt = self.lr * self.halve_factor
        return self.halvings < self.max_halvings and nxt >= self.min_lr

    def _halve(self, step: int) -> None:
        old = self.lr
        self.lr = old * self.halve_factor
        self.halvings += 1
        self.events.append((step, old, self.lr))
        log.info("lr_halved", step=step, old_lr=old, new_lr=self.lr, halvings=self.halvings)


def lr_schedule_next(sched: LrSchedule, losses: Sequence[float]) -> float:
    """Learning rate for the next step given the training losses of the current phase."""
    if sched.phase == "growing":
        sched.lr = sched.base_lr
        return sched.lr
    k = len(losses)
    if k < sched.base_steps:
        return sched.lr
    if sched.kind == "fixed_step":
        target = min(sched.max_halvings, 1 + (k - sched.base_steps) // max(1, sched.rung_steps))
        while sched.halvings < target and sched._can_halve():
            sched._halve(k)
        return sched.lr
    w = sched.window
    if k >= 2 * w and k - sched.last_checked >= w:
        sched.last_checked = k
        recent = float(np.mean(losses[-w:]))
        previous = float(np.mean(losses[-2 * w : -w]))
        if previous - recent <= sched.epsilon * abs(previous) and sched._can_halve():
            sched._halve(k)
    return sched.lr


def lr_ladder(base_lr: float, halve_factor: float, halvings: int) -> List[float]:
    return [base_lr * halve_factor**i for i in range(halvings + 1)]


# -------------------------------
# EMA shadows
# -------------------------------
@dataclass
class EmaState:
    decay: float = 0.9999
    warmup: bool = False
    updates: int = 0
    shadow: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1).")

    def sync(self, params: Mapping[str, np.ndarray]) -> List[str]:
        """Shadows for new parameters start at their current value."""
        added = [k for k in params if k not in self.shadow]
        for key in added:
            self.shadow[key] = params[key].copy()
        for key in [k for k in self.shadow if k not in params]:
            del self.shadow[key]
        return added

    def effective_decay(self) -> float:
        if not self.warmup:
            return self.decay
        return min(self.decay, (1.0 + self.updates) / (10.0 + self.updates))

    def update(self, params: Mapping[str, np.ndarray]) -> None:
        _check_keys(self.shadow, params, "EMA")
        d = self.effective_decay()
        for key, p in params.items():
            s = self.shadow[key]
            s *= d
            s += (1.0 - d) * p
        self.updates += 1

    def swap_in(self, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        _check_keys(self.shadow, params, "EMA")
        backup = {k: p.copy() for k, p in params.items()}
        for key, p in params.items():
            p[...] = self.shadow[key]
        return backup

    def swap_out(self, params: Mapping[str, np.ndarray], backup: Mapping[str, np.ndarray]) -> None:
        _check_keys(backup, params, "EMA backup")
        for key, p in params.items():
            p[...] = backup[key]

    @contextmanager
    def applied(self, params: Mapping[str, np.ndarray]) -> Iterator[None]:
        backup = self.swap_in(params)
        try:
            yield
        finally:
            self.swap_out(params, backup)
