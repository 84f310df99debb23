from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple


# -----------------------------
# Data Models
# -----------------------------
@dataclass(frozen=True, order=True)
class LayerName:
    stage: int
    ordinal: int

    def __post_init__(self) -> None:
        if self.stage < 0 or self.ordinal < 1:
            raise ValueError(f"Invalid layer name {self.stage}_{self.ordinal}.")

    def __str__(self) -> str:
        return f"{self.stage}_{self.ordinal}"

    @classmethod
    def parse(cls, text: str) -> "LayerName":
        try:
            stage, ordinal = text.strip().split("_", 1)
            return cls(int(stage), int(ordinal))
        except ValueError as exc:
            raise ValueError(f"Layer names look like '0_6', got {text!r}.") from exc


@dataclass(frozen=True)
class LayerSpec:
    """One conv-bn edge of the plain start network."""

    filters: int
    kernel: int = 5
    stride: int = 1
    padding: int = 2


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    regime: str  # "s2c" | "e2e"
    stage: int
    step: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float
    wall_time_s: float = 0.0

    def __post_init__(self) -> None:
        for name in ("train_acc", "test_acc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}.")

    @property
    def gap(self) -> float:
        return self.train_acc - self.test_acc

    def as_row(self) -> Dict[str, object]:
        return {
            "run_id": self.run_id,
            "regime": self.regime,
            "stage": self.stage,
            "step": self.step,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "gap": self.gap,
            "wall_time_s": self.wall_time_s,
        }


@dataclass(frozen=True)
class GammaRow:
    layer: str
    gammas: Tuple[float, ...]

    @property
    def mean_abs_gamma(self) -> float:
        if not self.gammas:
            return 0.0
        return sum(abs(g) for g in self.gammas) / len(self.gammas)


# -----------------------------
# Helpers / Constants
# -----------------------------
# Six-layer plain start network: 8/16/32 filters, 5x5 kernels, downsampling on 0_3 and 0_5.
DEFAULT_CHANNEL_PLAN: List[LayerSpec] = [
    LayerSpec(filters=8, stride=1),
    LayerSpec(filters=8, stride=1),
    LayerSpec(filters=16, stride=2),
    LayerSpec(filters=16, stride=1),
    LayerSpec(filters=32, stride=2),
    LayerSpec(filters=32, stride=1),
]
CIFAR10_CLASSES = 10
CIFAR10_INPUT_SHAPE = (3, 32, 32)
GAMMA_GROUPS: List[Tuple[str, ...]] = [
    ("0_6", "1_12", "2_24"),
    ("0_3", "1_6", "2_12"),
    ("1_5", "2_10"),
]
METRICS_COLUMNS = [
    "run_id",
    "regime",
    "stage",
    "step",
    "lr",
    "train_loss",
    "train_acc",
    "test_acc",
    "gap",
    "wall_time_s",
]
COMPARISON_COLUMNS = [
    "lr",
    "e2e_train",
    "e2e_test",
    "e2e_gap",
    "s2c_train",
    "s2c_test",
    "s2c_gap",
]
