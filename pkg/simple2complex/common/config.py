from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from simple2complex.common.errors import ConfigError
from simple2complex.common.models import DEFAULT_CHANNEL_PLAN, LayerSpec
from simple2complex.common.utils import deep_merge, nest_dotted, parse_override, parse_scalar


# -------------------------------
# Config sections
# -------------------------------
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class LayerSpecModel(_Section):
    filters: int = Field(ge=1)
    kernel: int = Field(default=5, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=2, ge=0)

    @model_validator(mode="after")
    def _odd_kernel(self) -> "LayerSpecModel":
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        return self

    def to_spec(self) -> LayerSpec:
        return LayerSpec(self.filters, self.kernel, self.stride, self.padding)


class RunSection(_Section):
    model_config = ConfigDict(
        extra="forbid", validate_assignment=True, coerce_numbers_to_str=True
    )

    run_id: str = Field(default="", max_length=80)
    freeze_wall_time: bool = False


class ModelSection(_Section):
    channel_plan: List[LayerSpecModel] = Field(
        default_factory=lambda: [
            LayerSpecModel(filters=s.filters, kernel=s.kernel, stride=s.stride, padding=s.padding)
            for s in DEFAULT_CHANNEL_PLAN
        ],
        min_length=1,
    )
    activation: Literal["relu"] = "relu"
    bn_epsilon: float = Field(default=1e-5, gt=0)
    bn_decay: float = Field(default=0.9999, gt=0, lt=1)

    def plan(self) -> List[LayerSpec]:
        return [layer.to_spec() for layer in self.channel_plan]


class GrowthSection(_Section):
    stages: int = Field(default=2, ge=0)
    steps_per_growth: int = Field(default=2000, ge=1)
    stop_threshold: float = Field(default=0.01, ge=0)
    enforce_stop: bool = False
    preservation_tol: float = Field(default=1e-5, ge=0)
    check_batches: int = Field(default=16, ge=1)
    check_batch_size: int = Field(default=4, ge=1)


class OptimizerSection(_Section):
    lr: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=0.0002, ge=0)
    decay_norm_params: bool = True
    ema_decay: float = Field(default=0.9999, gt=0, lt=1)
    ema_warmup: bool = True


class ScheduleSection(_Section):
    kind: Literal["fixed_step", "stagnation"] = "fixed_step"
    steps_final_base_lr: int = Field(default=3000, ge=1)
    steps_decay_phase: int = Field(default=2000, ge=1)
    halve_factor: float = Field(default=0.5, gt=0, lt=1)
    max_halvings: int = Field(default=4, ge=0)
    min_lr: float = Field(default=0.0, ge=0)
    window: int = Field(default=1000, ge=1)
    epsilon: float = Field(default=1e-3, ge=0)


class SyntheticSection(_Section):
    classes: int = Field(default=4, ge=2)
    per_class: int = Field(default=64, ge=1)
    test_per_class: int = Field(default=16, ge=1)
    size: int = Field(default=8, ge=4)
    noise: float = Field(default=0.0, ge=0)


class DataSection(_Section):
    source: Literal["cifar10", "synthetic"] = "cifar10"
    data_dir: Optional[str] = None
    batch_size: int = Field(default=128, ge=1)
    subset_size: Optional[int] = Field(default=10000, ge=1)
    augment: bool = False
    drop_last: bool = True
    synthetic: SyntheticSection = Field(default_factory=SyntheticSection)


class EvalSection(_Section):
    every: int = Field(default=500, ge=1)
    batch_size: int = Field(default=500, ge=1)
    use_ema: bool = True
    train_eval_size: Optional[int] = Field(default=None, ge=1)


class TrainConfig(_Section):
    seed: int = 1
    precision: Literal["single", "double"] = "single"
    run: RunSection = Field(default_factory=RunSection)
    model: ModelSection = Field(default_factory=ModelSection)
    growth: GrowthSection = Field(default_factory=GrowthSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    data: DataSection = Field(default_factory=DataSection)
    eval: EvalSection = Field(default_factory=EvalSection)


# -------------------------------
# Loading
# -------------------------------
def _read_config_file(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}", key="config")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object.")
        return data
    # key=value lines, dotted keys for nesting (e.g. optimizer.lr=0.05)
    pairs = dotenv_values(path, interpolate=False)
    return nest_dotted((key, parse_scalar(value or "")) for key, value in pairs.items())


def _first_error(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    key = ".".join(str(part) for part in err.get("loc", ()))
    if err.get("type") == "extra_forbidden":
        return ConfigError(f"Unknown config key '{key}'.", key=key)
    return ConfigError(f"Invalid value for '{key}': {err.get('msg')}", key=key)


def build_config(
    *,
    config_path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    extra: Optional[Dict[str, Any]] = None,
    base: Optional[Dict[str, Any]] = None,
) -> TrainConfig:
    """Resolve defaults <- ``base`` <- file <- `key=value` overrides <- explicit flag values."""
    data: Dict[str, Any] = dict(base or {})
    if config_path is not None:
        data = deep_merge(data, _read_config_file(Path(config_path)))
    parsed = []
    for text in overrides:
        try:
            parsed.append(parse_override(text))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    data = deep_merge(data, nest_dotted(parsed))
    if extra:
        data = deep_merge(data, extra)
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as exc:
        raise _first_error(exc) from exc


def config_to_json(config: TrainConfig) -> str:
    return config.model_dump_json(indent=2)
