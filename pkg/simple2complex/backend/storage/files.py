from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import structlog

from simple2complex.common.models import METRICS_COLUMNS, MetricsRecord
from simple2complex.common.utils import jsonable, write_csv

log = structlog.get_logger(__name__)

METRICS_FILE = "metrics.csv"
EVENTS_FILE = "events.jsonl"
CONFIG_FILE = "resolved_config.json"
STAGES_FILE = "stages.csv"
RUNGS_FILE = "rungs.csv"
GROWTH_FILE = "growth.csv"

STAGE_COLUMNS = ["stage", "step", "train_acc", "test_acc"]
RUNG_COLUMNS = ["lr", "step", "train_acc", "test_acc", "gap"]
GROWTH_COLUMNS = [
    "stage",
    "parent_params",
    "added_params",
    "child_params",
    "max_abs_diff",
    "passed",
    "newest_mean_abs_gamma",
    "stop_suggested",
    "loss_before",
    "loss_after",
    "loss_std",
    "continuous",
]


class RunWriter:
    """Append-only files of one run directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._init_csv(METRICS_FILE, METRICS_COLUMNS)
        (self.out_dir / EVENTS_FILE).write_text("", encoding="utf-8")

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _init_csv(self, name: str, columns: Sequence[str]) -> None:
        write_csv(self.path(name), columns, [])

    def _append(self, name: str, columns: Sequence[str], row: Dict[str, Any]) -> None:
        path = self.path(name)
        if not path.exists():
            self._init_csv(name, columns)
        with open(path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
            writer.writerow({c: jsonable(row.get(c, "")) for c in columns})

    def write_config(self, config_json: str) -> Path:
        path = self.path(CONFIG_FILE)
        path.write_text(config_json, encoding="utf-8")
        log.info("run_dir_ready", out_dir=str(self.out_dir))
        return path

    def metrics(self, record: MetricsRecord) -> None:
        self._append(METRICS_FILE, METRICS_COLUMNS, record.as_row())

    def stage(self, row: Dict[str, Any]) -> None:
        self._append(STAGES_FILE, STAGE_COLUMNS, row)

    def rung(self, row: Dict[str, Any]) -> None:
        self._append(RUNGS_FILE, RUNG_COLUMNS, row)

    def growth(self, row: Dict[str, Any]) -> None:
        self._append(GROWTH_FILE, GROWTH_COLUMNS, row)

    def event(self, event: str, **fields: Any) -> None:
        payload = {"event": event, **{k: jsonable(v) for k, v in fields.items()}}
        with open(self.path(EVENTS_FILE), "a", encoding="utf-8") as f:
            f.write(json.dumps(payload, sort_keys=True) + "\n")

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
        return path
