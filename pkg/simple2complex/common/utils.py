from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np


def derive_seed(seed: int, stream: str, *extra: int) -> np.random.SeedSequence:
    """Split the top-level seed into a named, reproducible sub-stream."""
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    stream_key = int.from_bytes(digest[:4], "little")
    return np.random.SeedSequence([int(seed), stream_key, *[int(e) for e in extra]])


def parse_override(text: str) -> Tuple[str, Any]:
    if "=" not in text:
        raise ValueError(f"Override must look like key=value, got {text!r}.")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ValueError(f"Override has an empty key: {text!r}.")
    return key, parse_scalar(raw.strip())


def parse_scalar(raw: str) -> Any:
    # JSON literals (numbers, true/false, lists) pass through; anything else stays a string.
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = target
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def nest_dotted(items: Iterable[Tuple[str, Any]]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in items:
        set_dotted(nested, key, value)
    return nested


def deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def mean_abs(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(np.mean(np.abs(values)))


def jsonable(value: Any) -> Any:
    if hasattr(value, "item"):  # numpy scalars
        return value.item()
    return value


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: jsonable(row.get(c, "")) for c in columns})
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
