from __future__ import annotations

from pathlib import Path


def repo_root() -> Path:
    # This file lives at: <repo>/simple2complex/common/paths.py
    return Path(__file__).resolve().parents[2]


def default_data_dir() -> Path:
    return repo_root() / "data"


def default_runs_dir() -> Path:
    return repo_root() / "runs"
