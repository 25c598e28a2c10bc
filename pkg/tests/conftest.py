"""Shared fixtures: toy dataset path, config factory, directory comparison."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import pytest
import yaml


@pytest.fixture(scope="session")
def toy_dataset_path() -> Path:
    return Path(str(resources.files("ikgate.data").joinpath("toy_qa.jsonl")))


@pytest.fixture
def make_config(tmp_path, toy_dataset_path):
    """Write a run-config YAML; returns (config_path, out_dir)."""

    def _make(name: str = "run", **overrides) -> tuple[Path, Path]:
        out_dir = tmp_path / name
        config = {
            "dataset": str(toy_dataset_path),
            "name": "toy",
            "validation_size": 50,
            "seed": 7,
            "out_dir": str(out_dir),
            "offline": True,
            "teacher": {"kind": "match", "cutoff": 0.5},
            "scorer": {"kind": "calibrated_stub", "target_acc": 0.82, "target_auc": 0.89},
            "prefix_tokens": [0, 32],
            "eval_prefix_tokens": 32,
        }
        config.update(overrides)
        config_path = tmp_path / f"{name}.yaml"
        config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
        return config_path, out_dir

    return _make


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name: str, rows: list[dict]) -> Path:
        path = tmp_path / name
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
        return path

    return _write
