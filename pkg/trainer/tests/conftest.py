"""Trainer test fixtures: synthetic separable trainsets, a trained model."""

from __future__ import annotations

from pathlib import Path

import pytest

from _trainer_helpers import write_separable_trainset
from iktrainer.train import TrainJobConfig, train


@pytest.fixture(scope="session")
def separable_trainset(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "separable.jsonl"
    write_separable_trainset(path, n=2000, seed=0)
    return path


@pytest.fixture(scope="session")
def trained(tmp_path_factory, separable_trainset):
    """One pinned-setting training run shared by the acceptance tests."""
    out_dir = tmp_path_factory.mktemp("model") / "tiny"
    config = TrainJobConfig(
        trainset_path=str(separable_trainset),
        out_dir=str(out_dir),
        epochs=1,
        learning_rate=1e-4,
        seed=0,
        validation_fraction=0.25,  # 500 held-out examples
    )
    report = train(config)
    return config, report
