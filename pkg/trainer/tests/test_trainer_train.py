"""Training behavior: learning, degenerate inputs, divergence guard, reload."""

from __future__ import annotations

import json

import pytest
import torch

from _trainer_helpers import write_separable_trainset
from iktrainer.model import load_model, score_prompt
from iktrainer.prompt import render_prompt
from iktrainer.train import TrainJobConfig, TrainingDiverged, train
from iktrainer.trainset import TrainsetError


def small_config(trainset, out_dir, **kwargs) -> TrainJobConfig:
    defaults = dict(epochs=1, learning_rate=1e-4, seed=0)
    defaults.update(kwargs)
    return TrainJobConfig(trainset_path=str(trainset), out_dir=str(out_dir), **defaults)


class TestTrainingRuns:
    def test_learns_small_separable_set(self, tmp_path):
        trainset = tmp_path / "small.jsonl"
        write_separable_trainset(trainset, n=600, seed=1)
        report = train(small_config(trainset, tmp_path / "model"))
        assert report.val_accuracy >= 0.8
        assert report.val_auc is not None and report.val_auc >= 0.8
        assert report.loss_curve[-1] < report.loss_curve[0]
        assert report.n_train + report.n_validation == 600

    def test_all_yes_flags_single_class(self, tmp_path):
        trainset = tmp_path / "yes.jsonl"
        write_separable_trainset(trainset, n=120, seed=2, p_yes=1.0)
        report = train(small_config(trainset, tmp_path / "model"))
        assert report.single_class_validation is True
        assert report.val_auc is None
        assert report.val_accuracy is not None

    def test_empty_trainset_is_schema_error(self, tmp_path):
        trainset = tmp_path / "empty.jsonl"
        trainset.write_text('{"_meta": {}}\n', encoding="utf-8")
        with pytest.raises(TrainsetError):
            train(small_config(trainset, tmp_path / "model"))

    def test_prompt_version_mismatch_rejected(self, tmp_path):
        trainset = tmp_path / "vers.jsonl"
        write_separable_trainset(trainset, n=50, seed=3, meta={"prompt_version": "other/9"})
        with pytest.raises(TrainsetError, match="prompt"):
            train(small_config(trainset, tmp_path / "model"))

    def test_config_validation(self, tmp_path):
        with pytest.raises(ValueError):
            TrainJobConfig(trainset_path="x", out_dir="y", epochs=0)
        with pytest.raises(ValueError):
            TrainJobConfig(trainset_path="x", out_dir="y", learning_rate=0.0)

    def test_divergence_guard_carries_report(self, tmp_path, monkeypatch):
        trainset = tmp_path / "div.jsonl"
        write_separable_trainset(trainset, n=60, seed=4)

        import sys

        import iktrainer.train  # noqa: F401  (the module, not the re-exported function)

        train_module = sys.modules["iktrainer.train"]
        real_ce = train_module.F.cross_entropy
        calls = {"n": 0}

        def exploding(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] >= 3:
                return torch.tensor(float("nan"), requires_grad=True)
            return real_ce(*args, **kwargs)

        monkeypatch.setattr(train_module.F, "cross_entropy", exploding)
        with pytest.raises(TrainingDiverged) as excinfo:
            train(small_config(trainset, tmp_path / "model"))
        assert len(excinfo.value.report.loss_curve) == 2


class TestSavedModel:
    def test_reload_scores_identically(self, tmp_path):
        trainset = tmp_path / "reload.jsonl"
        write_separable_trainset(trainset, n=300, seed=5)
        report = train(small_config(trainset, tmp_path / "model"))
        model, tokenizer, metadata = load_model(report.model_dir)
        assert metadata["prompt_version"] == "scorer-prompt/1"
        assert metadata["label_token_ids"]["Yes"] == tokenizer.yes_id
        yes1, no1 = score_prompt(model, tokenizer, render_prompt("alpha topic?", "fact"))
        model2, tokenizer2, _ = load_model(report.model_dir)
        yes2, no2 = score_prompt(model2, tokenizer2, render_prompt("alpha topic?", "fact"))
        assert (yes1, no1) == (yes2, no2)

    def test_fine_tune_from_saved_dir(self, tmp_path):
        trainset = tmp_path / "ft.jsonl"
        write_separable_trainset(trainset, n=300, seed=6)
        first = train(small_config(trainset, tmp_path / "base"))
        second = train(
            small_config(trainset, tmp_path / "tuned", base_model=first.model_dir, seed=7)
        )
        assert second.val_accuracy >= first.val_accuracy - 0.05

    def test_metadata_records_trainset_meta(self, tmp_path):
        trainset = tmp_path / "meta.jsonl"
        write_separable_trainset(trainset, n=60, seed=8, meta={"teacher_id": "recall"})
        report = train(small_config(trainset, tmp_path / "model"))
        metadata = json.loads((tmp_path / "model" / "metadata.json").read_text())
        assert metadata["trainset_meta"]["teacher_id"] == "recall"
        assert metadata["tokenizer"] == "word-level"

    def test_train_serve_prompt_identity(self):
        # the byte-identity contract the serving side depends on
        assert render_prompt("Q?", "prefix words") == "Q?\nprefix words"
        assert render_prompt("Q?", "") == "Q?\n"


class TestCli:
    def test_train_command_prints_report(self, tmp_path):
        from click.testing import CliRunner

        from iktrainer.cli import main

        trainset = tmp_path / "cli.jsonl"
        write_separable_trainset(trainset, n=80, seed=10)
        result = CliRunner().invoke(
            main,
            ["train", "--trainset", str(trainset), "--out", str(tmp_path / "model"), "--seed", "1"],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert payload["n_train"] == 72
        assert (tmp_path / "model" / "metadata.json").exists()

    def test_train_command_schema_error_exit_1(self, tmp_path):
        from click.testing import CliRunner

        from iktrainer.cli import main

        trainset = tmp_path / "empty.jsonl"
        trainset.write_text('{"_meta": {}}\n', encoding="utf-8")
        result = CliRunner().invoke(
            main, ["train", "--trainset", str(trainset), "--out", str(tmp_path / "model")]
        )
        assert result.exit_code == 1
