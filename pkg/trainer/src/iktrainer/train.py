"""Training loop: teach the LM to emit the silver label as its next token.

The loss is plain next-token cross-entropy at the final prompt position, with
the label token ("Yes"/"No") as target, so the saved model maximizes the
label-token likelihood given the rendered classifier prompt. Metrics come
from a held-out slice that never enters a gradient step.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .model import TinyCausalLM, WordTokenizer, load_model, save_model
from .prompt import PROMPT_VERSION, render_prompt
from .trainset import Example, TrainsetError, read_trainset


class TrainingDiverged(Exception):
    """Loss went non-finite; carries the partial report for the post-mortem."""

    def __init__(self, report: "TrainReport"):
        self.report = report
        super().__init__("training diverged: non-finite loss")


@dataclass
class TrainJobConfig:
    trainset_path: str
    out_dir: str
    base_model: str = "tiny-causal"  # built-in, or a saved model directory to fine-tune
    epochs: int = 1
    learning_rate: float = 1e-4
    adapter: bool = False  # full fine-tune is the only mode for the tiny built-in
    seed: int = 0
    batch_size: int = 2  # small batches = enough optimizer steps for 1-epoch runs
    validation_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")


@dataclass
class TrainReport:
    val_accuracy: float | None
    val_auc: float | None
    single_class_validation: bool
    loss_curve: list[float]
    model_dir: str
    n_train: int
    n_validation: int
    wall_seconds: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "val_accuracy": self.val_accuracy,
            "val_auc": self.val_auc,
            "single_class_validation": self.single_class_validation,
            "loss_curve": self.loss_curve,
            "model_dir": self.model_dir,
            "n_train": self.n_train,
            "n_validation": self.n_validation,
            "wall_seconds": self.wall_seconds,
        }


def _midrank_auc(y_true: np.ndarray, scores: np.ndarray) -> float:
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    below = np.concatenate(([0], np.cumsum(counts)))[:-1]
    ranks = (below + (counts + 1) / 2.0)[inverse]
    n_pos = int(y_true.sum())
    n_neg = len(y_true) - n_pos
    return float((ranks[y_true].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _collate(
    examples: list[Example], tokenizer: WordTokenizer, max_len: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    encoded = [tokenizer.encode(render_prompt(e.question, e.answer_prefix), max_len) for e in examples]
    lengths = torch.tensor([len(ids) for ids in encoded], dtype=torch.long)
    width = int(lengths.max())
    batch = torch.full((len(encoded), width), tokenizer.pad_id, dtype=torch.long)
    for row, ids in enumerate(encoded):
        batch[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
    targets = torch.tensor(
        [tokenizer.yes_id if e.label == "Yes" else tokenizer.no_id for e in examples],
        dtype=torch.long,
    )
    return batch, lengths, targets


def train(config: TrainJobConfig) -> TrainReport:
    """Fine-tune on the trainset and report held-out accuracy/AUC.

    Raises TrainsetError on contract violations and TrainingDiverged when the
    loss goes non-finite (the partial report rides on the exception).
    """
    started = time.monotonic()
    examples, meta = read_trainset(config.trainset_path)
    if meta.get("prompt_version", PROMPT_VERSION) != PROMPT_VERSION:
        raise TrainsetError(
            f"trainset was rendered with prompt {meta.get('prompt_version')!r}, "
            f"this trainer speaks {PROMPT_VERSION!r}"
        )

    torch.manual_seed(config.seed)
    order = list(examples)
    random.Random(config.seed).shuffle(order)
    n_val = max(1, int(len(order) * config.validation_fraction))
    if n_val >= len(order):
        raise TrainsetError("trainset too small to hold out a validation slice")
    val_set, train_set = order[:n_val], order[n_val:]

    if config.base_model == "tiny-causal":
        tokenizer = WordTokenizer.build(
            [render_prompt(e.question, e.answer_prefix) for e in train_set]
        )
        model = TinyCausalLM(vocab_size=len(tokenizer))
    else:
        model, tokenizer, _ = load_model(config.base_model)
    model.train()

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_curve: list[float] = []

    def partial_report() -> TrainReport:
        return TrainReport(
            val_accuracy=None,
            val_auc=None,
            single_class_validation=False,
            loss_curve=loss_curve,
            model_dir=config.out_dir,
            n_train=len(train_set),
            n_validation=len(val_set),
            wall_seconds=time.monotonic() - started,
        )

    rng = random.Random(config.seed + 1)
    for _ in range(config.epochs):
        epoch_order = list(train_set)
        rng.shuffle(epoch_order)
        for batch_examples in _batches(epoch_order, config.batch_size):
            ids, lengths, targets = _collate(batch_examples, tokenizer, model.config["max_len"])
            logits = model.next_token_logits(ids, lengths, tokenizer.pad_id)
            loss = F.cross_entropy(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingDiverged(partial_report())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_curve.append(float(loss.detach()))

    model.eval()
    y_true, margins = [], []
    with torch.no_grad():
        for batch_examples in _batches(val_set, 64):
            ids, lengths, targets = _collate(batch_examples, tokenizer, model.config["max_len"])
            logits = model.next_token_logits(ids, lengths, tokenizer.pad_id)
            margin = logits[:, tokenizer.yes_id] - logits[:, tokenizer.no_id]
            margins.extend(margin.tolist())
            y_true.extend((targets == tokenizer.yes_id).tolist())
    y = np.array(y_true, dtype=bool)
    margin_arr = np.array(margins)
    accuracy = float(np.mean((margin_arr >= 0) == y))
    single_class = bool(y.all() or (~y).all())
    auc = None if single_class else _midrank_auc(y, margin_arr)

    metadata = {
        "base_model": config.base_model,
        "tokenizer": "word-level",
        "label_token_ids": {"Yes": tokenizer.yes_id, "No": tokenizer.no_id},
        "prompt_version": PROMPT_VERSION,
        "trainset_meta": meta,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "seed": config.seed,
        "val_accuracy": accuracy,
        "val_auc": auc,
    }
    save_model(model, tokenizer, Path(config.out_dir), metadata)

    return TrainReport(
        val_accuracy=accuracy,
        val_auc=auc,
        single_class_validation=single_class,
        loss_curve=loss_curve,
        model_dir=config.out_dir,
        n_train=len(train_set),
        n_validation=len(val_set),
        wall_seconds=time.monotonic() - started,
    )
