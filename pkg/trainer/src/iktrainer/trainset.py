"""Parser for the trainset JSONL contract.

First line may carry a {"_meta": {...}} header (tokenizer, teacher, cutoff,
source dataset, prompt version); every other line is one training example:

    {"id": str, "question": str, "answer_prefix": str,
     "prefix_tokens": int, "label": "Yes" | "No"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

REQUIRED_FIELDS = ("id", "question", "answer_prefix", "prefix_tokens", "label")
LABELS = ("Yes", "No")


class TrainsetError(Exception):
    """Contract violation; the message names the offending field/line."""


@dataclass
class Example:
    id: str
    question: str
    answer_prefix: str
    prefix_tokens: int
    label: str


def read_trainset(path: str | Path) -> tuple[list[Example], dict]:
    path = Path(path)
    if not path.exists():
        raise TrainsetError(f"trainset file not found: {path}")
    examples: list[Example] = []
    meta: dict = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrainsetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if lineno == 1 and "_meta" in obj:
                meta = obj["_meta"]
                continue
            missing = [f for f in REQUIRED_FIELDS if f not in obj]
            if missing:
                raise TrainsetError(f"{path}:{lineno}: missing field {missing[0]!r}")
            if obj["label"] not in LABELS:
                raise TrainsetError(
                    f"{path}:{lineno}: field 'label' must be Yes or No, got {obj['label']!r}"
                )
            if not isinstance(obj["prefix_tokens"], int) or obj["prefix_tokens"] < 0:
                raise TrainsetError(
                    f"{path}:{lineno}: field 'prefix_tokens' must be a non-negative int"
                )
            examples.append(
                Example(
                    id=obj["id"],
                    question=obj["question"],
                    answer_prefix=obj["answer_prefix"],
                    prefix_tokens=obj["prefix_tokens"],
                    label=obj["label"],
                )
            )
    if not examples:
        raise TrainsetError(f"{path}: trainset holds no examples")
    return examples, meta
