"""QA dataset ingestion, splitting, subsetting, and persistence.

Canonical on-disk form is JSON-lines, one record per line, UTF-8:

    {"id": "q1", "question": "...", "golds": ["...", "..."]}

Unknown keys are kept on the record and survive a save/load round trip, so
inputs can carry extras such as precomputed retrieval contexts. CSV ingestion
maps columns id,question,golds with golds pipe-separated.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DatasetError, DuplicateIdError, EmptyDatasetError, SplitSizeError

REQUIRED_KEYS = ("id", "question", "golds")


@dataclass
class QueryRecord:
    """One QA item: opaque id, question text, non-empty gold answer list."""

    id: str
    question: str
    golds: list[str]
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise DatasetError(f"record id must be a non-empty string, got {self.id!r}")
        if not isinstance(self.question, str) or not self.question.strip():
            raise DatasetError(f"record {self.id!r}: question is empty")
        if not isinstance(self.golds, list) or not self.golds:
            raise DatasetError(f"record {self.id!r}: golds must be a non-empty list")
        if not all(isinstance(g, str) for g in self.golds):
            raise DatasetError(f"record {self.id!r}: golds must all be strings")

    def to_json_dict(self) -> dict:
        out = {"id": self.id, "question": self.question, "golds": list(self.golds)}
        out.update(self.extra)
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "QueryRecord":
        extra = {k: v for k, v in obj.items() if k not in REQUIRED_KEYS}
        rec = cls(id=obj["id"], question=obj["question"], golds=list(obj["golds"]), extra=extra)
        rec.validate()
        return rec


@dataclass
class DatasetSplit:
    """Train/validation partition plus the seed and permutation that made it."""

    train: list[QueryRecord]
    validation: list[QueryRecord]
    seed: int
    permutation: list[int] = field(default_factory=list)

    def train_ids(self) -> set[str]:
        return {r.id for r in self.train}

    def validation_ids(self) -> set[str]:
        return {r.id for r in self.validation}


@dataclass
class SubsetSpec:
    """Nested training-subset sizes for size-ablation runs."""

    sizes: list[int]
    seed: int

    def validate(self, train_size: int) -> None:
        for s in self.sizes:
            if s <= 0:
                raise SplitSizeError(f"subset size must be positive, got {s}")
            if s > train_size:
                raise SplitSizeError(f"subset size {s} exceeds train size {train_size}")


def load_dataset(path: str | Path, format: str | None = None) -> list[QueryRecord]:
    """Load QA records from a JSONL or CSV file.

    Args:
        path: input file; must exist.
        format: "jsonl" or "csv"; inferred from the suffix when None.

    Returns:
        Records in file order.

    Raises:
        DatasetError: parse failure (with line number), missing fields,
            duplicate ids, or an empty dataset.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError("dataset file not found", path=str(path))
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise DatasetError(f"unsupported dataset format {format!r}", path=str(path))

    records = _load_csv(path) if format == "csv" else _load_jsonl(path)

    if not records:
        raise EmptyDatasetError("dataset holds no records", path=str(path))
    seen: set[str] = set()
    dupes: list[str] = []
    for rec in records:
        if rec.id in seen:
            dupes.append(rec.id)
        seen.add(rec.id)
    if dupes:
        raise DuplicateIdError(sorted(set(dupes)), path=str(path))
    return records


def _load_jsonl(path: Path) -> list[QueryRecord]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", line=lineno, path=str(path)) from exc
            if not isinstance(obj, dict):
                raise DatasetError("record is not a JSON object", line=lineno, path=str(path))
            missing = [k for k in REQUIRED_KEYS if k not in obj]
            if missing:
                raise DatasetError(f"missing field(s) {missing}", line=lineno, path=str(path))
            try:
                records.append(QueryRecord.from_json_dict(obj))
            except DatasetError as exc:
                raise DatasetError(str(exc), line=lineno, path=str(path)) from exc
    return records


def _load_csv(path: Path) -> list[QueryRecord]:
    records = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(REQUIRED_KEYS).issubset(reader.fieldnames):
            raise DatasetError(
                f"CSV header must contain columns {list(REQUIRED_KEYS)}, got {reader.fieldnames}",
                path=str(path),
            )
        for lineno, row in enumerate(reader, start=2):
            missing = [k for k in REQUIRED_KEYS if row.get(k) in (None, "")]
            if missing:
                raise DatasetError(f"missing field(s) {missing}", line=lineno, path=str(path))
            golds = [g for g in row["golds"].split("|") if g != ""]
            extra = {k: v for k, v in row.items() if k not in REQUIRED_KEYS and v not in (None, "")}
            try:
                rec = QueryRecord(id=row["id"], question=row["question"], golds=golds, extra=extra)
                rec.validate()
            except DatasetError as exc:
                raise DatasetError(str(exc), line=lineno, path=str(path)) from exc
            records.append(rec)
    return records


def save_dataset(records: list[QueryRecord], path: str | Path) -> None:
    """Write records as canonical JSONL (single writer; atomic rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    tmp.replace(path)


def split_dataset(records: list[QueryRecord], validation_size: int, seed: int) -> DatasetSplit:
    """Carve a seeded validation sample out of `records`.

    Deterministic for a fixed (records, validation_size, seed): the permutation
    used is stored on the returned split so downstream artifacts are
    reproducible from the artifact alone.
    """
    if not 0 < validation_size < len(records):
        raise SplitSizeError(
            f"validation_size must be in (0, {len(records)}), got {validation_size}"
        )
    perm = list(range(len(records)))
    random.Random(seed).shuffle(perm)
    val_idx = perm[:validation_size]
    train_idx = perm[validation_size:]
    return DatasetSplit(
        train=[records[i] for i in train_idx],
        validation=[records[i] for i in val_idx],
        seed=seed,
        permutation=perm,
    )


def subset_train(split: DatasetSplit, spec: SubsetSpec) -> list[tuple[int, list[QueryRecord]]]:
    """Produce nested training subsets: smaller ones are prefixes of larger ones.

    One seeded shuffle of the train list is taken and every requested size is a
    prefix of it, so ids(subset(s1)) is a subset of ids(subset(s2)) whenever
    s1 < s2. That keeps size-ablation curves comparable.
    """
    spec.validate(len(split.train))
    order = list(split.train)
    random.Random(spec.seed).shuffle(order)
    return [(size, order[:size]) for size in spec.sizes]
