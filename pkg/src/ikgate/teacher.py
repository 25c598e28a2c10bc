"""Silver-label teachers and trainset export.

A teacher grades a (query, closed-book answer) pair into a raw score in
[0, 1] plus a binarized Yes/No label. Three are provided: substring Match,
token-overlap Recall, and an LLM judge whose numeric reply is parsed and
binarized. Labels + answer prefixes are then exported as the trainset
contract consumed by the classifier trainer:

    {"_meta": {"tokenizer": ..., "teacher_id": ..., "cutoff": ..., "source_dataset": ...}}
    {"id": ..., "question": ..., "answer_prefix": ..., "prefix_tokens": ..., "label": "Yes"}
    ...
"""

from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .client import Generation, GenerationRequest, InferenceClient, Mode
from .errors import DatasetError, ExportError, JudgeParseError, MetricError
from .prompts import PROMPT_VERSIONS, JudgePrompt
from .records import QueryRecord
from .tokens import ALLOWED_PREFIX_TOKENS, WHITESPACE_TOKENIZER, Tokenizer, truncate_tokens, whitespace_tokens

YES = "Yes"
NO = "No"

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = re.compile(r"[^\w\s]")


def normalize_answer(text: str) -> str:
    """QA-convention normalization: casefold, drop punctuation and articles."""
    text = text.lower()
    text = _PUNCT.sub(" ", text)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def match_metric(answer: str, golds: list[str]) -> float:
    """1.0 iff any normalized gold occurs (at word boundaries) in the answer."""
    if not golds:
        raise MetricError("match_metric needs at least one gold answer")
    padded = f" {normalize_answer(answer)} "
    for gold in golds:
        norm = normalize_answer(gold)
        if norm and f" {norm} " in padded:
            return 1.0
    return 0.0


def recall_metric(answer: str, golds: list[str]) -> float:
    """Best token coverage of any gold by the answer's token multiset.

    Golds that normalize to zero tokens are skipped; if every gold does,
    there is nothing to measure and that is an error.
    """
    if not golds:
        raise MetricError("recall_metric needs at least one gold answer")
    answer_counts = Counter(normalize_answer(answer).split())
    best: float | None = None
    for gold in golds:
        gold_counts = Counter(normalize_answer(gold).split())
        total = sum(gold_counts.values())
        if total == 0:
            continue
        covered = sum((gold_counts & answer_counts).values())
        score = covered / total
        best = score if best is None else max(best, score)
    if best is None:
        raise MetricError("every gold answer normalized to zero tokens")
    return best


@dataclass
class TeacherVerdict:
    """Raw teacher score plus its binarized silver label."""

    query_id: str
    teacher_id: str
    raw_score: float
    label: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.raw_score <= 1.0:
            raise ValueError(f"raw_score must be in [0,1], got {self.raw_score}")
        if self.label not in (YES, NO):
            raise ValueError(f"label must be Yes or No, got {self.label!r}")

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "teacher_id": self.teacher_id,
            "raw_score": self.raw_score,
            "label": self.label,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TeacherVerdict":
        return cls(obj["query_id"], obj["teacher_id"], obj["raw_score"], obj["label"])


def binarize(raw_score: float, cutoff: float) -> str:
    return YES if raw_score >= cutoff else NO


class MatchTeacher:
    def __init__(self, cutoff: float = 0.5):
        self.cutoff = cutoff
        self.teacher_id = "match"

    def verdict(self, query: QueryRecord, generation: Generation) -> TeacherVerdict:
        raw = match_metric(generation.answer, query.golds)
        return TeacherVerdict(query.id, self.teacher_id, raw, binarize(raw, self.cutoff))


class RecallTeacher:
    def __init__(self, cutoff: float = 0.5):
        self.cutoff = cutoff
        self.teacher_id = "recall"

    def verdict(self, query: QueryRecord, generation: Generation) -> TeacherVerdict:
        raw = recall_metric(generation.answer, query.golds)
        return TeacherVerdict(query.id, self.teacher_id, raw, binarize(raw, self.cutoff))


# First numeric literal in the reply, required to land in [0, 1].
_SCORE_RE = re.compile(r"\d+(?:\.\d+)?|\.\d+")

_REPROMPT_SUFFIX = "\n\nYour previous reply was not a number. Reply with only a single number between 0 and 1."


def parse_judge_score(reply: str) -> float | None:
    match = _SCORE_RE.search(reply)
    if match is None:
        return None
    value = float(match.group(0))
    return value if 0.0 <= value <= 1.0 else None


class LlmJudgeTeacher:
    """LLM-as-a-judge: ask for a numeric grade, binarize it.

    One reprompt on an unparseable reply, then the query is flagged for
    manual exclusion by raising JudgeParseError.
    """

    def __init__(self, client: InferenceClient, cutoff: float = 0.5, max_reply_tokens: int = 16):
        self.client = client
        self.cutoff = cutoff
        self.max_reply_tokens = max_reply_tokens
        self.teacher_id = f"judge:{client.config.model_id}"

    def verdict(self, query: QueryRecord, generation: Generation) -> TeacherVerdict:
        if generation.query_id != query.id:
            raise ValueError(
                f"generation {generation.query_id!r} does not belong to query {query.id!r}"
            )
        prompt = JudgePrompt(query.question, generation.answer, query.golds).render()
        replies = []
        for attempt_prompt in (prompt, prompt + _REPROMPT_SUFFIX):
            reply = self.client.generate(
                GenerationRequest(
                    query_id=query.id,
                    mode=Mode.NORAG,
                    prompt=attempt_prompt,
                    max_tokens=self.max_reply_tokens,
                )
            ).answer
            replies.append(reply)
            raw = parse_judge_score(reply)
            if raw is not None:
                return TeacherVerdict(query.id, self.teacher_id, raw, binarize(raw, self.cutoff))
        raise JudgeParseError(query.id, replies)


def batch_verdicts(
    teacher,
    queries: list[QueryRecord],
    generations: list[Generation],
    max_parallel: int = 1,
) -> tuple[list[TeacherVerdict], list[tuple[str, str]]]:
    """Grade aligned (query, generation) pairs; flagged parse failures are
    returned as (query_id, error) instead of aborting the batch."""
    if len(queries) != len(generations):
        raise ValueError("queries and generations must align")

    def one(pair):
        query, gen = pair
        try:
            return teacher.verdict(query, gen), None
        except JudgeParseError as exc:
            return None, (query.id, str(exc))

    pairs = list(zip(queries, generations))
    if max_parallel > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            outcomes = list(pool.map(one, pairs))
    else:
        outcomes = [one(p) for p in pairs]

    verdicts = [v for v, _ in outcomes if v is not None]
    flagged = [f for _, f in outcomes if f is not None]
    return verdicts, flagged


@dataclass
class TrainRecord:
    """One classifier training example: question, answer prefix, silver label."""

    query_id: str
    question: str
    answer_prefix: str
    prefix_tokens: int
    label: str

    def __post_init__(self) -> None:
        if self.prefix_tokens not in ALLOWED_PREFIX_TOKENS:
            raise ValueError(
                f"prefix_tokens must be one of {ALLOWED_PREFIX_TOKENS}, got {self.prefix_tokens}"
            )
        if self.prefix_tokens == 0 and self.answer_prefix != "":
            raise ValueError("prefix_tokens=0 requires an empty answer_prefix")
        if self.label not in (YES, NO):
            raise ValueError(f"label must be Yes or No, got {self.label!r}")

    def to_json_dict(self) -> dict:
        return {
            "id": self.query_id,
            "question": self.question,
            "answer_prefix": self.answer_prefix,
            "prefix_tokens": self.prefix_tokens,
            "label": self.label,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrainRecord":
        return cls(
            query_id=obj["id"],
            question=obj["question"],
            answer_prefix=obj["answer_prefix"],
            prefix_tokens=obj["prefix_tokens"],
            label=obj["label"],
        )


def export_trainset(
    queries: list[QueryRecord],
    norag_generations: list[Generation],
    verdicts: list[TeacherVerdict],
    prefix_tokens: int,
    tokenizer: Tokenizer = whitespace_tokens,
) -> list[TrainRecord]:
    """Build TrainRecords in query order.

    The answer prefix is the first `prefix_tokens` tokens of the closed-book
    answer (whole answer when shorter). Queries lacking a generation or a
    verdict are collected and reported together.
    """
    gen_by_id = {g.query_id: g for g in norag_generations}
    verdict_by_id = {v.query_id: v for v in verdicts}
    missing_gen = [q.id for q in queries if q.id not in gen_by_id]
    missing_verdict = [q.id for q in queries if q.id not in verdict_by_id]
    if missing_gen or missing_verdict:
        raise ExportError(missing_gen, missing_verdict)

    out = []
    for query in queries:
        prefix = truncate_tokens(gen_by_id[query.id].answer, prefix_tokens, tokenizer)
        out.append(
            TrainRecord(
                query_id=query.id,
                question=query.question,
                answer_prefix=prefix,
                prefix_tokens=prefix_tokens,
                label=verdict_by_id[query.id].label,
            )
        )
    return out


def trainset_meta(
    teacher_id: str,
    cutoff: float,
    source_dataset: str,
    prefix_tokens: int,
    tokenizer_name: str = WHITESPACE_TOKENIZER,
) -> dict:
    return {
        "tokenizer": tokenizer_name,
        "teacher_id": teacher_id,
        "cutoff": cutoff,
        "source_dataset": source_dataset,
        "prefix_tokens": prefix_tokens,
        "prompt_version": PROMPT_VERSIONS["scorer"],
    }


def write_trainset(path: str | Path, records: list[TrainRecord], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_meta": meta}, sort_keys=True, ensure_ascii=False) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_trainset(path: str | Path) -> tuple[list[TrainRecord], dict]:
    path = Path(path)
    records: list[TrainRecord] = []
    meta: dict = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON ({exc.msg})", line=lineno, path=str(path)) from exc
            if lineno == 1 and "_meta" in obj:
                meta = obj["_meta"]
                continue
            try:
                records.append(TrainRecord.from_json_dict(obj))
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"bad train record: {exc}", line=lineno, path=str(path)) from exc
    if not records:
        raise DatasetError("trainset holds no records", path=str(path))
    return records, meta


def save_verdicts(verdicts: list[TeacherVerdict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def load_verdicts(path: str | Path) -> list[TeacherVerdict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(TeacherVerdict.from_json_dict(json.loads(line)))
    return out
