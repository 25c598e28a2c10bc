"""Deterministic in-process backends speaking the chat-completion schema.

These make every pipeline stage runnable offline: a generator stub with a
seeded "knowledge table" over a QA dataset, a judge stub that grades by gold
overlap, and a logit stub for first-token logprob plumbing. All of them count
calls and track the in-flight high-water mark so tests can assert the
client's concurrency bound.
"""

from __future__ import annotations

import hashlib
import threading
import time
from typing import Callable

from .errors import BackendError
from .records import QueryRecord
from .tokens import whitespace_tokens


def _hash_unit(*parts: str) -> float:
    """Deterministic hash of the parts mapped into [0, 1)."""
    digest = hashlib.sha256(":".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def chat_response(
    model: str,
    text: str,
    max_tokens: int,
    top_logprobs: list[tuple[str, float]] | None = None,
) -> dict:
    """Build a response dict the way a compliant server would."""
    tokens = whitespace_tokens(text)
    kept = tokens[:max_tokens]
    answer = " ".join(kept)
    choice: dict = {
        "index": 0,
        "message": {"role": "assistant", "content": answer},
        "finish_reason": "length" if len(tokens) > max_tokens else "stop",
    }
    if top_logprobs is not None:
        ranked = sorted(top_logprobs, key=lambda tl: tl[1], reverse=True)
        choice["logprobs"] = {
            "content": [
                {
                    "token": ranked[0][0],
                    "logprob": ranked[0][1],
                    "top_logprobs": [{"token": t, "logprob": lp} for t, lp in ranked],
                }
            ]
        }
    return {
        "model": model,
        "choices": [choice],
        "usage": {"completion_tokens": len(kept)},
    }


class InstrumentedStub:
    """Base: call counting plus an in-flight high-water mark."""

    def __init__(self, model_id: str = "stub-model", delay_s: float = 0.0):
        self.model_id = model_id
        self.delay_s = delay_s
        self.calls = 0
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    def chat(self, payload: dict) -> dict:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            if self.delay_s:
                time.sleep(self.delay_s)
            return self._reply(payload)
        finally:
            with self._lock:
                self._in_flight -= 1

    def _reply(self, payload: dict) -> dict:
        raise NotImplementedError

    @staticmethod
    def _prompt(payload: dict) -> str:
        return payload["messages"][0]["content"]


class EchoStub(InstrumentedStub):
    """Replies with a fixed text regardless of the prompt."""

    def __init__(self, reply: str, model_id: str = "stub-echo", delay_s: float = 0.0):
        super().__init__(model_id=model_id, delay_s=delay_s)
        self.reply = reply

    def _reply(self, payload: dict) -> dict:
        return chat_response(self.model_id, self.reply, payload["max_tokens"])


class FailingStub(InstrumentedStub):
    """Raises for prompts containing a marker; otherwise delegates."""

    def __init__(self, inner: InstrumentedStub, fail_marker: str):
        super().__init__(model_id=inner.model_id)
        self.inner = inner
        self.fail_marker = fail_marker

    def _reply(self, payload: dict) -> dict:
        if self.fail_marker in self._prompt(payload):
            raise BackendError(f"stub failure triggered by marker {self.fail_marker!r}")
        return self.inner._reply(payload)


class QAStub(InstrumentedStub):
    """Answers NORAG/RAG prompts over a fixed QA dataset.

    Parametric knowledge is a seeded per-question coin: the stub "knows"
    roughly `knowledge_rate` of the questions and then answers with a gold;
    otherwise it answers with a distractor gold from another record. On RAG
    prompts it reads the context first: a gold present in the documents is
    returned, and missing evidence distracts it into a wrong answer, which is
    the failure mode gated retrieval is meant to avoid.
    """

    RAG_MARKER = "Background documents:"

    def __init__(
        self,
        records: list[QueryRecord],
        knowledge_rate: float = 0.6,
        seed: int = 0,
        model_id: str = "stub-qa",
        delay_s: float = 0.0,
    ):
        super().__init__(model_id=model_id, delay_s=delay_s)
        self.records = list(records)
        self.knowledge_rate = knowledge_rate
        self.seed = seed
        self._by_question = {rec.question: rec for rec in self.records}

    def knows(self, record: QueryRecord) -> bool:
        return _hash_unit(str(self.seed), self.model_id, record.id) < self.knowledge_rate

    def _distractor(self, record: QueryRecord) -> str:
        golds_norm = [g.lower() for g in record.golds]
        for probe in range(len(self.records)):
            pick = int(_hash_unit(str(self.seed), record.id, str(probe)) * len(self.records))
            candidate = self.records[pick].golds[0]
            if all(g not in candidate.lower() and candidate.lower() not in g for g in golds_norm):
                return candidate
        return "unknown"

    def _find_record(self, prompt: str) -> QueryRecord | None:
        start = prompt.rfind("Question: ")
        if start < 0:
            return None
        segment = prompt[start + len("Question: "):]
        end = segment.find("\nAnswer:")
        question = segment[:end] if end >= 0 else segment
        return self._by_question.get(question.strip())

    def _reply(self, payload: dict) -> dict:
        prompt = self._prompt(payload)
        record = self._find_record(prompt)
        if record is None:
            return chat_response(self.model_id, "I cannot answer that.", payload["max_tokens"])
        if self.RAG_MARKER in prompt:
            docs_block = prompt.split(self.RAG_MARKER, 1)[1].lower()
            for gold in record.golds:
                if gold.lower() in docs_block:
                    text = f"According to the documents, the answer is {gold}."
                    return chat_response(self.model_id, text, payload["max_tokens"])
            text = f"The documents suggest the answer is {self._distractor(record)}."
            return chat_response(self.model_id, text, payload["max_tokens"])
        if self.knows(record):
            text = f"The answer is {record.golds[0]}."
        else:
            text = f"I believe the answer is {self._distractor(record)}."
        return chat_response(self.model_id, text, payload["max_tokens"])


class JudgeStub(InstrumentedStub):
    """Grades judge prompts by normalized gold overlap, replying "1" or "0"."""

    def __init__(self, model_id: str = "stub-judge", delay_s: float = 0.0):
        super().__init__(model_id=model_id, delay_s=delay_s)

    def _reply(self, payload: dict) -> dict:
        from .teacher import normalize_answer

        prompt = self._prompt(payload)
        candidate, golds = "", []
        for line in prompt.splitlines():
            if line.startswith("Candidate answer:"):
                candidate = line.split(":", 1)[1].strip()
            elif line.startswith("Gold answers:"):
                golds = [g.strip() for g in line.split(":", 1)[1].split(";") if g.strip()]
        norm_candidate = normalize_answer(candidate)
        correct = any(normalize_answer(g) and normalize_answer(g) in norm_candidate for g in golds)
        return chat_response(self.model_id, "1" if correct else "0", payload["max_tokens"])


class LogitStub(InstrumentedStub):
    """Serves first-token top_logprobs from a mapping or a callable.

    `source` is either {prompt: [(token, logprob), ...]} or a callable from
    the prompt to that list. `k_limit` caps how many alternatives the fake
    backend is capable of, for capability-error tests.
    """

    def __init__(
        self,
        source: dict[str, list[tuple[str, float]]] | Callable[[str], list[tuple[str, float]]],
        model_id: str = "stub-logits",
        k_limit: int | None = None,
        delay_s: float = 0.0,
    ):
        super().__init__(model_id=model_id, delay_s=delay_s)
        self.source = source
        self.k_limit = k_limit

    def _reply(self, payload: dict) -> dict:
        prompt = self._prompt(payload)
        if callable(self.source):
            candidates = self.source(prompt)
        else:
            if prompt not in self.source:
                raise BackendError(f"logit stub has no entry for prompt {prompt[:60]!r}")
            candidates = self.source[prompt]
        if payload.get("logprobs"):
            k = payload.get("top_logprobs", len(candidates))
            if self.k_limit is not None:
                k = min(k, self.k_limit)
            ranked = sorted(candidates, key=lambda tl: tl[1], reverse=True)[:k]
            return chat_response(self.model_id, ranked[0][0], payload["max_tokens"], top_logprobs=ranked)
        best = max(candidates, key=lambda tl: tl[1])[0]
        return chat_response(self.model_id, best, payload["max_tokens"])
