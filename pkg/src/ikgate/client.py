"""Chat-completion client: caching, bounded concurrency, retries, audit log.

Speaks the de-facto standard HTTP JSON chat schema (messages array,
max_tokens, temperature, logprobs/top_logprobs) so any OpenAI-compatible
endpoint works; the in-process stubs in `ikgate.stubs` implement the same
schema. Every response is cached in a content-addressed directory keyed by a
hash of (model, prompt, decoding params), which makes reruns free and greedy
decoding reproducible.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import requests

from .errors import (
    BackendError,
    CapabilityError,
    NetworkDisabledError,
    PromptTooLongError,
)
from .tokens import count_tokens


class Mode(str, Enum):
    NORAG = "norag"
    RAG = "rag"


FINISH_REASONS = ("stop", "length", "error")


@dataclass
class GenerationRequest:
    query_id: str
    mode: Mode
    prompt: str
    max_tokens: int
    context_docs: list[str] | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.mode == Mode.RAG and not self.context_docs:
            raise ValueError(f"[{self.query_id}] RAG request carries no context documents")


@dataclass
class Generation:
    """A model answer for one query under one mode, with token accounting."""

    query_id: str
    mode: Mode
    answer: str
    token_count: int
    model_id: str
    finish_reason: str

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "mode": self.mode.value,
            "answer": self.answer,
            "token_count": self.token_count,
            "model_id": self.model_id,
            "finish_reason": self.finish_reason,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Generation":
        return cls(
            query_id=obj["query_id"],
            mode=Mode(obj["mode"]),
            answer=obj["answer"],
            token_count=obj["token_count"],
            model_id=obj["model_id"],
            finish_reason=obj["finish_reason"],
        )


@dataclass
class FirstTokenLogits:
    """Top-K candidates for the first generated token, verbatim from the backend."""

    query_id: str
    candidates: list[tuple[str, float]]
    k: int

    def __post_init__(self) -> None:
        if self.k < 2:
            raise CapabilityError(f"top-K must be >= 2, got {self.k}", query_id=self.query_id)
        for token, lp in self.candidates:
            if lp > 0:
                raise BackendError(
                    f"logprob for {token!r} is positive ({lp})", query_id=self.query_id
                )
        lps = [lp for _, lp in self.candidates]
        if lps != sorted(lps, reverse=True):
            raise BackendError("candidates not sorted by logprob", query_id=self.query_id)


@dataclass
class BackendConfig:
    base_url: str = "stub://"
    model_id: str = "stub-model"
    max_parallel_requests: int = 4
    retry_limit: int = 3
    timeout_s: float = 30.0
    cache_dir: str | None = None
    max_prompt_tokens: int | None = None
    retry_backoff_s: float = 0.5
    api_key: str | None = None

    def __post_init__(self) -> None:
        if self.max_parallel_requests < 1:
            raise ValueError("max_parallel_requests must be >= 1")


class ChatBackend(Protocol):
    """Anything that answers one chat-completion payload with a response dict."""

    def chat(self, payload: dict) -> dict: ...


class HttpChatBackend:
    """Remote OpenAI-compatible endpoint.

    Retries transport errors with exponential backoff; HTTP-level failures
    (4xx/5xx) and well-formed refusals are surfaced immediately, never
    retried. With offline=True any attempt to touch the network raises.
    """

    def __init__(self, config: BackendConfig, offline: bool = False):
        self.config = config
        self.offline = offline
        self._session = requests.Session()
        if config.api_key:
            self._session.headers["Authorization"] = f"Bearer {config.api_key}"

    def chat(self, payload: dict) -> dict:
        if self.offline:
            raise NetworkDisabledError(
                f"offline mode: refusing to call {self.config.base_url}"
            )
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_exc: Exception | None = None
        for attempt in range(self.config.retry_limit + 1):
            try:
                resp = self._session.post(url, json=payload, timeout=self.config.timeout_s)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.config.retry_limit:
                    time.sleep(self.config.retry_backoff_s * (2**attempt))
                continue
            if resp.status_code != 200:
                raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            return resp.json()
        raise BackendError(f"transport failure after {self.config.retry_limit + 1} attempts: {last_exc}")


class ResponseCache:
    """Content-addressed directory of raw response files.

    Concurrent readers are fine; writes go through a temp file plus atomic
    rename, so the worst concurrency case is recomputing one key.
    """

    def __init__(self, cache_dir: str | Path):
        self.root = Path(cache_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key_for(payload: dict) -> str:
        canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, response: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{threading.get_ident()}")
        tmp.write_text(json.dumps(response, sort_keys=True, ensure_ascii=False), encoding="utf-8")
        tmp.replace(path)


@dataclass
class BatchFailure:
    index: int
    query_id: str
    error: str


@dataclass
class BatchResult:
    """Generations aligned with the input order; failures itemized alongside."""

    generations: list[Generation | None]
    failures: list[BatchFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def successes(self) -> list[Generation]:
        return [g for g in self.generations if g is not None]


@dataclass
class ClientStats:
    backend_calls: int = 0
    cache_hits: int = 0


class InferenceClient:
    """Drives one chat backend with caching and bounded concurrency.

    Shareable across threads. Decoding is always greedy (temperature 0);
    single deterministic answers keep the cache coherent.
    """

    def __init__(
        self,
        backend: ChatBackend,
        config: BackendConfig,
        audit_log: str | Path | None = None,
    ):
        self.backend = backend
        self.config = config
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None
        self.stats = ClientStats()
        self._audit_path = Path(audit_log) if audit_log else None
        self._lock = threading.Lock()

    # -- low level ---------------------------------------------------------

    def _payload(self, prompt: str, max_tokens: int, top_logprobs: int | None = None) -> dict:
        payload: dict[str, Any] = {
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            "temperature": 0.0,
        }
        if top_logprobs is not None:
            payload["logprobs"] = True
            payload["top_logprobs"] = top_logprobs
        return payload

    def _dispatch(self, payload: dict, query_id: str | None = None) -> dict:
        key = ResponseCache.key_for(payload)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.stats.cache_hits += 1
                return hit
        try:
            response = self.backend.chat(payload)
        except BackendError as exc:
            if exc.query_id is None and query_id is not None:
                raise type(exc)(str(exc), query_id=query_id) from exc
            raise
        with self._lock:
            self.stats.backend_calls += 1
        if self.cache is not None:
            self.cache.put(key, response)
        self._audit(payload, response)
        return response

    def _audit(self, payload: dict, response: dict) -> None:
        if self._audit_path is None:
            return
        line = json.dumps({"request": payload, "response": response}, sort_keys=True)
        with self._lock:
            with self._audit_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def _check_prompt(self, prompt: str, query_id: str | None) -> None:
        limit = self.config.max_prompt_tokens
        if limit is not None and count_tokens(prompt) > limit:
            raise PromptTooLongError(
                f"prompt has {count_tokens(prompt)} tokens, limit is {limit}",
                query_id=query_id,
            )

    # -- operations ----------------------------------------------------------

    def generate(self, request: GenerationRequest) -> Generation:
        """One greedy completion; served from cache when the key matches."""
        self._check_prompt(request.prompt, request.query_id)
        payload = self._payload(request.prompt, request.max_tokens)
        response = self._dispatch(payload, query_id=request.query_id)
        return self._parse_generation(response, request)

    def _parse_generation(self, response: dict, request: GenerationRequest) -> Generation:
        try:
            choice = response["choices"][0]
            answer = choice["message"]["content"] or ""
            finish = choice.get("finish_reason", "stop")
            token_count = response.get("usage", {}).get("completion_tokens")
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(
                f"malformed chat response: {exc!r}", query_id=request.query_id
            ) from exc
        if token_count is None:
            token_count = count_tokens(answer)
        if finish not in FINISH_REASONS:
            finish = "stop"
        if token_count > request.max_tokens:
            raise BackendError(
                f"backend returned {token_count} tokens for max_tokens={request.max_tokens}",
                query_id=request.query_id,
            )
        if (token_count == 0) != (answer == ""):
            raise BackendError(
                f"token_count={token_count} inconsistent with answer length {len(answer)}",
                query_id=request.query_id,
            )
        return Generation(
            query_id=request.query_id,
            mode=request.mode,
            answer=answer,
            token_count=token_count,
            model_id=response.get("model", self.config.model_id),
            finish_reason=finish,
        )

    def first_token_logits(self, prompt: str, k: int = 8, query_id: str = "") -> FirstTokenLogits:
        """Top-K candidates for the first generated position, no normalization.

        Raises CapabilityError when the backend cannot report logprobs or
        supports fewer than two alternatives. A missing Yes/No among the
        candidates is *not* an error here; the scorer decides that.
        """
        if k < 2:
            raise CapabilityError(f"top-K must be >= 2, got {k}", query_id=query_id)
        self._check_prompt(prompt, query_id)
        payload = self._payload(prompt, max_tokens=1, top_logprobs=k)
        response = self._dispatch(payload, query_id=query_id)
        try:
            logprobs = response["choices"][0]["logprobs"]
            if logprobs is None:
                raise KeyError("logprobs")
            top = logprobs["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityError(
                "backend response carries no per-token logprobs", query_id=query_id
            ) from exc
        if len(top) < 2:
            raise CapabilityError(
                f"backend returned top-{len(top)} logprobs, need >= 2", query_id=query_id
            )
        candidates = [(entry["token"], float(entry["logprob"])) for entry in top]
        candidates.sort(key=lambda tl: tl[1], reverse=True)
        return FirstTokenLogits(query_id=query_id, candidates=candidates, k=len(candidates))

    def batch_run(self, requests_list: list[GenerationRequest]) -> BatchResult:
        """Run many generations concurrently, preserving input order.

        At most config.max_parallel_requests are in flight. Per-item failures
        do not stop the batch; they come back itemized in the result.
        """
        generations: list[Generation | None] = [None] * len(requests_list)
        failures: list[BatchFailure] = []

        def run_one(idx: int) -> tuple[int, Generation | None, str | None]:
            try:
                return idx, self.generate(requests_list[idx]), None
            except Exception as exc:
                return idx, None, f"{type(exc).__name__}: {exc}"

        with ThreadPoolExecutor(max_workers=self.config.max_parallel_requests) as pool:
            for idx, gen, err in pool.map(run_one, range(len(requests_list))):
                if err is None:
                    generations[idx] = gen
                else:
                    failures.append(BatchFailure(idx, requests_list[idx].query_id, err))

        failures.sort(key=lambda f: f.index)
        return BatchResult(generations=generations, failures=failures)


def save_generations(generations: list[Generation], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for gen in generations:
            fh.write(json.dumps(gen.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def load_generations(path: str | Path) -> list[Generation]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Generation.from_json_dict(json.loads(line)))
    return out
