"""The "I Know" score: two-way softmax over Yes/No first-token logits.

Backends produce a (yes_logit, no_logit) pair per query: a remote /score
endpoint, an adapter over any chat backend exposing first-token logprobs, or
a calibrated stub that plants scores at a requested accuracy/AUC for offline
runs. The softmax is restricted to the two class tokens; nothing else in the
vocabulary participates.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Protocol

import numpy as np
import requests

from .client import FirstTokenLogits, InferenceClient
from .errors import (
    BackendError,
    InfeasibleCalibrationError,
    MissingClassError,
    NetworkDisabledError,
    ScorerError,
)
from .prompts import render_scorer_prompt
from .records import QueryRecord
from .teacher import NO, YES

_ONE_BELOW_1 = math.nextafter(1.0, 0.0)
_ONE_ABOVE_0 = math.nextafter(0.0, 1.0)


def ik_from_logits(yes_logit: float, no_logit: float) -> float:
    """1 / (1 + exp(no - yes)), computed in the overflow-safe branch.

    Strictly increasing in yes_logit, strictly decreasing in no_logit, and
    clamped to the open interval (0, 1): deep saturation returns the nearest
    representable float instead of exactly 0 or 1.
    """
    if not (math.isfinite(yes_logit) and math.isfinite(no_logit)):
        raise ScorerError(f"logits must be finite, got ({yes_logit}, {no_logit})")
    diff = no_logit - yes_logit
    if diff >= 0:
        e = math.exp(-diff)
        ik = e / (1.0 + e)
    else:
        ik = 1.0 / (1.0 + math.exp(diff))
    return min(max(ik, _ONE_ABOVE_0), _ONE_BELOW_1)


def extract_yes_no(
    candidates: FirstTokenLogits | Iterable[tuple[str, float]],
) -> tuple[float, float]:
    """Pick the Yes and No logits out of first-position candidates.

    Surface variants (" Yes", "yes", "NO", ...) are folded by trimming and
    casefolding; each class takes the maximum over its variants, tolerating
    tokenizer drift. Both classes must be present.
    """
    pairs = list(candidates.candidates if isinstance(candidates, FirstTokenLogits) else candidates)
    best: dict[str, float] = {}
    for token, value in pairs:
        cls = token.strip().casefold()
        if cls in ("yes", "no"):
            best[cls] = max(best.get(cls, -math.inf), float(value))
    for cls in ("yes", "no"):
        if cls not in best:
            raise MissingClassError(cls, pairs)
    return best["yes"], best["no"]


@dataclass
class IKScore:
    """Probability the model knows the answer, from the Yes/No logits."""

    query_id: str
    ik: float
    yes_logit: float
    no_logit: float
    prefix_tokens: int

    @classmethod
    def from_logits(
        cls, query_id: str, yes_logit: float, no_logit: float, prefix_tokens: int
    ) -> "IKScore":
        return cls(
            query_id=query_id,
            ik=ik_from_logits(yes_logit, no_logit),
            yes_logit=float(yes_logit),
            no_logit=float(no_logit),
            prefix_tokens=prefix_tokens,
        )

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "ik": self.ik,
            "yes_logit": self.yes_logit,
            "no_logit": self.no_logit,
            "prefix_tokens": self.prefix_tokens,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "IKScore":
        return cls(obj["query_id"], obj["ik"], obj["yes_logit"], obj["no_logit"], obj["prefix_tokens"])


class ScorerBackend(Protocol):
    """Every scorer backend yields one (yes_logit, no_logit) pair per query."""

    kind: str

    def logits(self, query_id: str, question: str, answer_prefix: str) -> tuple[float, float]: ...


class EndpointScorer:
    """Remote classifier behind the POST /score wire contract."""

    kind = "remote_endpoint"

    def __init__(self, base_url: str, timeout_s: float = 30.0, offline: bool = False):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.offline = offline
        self._session = requests.Session()

    def logits(self, query_id: str, question: str, answer_prefix: str) -> tuple[float, float]:
        if self.offline:
            raise NetworkDisabledError(
                f"offline mode: refusing to call {self.base_url}", query_id=query_id
            )
        try:
            resp = self._session.post(
                f"{self.base_url}/score",
                json={"question": question, "answer_prefix": answer_prefix},
                timeout=self.timeout_s,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise BackendError(f"/score transport failure: {exc}", query_id=query_id) from exc
        if resp.status_code != 200:
            raise ScorerError(f"[{query_id}] /score returned HTTP {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        if "yes_logit" not in body or "no_logit" not in body:
            raise ScorerError(f"[{query_id}] /score response missing logit fields: {body}")
        # Funnel through the extraction path so endpoint responses honor the
        # same class-presence contract as chat logprobs.
        return extract_yes_no([(YES, float(body["yes_logit"])), (NO, float(body["no_logit"]))])


class ChatLogprobScorer:
    """Adapter: any chat backend with first-token logprobs can score."""

    kind = "chat_logprob_adapter"

    def __init__(self, client: InferenceClient, top_k: int = 8):
        self.client = client
        self.top_k = top_k

    def logits(self, query_id: str, question: str, answer_prefix: str) -> tuple[float, float]:
        prompt = render_scorer_prompt(question, answer_prefix)
        candidates = self.client.first_token_logits(prompt, k=self.top_k, query_id=query_id)
        return extract_yes_no(candidates)


class StubScorer:
    """Seed-deterministic planted scores, optionally calibrated to ACC/AUC.

    Direct construction takes {query_id: ik}; `calibrated` plants scores on
    a label set using the binormal model, where an AUC target fixes the
    separation of the two score distributions and the decision boundary is
    then shifted to meet the accuracy target.
    """

    kind = "calibrated_stub"

    def __init__(self, ik_by_id: dict[str, float]):
        self._logits: dict[str, tuple[float, float]] = {}
        for query_id, ik in ik_by_id.items():
            if not 0.0 < ik < 1.0:
                raise ScorerError(f"planted ik for {query_id!r} must be in (0,1), got {ik}")
            self._logits[query_id] = (math.log(ik / (1.0 - ik)), 0.0)
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_logit_pairs(cls, pairs: dict[str, tuple[float, float]]) -> "StubScorer":
        stub = cls({})
        stub._logits = {qid: (float(y), float(n)) for qid, (y, n) in pairs.items()}
        return stub

    @classmethod
    def calibrated(
        cls,
        target_acc: float,
        target_auc: float,
        labels: list[tuple[str, str]],
        seed: int,
    ) -> "StubScorer":
        """Plant scores whose measured ACC/AUC land on the targets.

        labels: (query_id, "Yes"/"No") pairs. Expected measurement error is
        O(1/sqrt(n)); within +/-0.02 for n >= 2000.
        """
        if not (0.5 <= target_acc < 1.0 and 0.5 <= target_auc < 1.0):
            raise InfeasibleCalibrationError(
                f"targets must satisfy 0.5 <= t < 1, got acc={target_acc} auc={target_auc}"
            )
        if not labels:
            raise InfeasibleCalibrationError("no labels to calibrate against")
        for _, label in labels:
            if label not in (YES, NO):
                raise InfeasibleCalibrationError(f"labels must be Yes/No, got {label!r}")

        norm = NormalDist()
        delta = math.sqrt(2.0) * norm.inv_cdf(target_auc)
        boundary = _solve_boundary(target_acc, delta, labels)

        rng = np.random.default_rng(seed)
        pairs: dict[str, tuple[float, float]] = {}
        for query_id, label in labels:
            z = rng.normal(loc=delta if label == YES else 0.0, scale=1.0)
            pairs[query_id] = (z - boundary, 0.0)
        return cls.from_logit_pairs(pairs)

    def logits(self, query_id: str, question: str, answer_prefix: str) -> tuple[float, float]:
        with self._lock:
            self.calls += 1
        if query_id not in self._logits:
            raise ScorerError(f"stub scorer has no planted score for {query_id!r}")
        return self._logits[query_id]


_ACC_TOLERANCE = 0.02  # documented measurement tolerance of the stub


def _solve_boundary(target_acc: float, delta: float, labels: list[tuple[str, str]]) -> float:
    """Find t with p_yes*(1-Phi(t-delta)) + p_no*Phi(t) = target_acc, by bisection.

    The binormal curve caps attainable accuracy for a given separation; a
    target above the cap but inside the stub's +/-0.02 tolerance is clamped
    to the cap, anything further is infeasible.
    """
    norm = NormalDist()
    n = len(labels)
    p_yes = sum(1 for _, lab in labels if lab == YES) / n
    p_no = 1.0 - p_yes

    def acc_at(t: float) -> float:
        return p_yes * (1.0 - norm.cdf(t - delta)) + p_no * norm.cdf(t)

    lo, hi = min(0.0, delta) - 12.0, max(0.0, delta) + 12.0
    if delta > 0:
        if p_yes in (0.0, 1.0):
            t_star = delta / 2.0  # degenerate single-class labels; curve is monotone anyway
        else:
            t_star = (delta * delta - 2.0 * math.log(p_yes / p_no)) / (2.0 * delta)
        t_star = min(max(t_star, lo), hi)
    else:
        t_star = hi if p_no >= p_yes else lo

    best = acc_at(t_star)
    if target_acc > best + _ACC_TOLERANCE:
        raise InfeasibleCalibrationError(
            f"accuracy {target_acc} unreachable at AUC giving separation {delta:.3f} "
            f"(max attainable {best:.4f})"
        )
    if target_acc >= best:
        return t_star  # clamp to the curve's cap, still inside tolerance
    target = target_acc

    if acc_at(lo) <= target <= best:
        a, b = lo, t_star  # ascending branch
    elif acc_at(hi) <= target <= best:
        b, a = hi, t_star  # descending branch: acc_at(a) >= target >= acc_at(b)
    else:
        raise InfeasibleCalibrationError(
            f"accuracy {target_acc} below both trivial-boundary accuracies "
            f"({acc_at(lo):.4f}, {acc_at(hi):.4f})"
        )
    for _ in range(200):
        mid = 0.5 * (a + b)
        if acc_at(mid) < target:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


class ScoreCache:
    """Per-(query, prefix budget) memo of IKScores, optionally file-backed."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._mem: dict[tuple[str, int], IKScore] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    score = IKScore.from_json_dict(json.loads(line))
                    self._mem[(score.query_id, score.prefix_tokens)] = score

    def get(self, query_id: str, prefix_tokens: int) -> IKScore | None:
        return self._mem.get((query_id, prefix_tokens))

    def put(self, score: IKScore) -> None:
        key = (score.query_id, score.prefix_tokens)
        if key in self._mem:
            return
        self._mem[key] = score
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(score.to_json_dict(), sort_keys=True) + "\n")


def score_query(
    query: QueryRecord,
    answer_prefix: str,
    backend: ScorerBackend,
    prefix_tokens: int = 0,
    cache: ScoreCache | None = None,
) -> IKScore:
    """Question (+ prefix) -> Yes/No logits -> IK score, with caching."""
    if cache is not None:
        hit = cache.get(query.id, prefix_tokens)
        if hit is not None:
            return hit
    yes_logit, no_logit = backend.logits(query.id, query.question, answer_prefix)
    score = IKScore.from_logits(query.id, yes_logit, no_logit, prefix_tokens)
    if cache is not None:
        cache.put(score)
    return score


def save_scores(scores: list[IKScore], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for score in scores:
            fh.write(json.dumps(score.to_json_dict(), sort_keys=True) + "\n")


def load_scores(path: str | Path) -> list[IKScore]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(IKScore.from_json_dict(json.loads(line)))
    return out
