"""Threshold routing and the evaluation suite around it.

Retrieval triggers on low confidence: a query goes to RAG iff its IK score
falls below the threshold, ties to the closed-book answer. The evaluators
(accuracy, Mann-Whitney AUC, routed quality, threshold sweep, histogram
characterization) are pure functions over aligned per-query columns, so any
per-query quality metric plugs in uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .client import Mode
from .errors import EvalError, UndefinedAUCError
from .scoring import IKScore
from .teacher import YES, TeacherVerdict

NEVER = "never"
ALWAYS = "always"

Theta = float | str  # numeric threshold or one of the sentinels


def route(ik: float, theta: float) -> Mode:
    """NoRag iff ik >= theta; retrieval is reserved for low confidence."""
    if not 0.0 < ik < 1.0:
        raise EvalError(f"ik must lie in (0,1), got {ik}")
    if not 0.0 <= theta <= 1.0:
        raise EvalError(f"theta must lie in [0,1], got {theta}")
    return Mode.NORAG if ik >= theta else Mode.RAG


def _labels_to_bool(
    scores: Sequence[IKScore], labels: Sequence
) -> tuple[np.ndarray, np.ndarray]:
    """Align labels with scores by query_id and vectorize both."""
    if len(scores) == 0:
        raise EvalError("no scores to evaluate")
    if len(scores) != len(labels):
        raise EvalError(f"{len(scores)} scores but {len(labels)} labels")
    ik = np.array([s.ik for s in scores], dtype=float)
    y = np.empty(len(labels), dtype=bool)
    for i, (score, label) in enumerate(zip(scores, labels)):
        if isinstance(label, TeacherVerdict):
            label_id, label_value = label.query_id, label.label
        elif isinstance(label, tuple):
            label_id, label_value = label
        else:
            label_id, label_value = score.query_id, label
        if label_id != score.query_id:
            raise EvalError(
                f"label/score id mismatch at position {i}: {label_id!r} vs {score.query_id!r}"
            )
        y[i] = label_value == YES
    return ik, y


def ik_accuracy(scores: Sequence[IKScore], labels: Sequence) -> float:
    """Fraction of queries where (ik >= 0.5) agrees with the Yes label."""
    ik, y = _labels_to_bool(scores, labels)
    return float(np.mean((ik >= 0.5) == y))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based midranks; tied values share the average of their rank block."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    below = np.concatenate(([0], np.cumsum(counts)))[:-1]
    mid = below + (counts + 1) / 2.0
    return mid[inverse]


def auc_from_arrays(y_true: np.ndarray, y_score: np.ndarray) -> float:
    """Mann-Whitney AUC via midrank sums, O(n log n), ties counted half.

    Equals the pairwise definition: over all (positive, negative) pairs the
    mean of 1[pos > neg] + 0.5 * 1[pos == neg].
    """
    y_true = np.asarray(y_true, dtype=bool)
    y_score = np.asarray(y_score, dtype=float)
    n_pos = int(y_true.sum())
    n_neg = int(len(y_true) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(
            f"AUC undefined: labels hold {n_pos} positive(s) and {n_neg} negative(s)"
        )
    ranks = _midranks(y_score)
    pos_rank_sum = float(ranks[y_true].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def ik_auc(scores: Sequence[IKScore], labels: Sequence) -> float:
    ik, y = _labels_to_bool(scores, labels)
    return auc_from_arrays(y, ik)


@dataclass
class QueryEvals:
    """Per-query routing input: IK score plus quality of both candidate answers."""

    query_id: str
    ik: float
    eval_norag: float
    eval_rag: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.eval_norag <= 1.0 or not 0.0 <= self.eval_rag <= 1.0:
            raise EvalError(f"[{self.query_id}] eval columns must lie in [0,1]")


@dataclass
class RoutedQuery:
    query_id: str
    ik: float
    mode_chosen: Mode
    eval_norag: float
    eval_rag: float
    eval_selected: float


def route_queries(inputs: Sequence[QueryEvals], theta) -> list[RoutedQuery]:
    """Materialize per-query routing decisions for a threshold or sentinel."""
    out = []
    for q in inputs:
        if theta == NEVER:
            mode = Mode.NORAG
        elif theta == ALWAYS:
            mode = Mode.RAG
        else:
            mode = route(q.ik, float(theta))
        out.append(
            RoutedQuery(
                query_id=q.query_id,
                ik=q.ik,
                mode_chosen=mode,
                eval_norag=q.eval_norag,
                eval_rag=q.eval_rag,
                eval_selected=q.eval_rag if mode == Mode.RAG else q.eval_norag,
            )
        )
    return out


def routed_quality(inputs: Sequence[QueryEvals], theta) -> tuple[float, float]:
    """(mean quality of the selected answers, fraction routed to RAG)."""
    if not inputs:
        raise EvalError("no routing inputs")
    ik = np.array([q.ik for q in inputs])
    norag = np.array([q.eval_norag for q in inputs])
    rag = np.array([q.eval_rag for q in inputs])
    if theta == NEVER:
        retrieve = np.zeros(len(ik), dtype=bool)
    elif theta == ALWAYS:
        retrieve = np.ones(len(ik), dtype=bool)
    else:
        retrieve = ik < float(theta)
    quality = float(np.mean(np.where(retrieve, rag, norag)))
    return quality, float(np.mean(retrieve))


@dataclass
class SweepRow:
    theta: "float | str"
    mean_quality: float
    retrieval_fraction: float
    n: int


@dataclass
class SweepReport:
    """Full operating curve plus the best point and the two endpoints."""

    rows: list[SweepRow]
    best: SweepRow
    endpoints: tuple[float, float]  # (norag_quality, rag_quality)


def _theta_sort_key(theta) -> float:
    if theta == NEVER:
        return float("-inf")
    if theta == ALWAYS:
        return float("inf")
    return float(theta)


def pick_best(rows: Sequence[SweepRow]) -> SweepRow:
    """Highest quality; ties broken by least retrieval, then smallest theta."""
    return min(
        rows,
        key=lambda r: (-r.mean_quality, r.retrieval_fraction, _theta_sort_key(r.theta)),
    )


def threshold_sweep(inputs: Sequence[QueryEvals], grid: Iterable[float]) -> SweepReport:
    """Evaluate routed quality across thresholds, sentinels always included."""
    grid = sorted(set(float(t) for t in grid))
    if not grid:
        raise EvalError("sweep grid is empty")
    for theta in grid:
        if not 0.0 <= theta <= 1.0:
            raise EvalError(f"grid theta {theta} outside [0,1]")

    thetas: list = [NEVER, *grid, ALWAYS]
    rows = []
    for theta in thetas:
        quality, fraction = routed_quality(inputs, theta)
        rows.append(SweepRow(theta, quality, fraction, len(inputs)))
    report = SweepReport(rows=rows, best=pick_best(rows), endpoints=(rows[0].mean_quality, rows[-1].mean_quality))
    return report


class HistogramPattern(str, Enum):
    HIGH_KNOWLEDGE = "HighKnowledge"
    LOW_KNOWLEDGE = "LowKnowledge"
    U_SHAPED = "UShaped"
    FLAT = "Flat"


@dataclass
class IKHistogram:
    """20-bin histogram of IK scores plus the dataset's knowledge pattern."""

    bins: list[int]
    low_mass: float
    high_mass: float
    pattern: HistogramPattern
    n: int

    BIN_COUNT = 20


def characterize(scores: Sequence) -> IKHistogram:
    """Classify a dataset by where its IK mass sits.

    UShaped when both tails (<0.2 and >0.8) hold at least a quarter of the
    mass; otherwise HighKnowledge / LowKnowledge when one side holds at
    least half; Flat when neither dominates.
    """
    values = np.array([s.ik if isinstance(s, IKScore) else float(s) for s in scores])
    if len(values) < 20:
        raise EvalError(f"need at least 20 scores to characterize, got {len(values)}")
    counts, _ = np.histogram(values, bins=IKHistogram.BIN_COUNT, range=(0.0, 1.0))
    low_mass = float(np.mean(values < 0.2))
    high_mass = float(np.mean(values > 0.8))
    if low_mass >= 0.25 and high_mass >= 0.25:
        pattern = HistogramPattern.U_SHAPED
    elif high_mass >= 0.5:
        pattern = HistogramPattern.HIGH_KNOWLEDGE
    elif low_mass >= 0.5:
        pattern = HistogramPattern.LOW_KNOWLEDGE
    else:
        pattern = HistogramPattern.FLAT
    return IKHistogram(
        bins=[int(c) for c in counts],
        low_mass=low_mass,
        high_mass=high_mass,
        pattern=pattern,
        n=len(values),
    )
