"""Per-stage latency accounting for gated retrieval.

A calculator, not a measurement harness: stage costs are configuration
(defaults mirror the published per-question timings of an A100/VLLM setup),
and the estimate is the convex combination of the two path costs at a given
retrieval probability, compared against the always-RAG baseline that skips
the gating stages entirely.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources

from .errors import ConfigError


@dataclass(frozen=True)
class StageCosts:
    """Per-question stage costs in milliseconds."""

    ik_score_ms: float
    prefix_gen_ms: float
    norag_gen_ms: float
    rag_gen_ms: float
    retrieval_ms: float = 0.0
    rerank_ms: float = 0.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"stage cost {name} must be >= 0, got {value}")


def load_preset(name: str = "a100_vllm") -> StageCosts:
    presets = json.loads(
        resources.files("ikgate.assets").joinpath("latency_presets.json").read_text("utf-8")
    )
    if name not in presets:
        raise ConfigError(f"unknown latency preset {name!r}; have {sorted(presets)}")
    return StageCosts(**presets[name])


def path_costs(costs: StageCosts, prefix_used: bool) -> tuple[float, float]:
    """(norag_path_ms, rag_path_ms) for one gated query.

    Both paths pay the IK stage (and prefix generation when the classifier
    consumes answer tokens); the RAG path adds retrieval, reranking, and the
    longer generation.
    """
    gate = costs.ik_score_ms + (costs.prefix_gen_ms if prefix_used else 0.0)
    norag_path = gate + costs.norag_gen_ms
    rag_path = gate + costs.retrieval_ms + costs.rerank_ms + costs.rag_gen_ms
    return norag_path, rag_path


@dataclass
class LatencyEstimate:
    norag_path_ms: float
    rag_path_ms: float
    p_retrieve: float
    expected_ms: float
    baseline_always_rag_ms: float
    savings_fraction: float

    def to_json_dict(self) -> dict:
        return asdict(self)


def expected_latency(
    costs: StageCosts, p_retrieve: float, prefix_used: bool = True
) -> LatencyEstimate:
    """Expected per-query latency when a fraction p_retrieve goes to RAG.

    The baseline is the ungated always-RAG path (retrieval + rerank +
    generation, no IK stages); savings_fraction = 1 - expected/baseline.
    """
    if not 0.0 <= p_retrieve <= 1.0:
        raise ConfigError(f"p_retrieve must lie in [0,1], got {p_retrieve}")
    norag_path, rag_path = path_costs(costs, prefix_used)
    expected = (1.0 - p_retrieve) * norag_path + p_retrieve * rag_path
    baseline = costs.retrieval_ms + costs.rerank_ms + costs.rag_gen_ms
    savings = 1.0 - expected / baseline if baseline > 0 else 0.0
    return LatencyEstimate(
        norag_path_ms=norag_path,
        rag_path_ms=rag_path,
        p_retrieve=p_retrieve,
        expected_ms=expected,
        baseline_always_rag_ms=baseline,
        savings_fraction=savings,
    )
