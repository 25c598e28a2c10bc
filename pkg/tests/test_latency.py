"""latency-model: path arithmetic and the gated-retrieval estimate."""

from __future__ import annotations

import pytest

from ikgate.errors import ConfigError
from ikgate.latency import StageCosts, expected_latency, load_preset, path_costs

REFERENCE = StageCosts(ik_score_ms=3.7, prefix_gen_ms=8.3, norag_gen_ms=18.2, rag_gen_ms=78.4)


class TestPathCosts:
    def test_published_defaults_with_prefix(self):
        norag, rag = path_costs(REFERENCE, prefix_used=True)
        assert norag == pytest.approx(30.2, abs=1e-9)
        assert rag == pytest.approx(90.4, abs=1e-9)

    def test_all_zero(self):
        zero = StageCosts(0, 0, 0, 0)
        assert path_costs(zero, prefix_used=True) == (0.0, 0.0)

    def test_without_prefix(self):
        norag, rag = path_costs(REFERENCE, prefix_used=False)
        assert norag == pytest.approx(21.9, abs=1e-9)
        assert rag == pytest.approx(82.1, abs=1e-9)

    def test_component_sums(self):
        costs = StageCosts(1.25, 2.5, 3.75, 40.0, retrieval_ms=5.0, rerank_ms=60.0)
        norag, rag = path_costs(costs, prefix_used=True)
        assert abs(norag - (1.25 + 2.5 + 3.75)) <= 1e-12
        assert abs(rag - (1.25 + 2.5 + 5.0 + 60.0 + 40.0)) <= 1e-12

    def test_negative_cost_rejected(self):
        with pytest.raises(ConfigError):
            StageCosts(-1.0, 0, 0, 0)


class TestExpectedLatency:
    def test_even_mix(self):
        est = expected_latency(REFERENCE, p_retrieve=0.5)
        assert est.expected_ms == pytest.approx(60.3, abs=1e-9)

    def test_endpoint_p1(self):
        est = expected_latency(REFERENCE, p_retrieve=1.0)
        assert est.expected_ms == pytest.approx(est.rag_path_ms, abs=1e-12)

    def test_partial_retrieval_rate(self):
        est = expected_latency(REFERENCE, p_retrieve=0.36)
        assert est.expected_ms == pytest.approx(0.64 * 30.2 + 0.36 * 90.4, abs=1e-9)
        assert est.expected_ms == pytest.approx(51.872, abs=1e-9)

    def test_affine_and_monotone_in_p(self):
        points = [expected_latency(REFERENCE, p / 10).expected_ms for p in range(11)]
        deltas = [b - a for a, b in zip(points, points[1:])]
        assert all(d > 0 for d in deltas)
        assert all(abs(d - deltas[0]) <= 1e-9 for d in deltas)

    def test_zero_gate_costs_recover_baseline(self):
        bare = StageCosts(0.0, 0.0, 18.2, 78.4, retrieval_ms=5.0, rerank_ms=60.0)
        est = expected_latency(bare, p_retrieve=1.0)
        assert est.expected_ms == pytest.approx(est.baseline_always_rag_ms, abs=1e-12)

    def test_savings_fraction(self):
        est = expected_latency(REFERENCE, p_retrieve=0.0)
        assert est.savings_fraction == pytest.approx(1.0 - 30.2 / 78.4, abs=1e-12)

    def test_p_out_of_range(self):
        with pytest.raises(ConfigError):
            expected_latency(REFERENCE, p_retrieve=1.1)


class TestPresets:
    def test_default_preset(self):
        costs = load_preset("a100_vllm")
        assert costs == REFERENCE

    def test_bm25_rerank_preset(self):
        costs = load_preset("a100_vllm_bm25_rerank")
        assert costs.retrieval_ms == 5.0
        assert costs.rerank_ms == 60.0

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            load_preset("warp-drive")
