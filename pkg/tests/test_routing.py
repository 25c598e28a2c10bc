"""router-eval: routing rule, accuracy, AUC vs brute force, sweeps, histograms."""

from __future__ import annotations

import numpy as np
import pytest

from ikgate.client import Mode
from ikgate.errors import EvalError, UndefinedAUCError
from ikgate.routing import (
    ALWAYS,
    NEVER,
    HistogramPattern,
    QueryEvals,
    SweepRow,
    auc_from_arrays,
    characterize,
    ik_accuracy,
    ik_auc,
    pick_best,
    route,
    route_queries,
    routed_quality,
    threshold_sweep,
)
from ikgate.scoring import IKScore
from ikgate.teacher import NO, YES


def scores_of(values: list[float]) -> list[IKScore]:
    out = []
    for i, v in enumerate(values):
        s = IKScore(query_id=f"q{i}", ik=v, yes_logit=0.0, no_logit=0.0, prefix_tokens=0)
        out.append(s)
    return out


def labels_of(labels: list[str]) -> list[tuple[str, str]]:
    return [(f"q{i}", lab) for i, lab in enumerate(labels)]


class TestRoute:
    def test_high_confidence_stays_closed_book(self):
        assert route(0.9, 0.5) == Mode.NORAG

    def test_low_confidence_retrieves(self):
        assert route(0.3, 0.5) == Mode.RAG

    def test_tie_goes_to_norag(self):
        assert route(0.5, 0.5) == Mode.NORAG

    def test_domain_checks(self):
        with pytest.raises(EvalError):
            route(0.0, 0.5)
        with pytest.raises(EvalError):
            route(0.5, 1.5)


class TestAccuracy:
    def test_all_correct(self):
        assert ik_accuracy(scores_of([0.9, 0.1]), labels_of([YES, NO])) == 1.0

    def test_half_correct(self):
        assert ik_accuracy(scores_of([0.9, 0.1]), labels_of([YES, YES])) == 0.5

    def test_tie_counts_yes(self):
        assert ik_accuracy(scores_of([0.5]), labels_of([YES])) == 1.0

    def test_id_mismatch(self):
        with pytest.raises(EvalError):
            ik_accuracy(scores_of([0.9]), [("other", YES)])


def brute_force_auc(y_true, y_score) -> float:
    pos = [s for s, y in zip(y_score, y_true) if y]
    neg = [s for s, y in zip(y_score, y_true) if not y]
    total = sum(1.0 if p > q else (0.5 if p == q else 0.0) for p in pos for q in neg)
    return total / (len(pos) * len(neg))


class TestAUC:
    def test_perfect_separation(self):
        assert ik_auc(scores_of([0.9, 0.8, 0.2, 0.1]), labels_of([YES, YES, NO, NO])) == 1.0

    def test_full_tie(self):
        assert ik_auc(scores_of([0.5, 0.5]), labels_of([YES, NO])) == 0.5

    def test_three_quarters(self):
        # pairs: (0.8>0.7)=1, (0.8>0.5)=1, (0.6>0.7)=0, (0.6>0.5)=1 -> 3/4
        assert ik_auc(scores_of([0.8, 0.7, 0.6, 0.5]), labels_of([YES, NO, YES, NO])) == 0.75

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedAUCError):
            ik_auc(scores_of([0.9, 0.8]), labels_of([YES, YES]))

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(2, 200))
            y = rng.random(n) < rng.uniform(0.2, 0.8)
            if y.all() or not y.any():
                continue
            # coarse grid of score values forces plenty of duplicates
            s = rng.integers(0, 8, size=n) / 8.0
            assert abs(auc_from_arrays(y, s) - brute_force_auc(y, s)) <= 1e-12

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(11)
        y = rng.random(150) < 0.5
        y[0], y[1] = True, False
        s = rng.random(150)
        base = auc_from_arrays(y, s)
        for transform in (lambda x: 3 * x + 2, np.exp, lambda x: x**3 + x):
            assert auc_from_arrays(y, transform(s)) == pytest.approx(base, abs=1e-12)


def evals_of(ik, norag, rag) -> list[QueryEvals]:
    return [
        QueryEvals(query_id=f"q{i}", ik=k, eval_norag=n, eval_rag=r)
        for i, (k, n, r) in enumerate(zip(ik, norag, rag))
    ]


class TestRoutedQuality:
    def test_enumerated_selection(self):
        evals = evals_of([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], [1, 0, 1, 1])
        quality, fraction = routed_quality(evals, 0.5)
        assert (quality, fraction) == (1.0, 0.5)

    def test_never_endpoint(self):
        evals = evals_of([0.9, 0.1], [1.0, 0.25], [0.0, 1.0])
        assert routed_quality(evals, NEVER) == (0.625, 0.0)

    def test_always_endpoint(self):
        evals = evals_of([0.9, 0.1], [1.0, 0.25], [0.0, 1.0])
        assert routed_quality(evals, ALWAYS) == (0.5, 1.0)

    def test_route_queries_selected_column(self):
        evals = evals_of([0.9, 0.1], [1.0, 0.0], [0.25, 0.75])
        routed = route_queries(evals, 0.5)
        assert routed[0].mode_chosen == Mode.NORAG and routed[0].eval_selected == 1.0
        assert routed[1].mode_chosen == Mode.RAG and routed[1].eval_selected == 0.75

    def test_accuracy_link(self):
        # eval_norag = label, eval_rag = 1 - label: routed quality at 0.5 is accuracy
        rng = np.random.default_rng(3)
        ik = rng.uniform(0.01, 0.99, 200)
        labels = rng.random(200) < 0.6
        evals = evals_of(ik, labels.astype(float), (~labels).astype(float))
        quality, _ = routed_quality(evals, 0.5)
        acc = ik_accuracy(scores_of(list(ik)), labels_of([YES if b else NO for b in labels]))
        assert quality == pytest.approx(acc, abs=1e-12)


class TestSweep:
    def test_degenerate_ties_pick_never(self):
        evals = evals_of([0.3, 0.6, 0.9], [1, 0, 1], [1, 0, 1])
        report = threshold_sweep(evals, [0.25, 0.5, 0.75])
        assert report.best.theta == NEVER
        assert report.best.retrieval_fraction == 0.0

    def test_rag_dominant_picks_always(self):
        evals = evals_of([0.3, 0.6, 0.9], [0, 0, 0], [1, 1, 1])
        report = threshold_sweep(evals, [0.5])
        assert report.best.theta == ALWAYS

    def test_best_point_among_reported_rows(self):
        rows = [
            SweepRow(NEVER, 0.62, 0.0, 100),
            SweepRow(0.5, 0.77, 0.36, 100),
            SweepRow(0.8, 0.79, 0.50, 100),
            SweepRow(ALWAYS, 0.76, 1.0, 100),
        ]
        assert pick_best(rows).theta == 0.8

    def test_tie_break_order(self):
        rows = [
            SweepRow(0.7, 0.8, 0.4, 10),
            SweepRow(0.3, 0.8, 0.2, 10),
            SweepRow(0.2, 0.8, 0.2, 10),
        ]
        assert pick_best(rows).theta == 0.2

    def test_endpoints_exact_and_monotone(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            evals = evals_of(
                rng.uniform(0.01, 0.99, n), rng.random(n).round(3), rng.random(n).round(3)
            )
            report = threshold_sweep(evals, [i / 20 for i in range(21)])
            norag_mean = float(np.mean([q.eval_norag for q in evals]))
            rag_mean = float(np.mean([q.eval_rag for q in evals]))
            assert report.rows[0].theta == NEVER and report.rows[0].mean_quality == norag_mean
            assert report.rows[-1].theta == ALWAYS and report.rows[-1].mean_quality == rag_mean
            fractions = [r.retrieval_fraction for r in report.rows]
            assert all(a <= b for a, b in zip(fractions, fractions[1:]))
            assert report.best.mean_quality >= max(norag_mean, rag_mean)

    def test_grid_validation(self):
        evals = evals_of([0.5], [1.0], [0.0])
        with pytest.raises(EvalError):
            threshold_sweep(evals, [])
        with pytest.raises(EvalError):
            threshold_sweep(evals, [1.5])


class TestCharacterize:
    def test_high_knowledge(self):
        hist = characterize(scores_of([0.9] * 40))
        assert hist.pattern == HistogramPattern.HIGH_KNOWLEDGE
        assert hist.high_mass == 1.0

    def test_low_knowledge(self):
        assert characterize(scores_of([0.05] * 40)).pattern == HistogramPattern.LOW_KNOWLEDGE

    def test_u_shaped(self):
        hist = characterize(scores_of([0.05] * 20 + [0.95] * 20))
        assert hist.pattern == HistogramPattern.U_SHAPED

    def test_flat(self):
        values = [0.05 + 0.9 * i / 39 for i in range(40)]
        assert characterize(scores_of(values)).pattern == HistogramPattern.FLAT

    def test_bin_counts_sum_to_n(self):
        rng = np.random.default_rng(9)
        hist = characterize(list(rng.uniform(0.001, 0.999, 137)))
        assert sum(hist.bins) == 137 == hist.n
        assert len(hist.bins) == 20

    def test_too_few_scores(self):
        with pytest.raises(EvalError):
            characterize(scores_of([0.5] * 19))
