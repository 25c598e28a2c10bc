"""teacher: string metrics, judge parsing, trainset export."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ikgate.client import BackendConfig, Generation, InferenceClient, Mode
from ikgate.errors import ExportError, JudgeParseError, MetricError
from ikgate.records import QueryRecord
from ikgate.stubs import InstrumentedStub, chat_response
from ikgate.teacher import (
    NO,
    YES,
    LlmJudgeTeacher,
    MatchTeacher,
    RecallTeacher,
    TrainRecord,
    export_trainset,
    match_metric,
    normalize_answer,
    parse_judge_score,
    read_trainset,
    recall_metric,
    trainset_meta,
    write_trainset,
)
from ikgate.tokens import truncate_tokens, whitespace_tokens


def gen(query_id: str, answer: str, mode: Mode = Mode.NORAG) -> Generation:
    return Generation(
        query_id=query_id,
        mode=mode,
        answer=answer,
        token_count=len(answer.split()),
        model_id="m",
        finish_reason="stop",
    )


class TestNormalization:
    def test_articles_punctuation_case(self):
        assert normalize_answer("The Answer, is: PARIS!") == "answer is paris"

    def test_whitespace_collapse(self):
        assert normalize_answer("a   b\t\nc") == "b c"  # leading article removed too


class TestMatch:
    def test_substring_hit(self):
        assert match_metric("The capital is Paris.", ["Paris"]) == 1.0

    def test_empty_answer(self):
        assert match_metric("", ["Paris"]) == 0.0

    def test_case_folded(self):
        assert match_metric("paris", ["Paris"]) == 1.0

    def test_word_boundary(self):
        # "ab c" appears as raw characters inside "dab c" but not as tokens
        assert match_metric("dab c", ["ab c"]) == 0.0

    def test_any_gold_suffices(self):
        assert match_metric("It was Berlin.", ["Paris", "Berlin"]) == 1.0

    def test_no_golds_is_error(self):
        with pytest.raises(MetricError):
            match_metric("x", [])


class TestRecall:
    def test_full_overlap(self):
        assert recall_metric("Barack Obama was president", ["Barack Obama"]) == 1.0

    def test_half_overlap(self):
        assert recall_metric("Obama", ["Barack Obama"]) == 0.5

    def test_identity(self):
        assert recall_metric("exact phrase", ["exact phrase"]) == 1.0

    def test_multiset_counting(self):
        # gold needs "very" twice; the answer has it once
        assert recall_metric("very good", ["very very good"]) == pytest.approx(2 / 3)

    def test_empty_gold_skipped(self):
        assert recall_metric("Paris", ["the", "Paris"]) == 1.0

    def test_all_golds_empty_is_error(self):
        with pytest.raises(MetricError):
            recall_metric("Paris", ["the", "a"])

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.sampled_from("alpha beta gamma delta".split()), min_size=1, max_size=6),
        st.lists(st.sampled_from("alpha beta gamma delta".split()), min_size=1, max_size=3),
    )
    def test_match_one_implies_recall_one(self, answer_words, gold_words):
        answer, gold = " ".join(answer_words), " ".join(gold_words)
        if match_metric(answer, [gold]) == 1.0:
            assert recall_metric(answer, [gold]) == 1.0


class _ScriptedJudge(InstrumentedStub):
    """Replies with scripts[i] for the i-th distinct prompt seen."""

    def __init__(self, scripts: list[str]):
        super().__init__(model_id="scripted-judge")
        self.scripts = scripts
        self._seen: dict[str, int] = {}

    def _reply(self, payload: dict) -> dict:
        prompt = payload["messages"][0]["content"]
        idx = self._seen.setdefault(prompt, len(self._seen))
        return chat_response(self.model_id, self.scripts[min(idx, len(self.scripts) - 1)], payload["max_tokens"])


def judge_teacher(scripts: list[str], cutoff: float = 0.5) -> LlmJudgeTeacher:
    client = InferenceClient(_ScriptedJudge(scripts), BackendConfig(model_id="scripted-judge"))
    return LlmJudgeTeacher(client, cutoff=cutoff)


QUERY = QueryRecord(id="q1", question="Capital of France?", golds=["Paris"])


class TestJudge:
    def test_reply_one_is_yes(self):
        verdict = judge_teacher(["1"]).verdict(QUERY, gen("q1", "Paris"))
        assert verdict.raw_score == 1.0 and verdict.label == YES

    def test_reply_zero_is_no(self):
        verdict = judge_teacher(["0"]).verdict(QUERY, gen("q1", "Lyon"))
        assert verdict.raw_score == 0.0 and verdict.label == NO

    def test_score_prefix_parsed(self):
        verdict = judge_teacher(["Score: 0.8"]).verdict(QUERY, gen("q1", "Paris"))
        assert verdict.raw_score == 0.8 and verdict.label == YES

    def test_reprompt_recovers(self):
        verdict = judge_teacher(["that is correct", "0.9"]).verdict(QUERY, gen("q1", "Paris"))
        assert verdict.raw_score == 0.9

    def test_flag_after_failed_reprompt(self):
        with pytest.raises(JudgeParseError) as excinfo:
            judge_teacher(["no idea", "still no idea"]).verdict(QUERY, gen("q1", "Paris"))
        assert excinfo.value.query_id == "q1"
        assert len(excinfo.value.replies) == 2

    def test_out_of_range_number_rejected(self):
        assert parse_judge_score("I rate it 4 out of 5") is None
        assert parse_judge_score("0.75 seems right") == 0.75
        assert parse_judge_score("") is None

    def test_generation_must_belong_to_query(self):
        with pytest.raises(ValueError):
            judge_teacher(["1"]).verdict(QUERY, gen("other", "Paris"))


class TestBinarization:
    @pytest.mark.parametrize("teacher_cls", [MatchTeacher, RecallTeacher])
    def test_cutoff_consistency(self, teacher_cls):
        teacher = teacher_cls(cutoff=0.5)
        rng = random.Random(0)
        for _ in range(200):
            words = [rng.choice("aa bb cc dd".split()) for _ in range(rng.randint(1, 5))]
            golds = [" ".join(rng.choice("aa bb cc".split()) for _ in range(rng.randint(1, 3)))]
            query = QueryRecord(id="q", question="?", golds=golds)
            verdict = teacher.verdict(query, gen("q", " ".join(words)))
            assert (verdict.raw_score >= 0.5) == (verdict.label == YES)


class TestTruncation:
    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=120), st.integers(0, 20), st.integers(0, 20))
    def test_idempotence_and_min_composition(self, text, m, n):
        double = truncate_tokens(truncate_tokens(text, m), n)
        assert double == truncate_tokens(text, min(m, n))

    def test_budget_beyond_length_keeps_all(self):
        assert truncate_tokens("a b c", 128) == "a b c"

    def test_zero_budget(self):
        assert truncate_tokens("a b c", 0) == ""


class TestExport:
    def _fixtures(self, n=5, answer_tokens=100):
        queries = [QueryRecord(id=f"q{i}", question=f"Q{i}?", golds=["g"]) for i in range(n)]
        answer = " ".join(f"tok{j}" for j in range(answer_tokens))
        gens = [gen(q.id, answer) for q in queries]
        teacher = MatchTeacher()
        verdicts = [teacher.verdict(q, g) for q, g in zip(queries, gens)]
        return queries, gens, verdicts

    def test_zero_prefix(self):
        queries, gens, verdicts = self._fixtures()
        records = export_trainset(queries, gens, verdicts, prefix_tokens=0)
        assert all(r.answer_prefix == "" for r in records)
        assert [r.query_id for r in records] == [q.id for q in queries]

    def test_budget_exceeds_length(self):
        queries, gens, verdicts = self._fixtures(answer_tokens=50)
        records = export_trainset(queries, gens, verdicts, prefix_tokens=128)
        assert all(len(whitespace_tokens(r.answer_prefix)) == 50 for r in records)

    def test_exact_truncation(self):
        queries, gens, verdicts = self._fixtures(answer_tokens=100)
        records = export_trainset(queries, gens, verdicts, prefix_tokens=32)
        assert all(len(whitespace_tokens(r.answer_prefix)) == 32 for r in records)

    def test_missing_items_itemized(self):
        queries, gens, verdicts = self._fixtures()
        with pytest.raises(ExportError) as excinfo:
            export_trainset(queries, gens[1:], verdicts[:-1], prefix_tokens=0)
        assert excinfo.value.missing_generation == ["q0"]
        assert excinfo.value.missing_verdict == ["q4"]

    def test_prefix_tokens_must_be_allowed(self):
        queries, gens, verdicts = self._fixtures()
        with pytest.raises(ValueError):
            export_trainset(queries, gens, verdicts, prefix_tokens=7)

    def test_trainset_round_trip(self, tmp_path):
        queries, gens, verdicts = self._fixtures()
        records = export_trainset(queries, gens, verdicts, prefix_tokens=32)
        meta = trainset_meta("match", 0.5, "unit", 32)
        path = tmp_path / "trainset.jsonl"
        write_trainset(path, records, meta)
        loaded, loaded_meta = read_trainset(path)
        assert loaded == records
        assert loaded_meta["teacher_id"] == "match"
        assert loaded_meta["tokenizer"] == "whitespace"
        assert loaded_meta["prompt_version"] == "scorer-prompt/1"

    def test_train_record_invariants(self):
        with pytest.raises(ValueError):
            TrainRecord("q", "Q?", "nonempty", 0, YES)
        with pytest.raises(ValueError):
            TrainRecord("q", "Q?", "", 0, "maybe")


class TestDeterminism:
    def test_string_teachers_pure(self):
        queries = [QueryRecord(id=f"q{i}", question="?", golds=["alpha beta"]) for i in range(20)]
        gens = [gen(q.id, "alpha") for q in queries]
        for teacher in (MatchTeacher(), RecallTeacher()):
            one = [teacher.verdict(q, g).to_json_dict() for q, g in zip(queries, gens)]
            two = [teacher.verdict(q, g).to_json_dict() for q, g in zip(queries, gens)]
            assert one == two
