"""Versioned prompt templates.

Templates are plain-text assets rendered with str.format. The classifier
input template ("scorer prompt") is the load-bearing one: the serving side
must render it byte-for-byte identically to the training side, so its version
string travels in trainset headers and model metadata.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

PROMPT_VERSIONS = {
    "norag": "norag-prompt/1",
    "rag": "rag-prompt/1",
    "judge": "judge-prompt/1",
    "scorer": "scorer-prompt/1",
}


def load_asset(name: str) -> str:
    return resources.files("ikgate.assets").joinpath(name).read_text(encoding="utf-8")


def render_norag_prompt(question: str) -> str:
    return load_asset("norag_prompt.txt").format(question=question)


def render_rag_prompt(question: str, documents: list[str]) -> str:
    if not documents:
        raise ValueError("RAG prompt needs at least one context document")
    numbered = "\n".join(f"[{i}] {doc}" for i, doc in enumerate(documents, start=1))
    return load_asset("rag_prompt.txt").format(question=question, documents=numbered)


def render_scorer_prompt(question: str, answer_prefix: str) -> str:
    """Classifier input: question, newline, answer prefix (possibly empty)."""
    return load_asset("scorer_prompt.txt").format(question=question, answer_prefix=answer_prefix)


@dataclass
class JudgePrompt:
    """Inputs for one judge call; rendering places each field exactly once."""

    question: str
    candidate_answer: str
    gold_answers: list[str]
    template_id: str = PROMPT_VERSIONS["judge"]

    def render(self) -> str:
        golds = "; ".join(self.gold_answers)
        return load_asset("judge_prompt.txt").format(
            question=self.question, candidate=self.candidate_answer, golds=golds
        )
