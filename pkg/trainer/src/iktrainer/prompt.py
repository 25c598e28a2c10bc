"""Classifier input rendering.

This must stay byte-identical to the scoring side's versioned prompt asset:
the version string below travels in trainset headers and model metadata, and
the cross-component tests compare renderings directly.
"""

PROMPT_VERSION = "scorer-prompt/1"


def render_prompt(question: str, answer_prefix: str) -> str:
    return f"{question}\n{answer_prefix}"
