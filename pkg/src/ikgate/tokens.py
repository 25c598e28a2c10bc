"""Token counting and prefix truncation.

The trained classifier consumes the question plus the first n tokens of the
closed-book answer. What counts as a token is a per-backend convention; when
a backend does not expose its tokenizer we fall back to whitespace splitting,
and the trainset header records which convention produced the file.
"""

from __future__ import annotations

from typing import Callable

Tokenizer = Callable[[str], "list[str]"]

WHITESPACE_TOKENIZER = "whitespace"

ALLOWED_PREFIX_TOKENS = (0, 4, 8, 16, 32, 64, 128)


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def count_tokens(text: str, tokenizer: Tokenizer = whitespace_tokens) -> int:
    return len(tokenizer(text))


def truncate_tokens(text: str, budget: int, tokenizer: Tokenizer = whitespace_tokens) -> str:
    """Keep the first `budget` tokens of `text` (the whole text if shorter).

    Output is re-joined with single spaces, which makes truncation idempotent:
    truncate(truncate(a, m), n) == truncate(a, min(m, n)).
    """
    if budget < 0:
        raise ValueError(f"token budget must be >= 0, got {budget}")
    if budget == 0:
        return ""
    return " ".join(tokenizer(text)[:budget])
