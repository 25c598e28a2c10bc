"""Exception types shared across the toolkit.

Everything raised on purpose derives from IkGateError so callers can catch
one base class at pipeline boundaries and still get precise types in tests.
"""

from __future__ import annotations


class IkGateError(Exception):
    """Base class for all toolkit errors."""


# --- dataset-io ---------------------------------------------------------


class DatasetError(IkGateError):
    """A dataset file failed to parse or validate.

    Carries the 1-based line number when the failure is tied to a line.
    """

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class DuplicateIdError(DatasetError):
    def __init__(self, duplicates: list[str], path: str | None = None):
        self.duplicates = list(duplicates)
        shown = ", ".join(self.duplicates[:10])
        more = "" if len(self.duplicates) <= 10 else f" (+{len(self.duplicates) - 10} more)"
        super().__init__(f"duplicate record ids: {shown}{more}", path=path)


class EmptyDatasetError(DatasetError):
    pass


class SplitSizeError(IkGateError):
    """validation_size (or a subset size) is out of range."""


# --- inference-client ----------------------------------------------------


class BackendError(IkGateError):
    """A backend call failed after retries. Carries the query id when known."""

    def __init__(self, message: str, *, query_id: str | None = None):
        self.query_id = query_id
        super().__init__(message if query_id is None else f"[{query_id}] {message}")


class CapabilityError(BackendError):
    """The endpoint cannot do what was asked (e.g. no logprobs, top-K < 2)."""


class NetworkDisabledError(BackendError):
    """A network call was attempted while running in offline mode."""


class PromptTooLongError(BackendError):
    pass


# --- teacher --------------------------------------------------------------


class JudgeParseError(IkGateError):
    """Judge reply held no usable score, even after one reprompt."""

    def __init__(self, query_id: str, replies: list[str]):
        self.query_id = query_id
        self.replies = list(replies)
        super().__init__(f"[{query_id}] unparseable judge reply: {replies[-1]!r}")


class MetricError(IkGateError):
    pass


class ExportError(IkGateError):
    """Trainset export found queries with missing generations or verdicts."""

    def __init__(self, missing_generation: list[str], missing_verdict: list[str]):
        self.missing_generation = list(missing_generation)
        self.missing_verdict = list(missing_verdict)
        parts = []
        if missing_generation:
            parts.append(f"{len(missing_generation)} missing generation(s): {missing_generation[:5]}")
        if missing_verdict:
            parts.append(f"{len(missing_verdict)} missing verdict(s): {missing_verdict[:5]}")
        super().__init__("; ".join(parts))


# --- ik-scorer -------------------------------------------------------------


class ScorerError(IkGateError):
    pass


class MissingClassError(ScorerError):
    """Neither surface variant of a required class appeared in the top-K."""

    def __init__(self, missing: str, candidates: list[tuple[str, float]]):
        self.missing = missing
        self.candidates = list(candidates)
        shown = ", ".join(repr(t) for t, _ in self.candidates[:8])
        super().__init__(f"no '{missing}' variant among top-K candidates [{shown}]")


class InfeasibleCalibrationError(ScorerError):
    """The requested (accuracy, AUC) pair cannot coexist."""


# --- router-eval ------------------------------------------------------------


class EvalError(IkGateError):
    pass


class UndefinedAUCError(EvalError):
    """AUC is undefined because the labels contain a single class."""


# --- cli-report --------------------------------------------------------------


class ConfigError(IkGateError):
    pass


class StageError(IkGateError):
    """A pipeline stage failed; carries per-item failures when available."""

    def __init__(self, message: str, items: list[str] | None = None):
        self.items = list(items or [])
        suffix = f" ({len(self.items)} item(s))" if self.items else ""
        super().__init__(message + suffix)
