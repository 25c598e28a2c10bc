"""ikgate: gate retrieval-augmented generation on a distilled "I Know" score.

The toolkit covers the full loop: build silver-labeled trainsets from a
model's own closed-book answers, score queries with the Yes/No-logit
classifier, route each query to its closed-book or RAG answer by threshold,
and evaluate quality, retrieval fraction, and latency of the gated system.
"""

__version__ = "0.1.0"

from .client import (
    BackendConfig,
    BatchResult,
    FirstTokenLogits,
    Generation,
    GenerationRequest,
    HttpChatBackend,
    InferenceClient,
    Mode,
)
from .latency import LatencyEstimate, StageCosts, expected_latency, load_preset, path_costs
from .records import (
    DatasetSplit,
    QueryRecord,
    SubsetSpec,
    load_dataset,
    save_dataset,
    split_dataset,
    subset_train,
)
from .routing import (
    ALWAYS,
    NEVER,
    IKHistogram,
    QueryEvals,
    SweepReport,
    SweepRow,
    characterize,
    ik_accuracy,
    ik_auc,
    route,
    routed_quality,
    threshold_sweep,
)
from .scoring import (
    ChatLogprobScorer,
    EndpointScorer,
    IKScore,
    ScoreCache,
    StubScorer,
    extract_yes_no,
    ik_from_logits,
    score_query,
)
from .teacher import (
    LlmJudgeTeacher,
    MatchTeacher,
    RecallTeacher,
    TeacherVerdict,
    TrainRecord,
    export_trainset,
    match_metric,
    read_trainset,
    recall_metric,
    write_trainset,
)

__all__ = [
    "__version__",
    "ALWAYS",
    "BackendConfig",
    "BatchResult",
    "ChatLogprobScorer",
    "DatasetSplit",
    "EndpointScorer",
    "FirstTokenLogits",
    "Generation",
    "GenerationRequest",
    "HttpChatBackend",
    "IKHistogram",
    "IKScore",
    "InferenceClient",
    "LatencyEstimate",
    "LlmJudgeTeacher",
    "MatchTeacher",
    "Mode",
    "NEVER",
    "QueryEvals",
    "QueryRecord",
    "RecallTeacher",
    "ScoreCache",
    "StageCosts",
    "StubScorer",
    "SubsetSpec",
    "SweepReport",
    "SweepRow",
    "TeacherVerdict",
    "TrainRecord",
    "characterize",
    "expected_latency",
    "export_trainset",
    "extract_yes_no",
    "ik_accuracy",
    "ik_auc",
    "ik_from_logits",
    "load_dataset",
    "load_preset",
    "match_metric",
    "path_costs",
    "read_trainset",
    "recall_metric",
    "route",
    "routed_quality",
    "save_dataset",
    "score_query",
    "split_dataset",
    "subset_train",
    "threshold_sweep",
    "write_trainset",
]
