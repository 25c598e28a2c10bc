"""End-to-end orchestration: declarative config, staged artifacts, resumable runs.

The pipeline is a short DAG of stages (split -> generate -> verdicts ->
trainsets / scores -> evaluate) whose artifacts are flat files in the output
directory. Each stage records a hash of the config fields it depends on
(including its upstream stage hash) in the run manifest; a stage reruns only
when that hash changes, its artifacts disappeared, or something upstream
reran. Ablations and multi-dataset evaluation are derived sub-runs that share
the response cache, so repeated generation work is free.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .client import (
    BackendConfig,
    BatchResult,
    GenerationRequest,
    HttpChatBackend,
    InferenceClient,
    Mode,
    load_generations,
    save_generations,
)
from .errors import BackendError, ConfigError, IkGateError, StageError
from .latency import StageCosts, expected_latency, load_preset, path_costs
from .prompts import render_norag_prompt, render_rag_prompt
from .records import DatasetSplit, QueryRecord, SubsetSpec, load_dataset, subset_train, split_dataset
from .reports import (
    build_eval_report,
    render_histogram_svg,
    render_quality_curve_svg,
    write_ablation_csv,
    write_histogram_csv,
    write_json,
    write_quality_curve_csv,
    write_sweep_csv,
)
from .routing import QueryEvals, characterize
from .scoring import (
    ChatLogprobScorer,
    EndpointScorer,
    ScoreCache,
    StubScorer,
    load_scores,
    save_scores,
    score_query,
)
from .stubs import JudgeStub, LogitStub, QAStub
from .teacher import (
    YES,
    LlmJudgeTeacher,
    MatchTeacher,
    RecallTeacher,
    batch_verdicts,
    export_trainset,
    load_verdicts,
    save_verdicts,
    trainset_meta,
    write_trainset,
)
from .tokens import ALLOWED_PREFIX_TOKENS, truncate_tokens

_ABLATION_COLUMNS = [
    "n",
    "acc",
    "auc",
    "norag",
    "rag",
    "q_at_0p5",
    "retr_at_0p5",
    "best_quality",
    "best_retr",
    "best_theta",
    "status",
]


@dataclass
class RunConfig:
    """Declarative run description; see README for the YAML schema."""

    dataset: str
    out_dir: str
    name: str = "dataset"
    validation_size: int = 50
    seed: int = 7
    offline: bool = False
    generator: dict = field(default_factory=lambda: {"kind": "stub"})
    judge: dict = field(default_factory=lambda: {"kind": "stub"})
    teacher: dict = field(default_factory=lambda: {"kind": "match", "cutoff": 0.5})
    scorer: dict = field(
        default_factory=lambda: {"kind": "calibrated_stub", "target_acc": 0.82, "target_auc": 0.89}
    )
    prefix_tokens: list[int] = field(default_factory=lambda: [0, 32])
    eval_prefix_tokens: int = 32
    max_answer_tokens: int = 128
    judge_max_tokens: int = 16
    context_key: str = "docs"
    max_parallel: int = 8
    sweep_grid: dict = field(default_factory=lambda: {"start": 0.0, "stop": 1.0, "step": 0.05})
    subset_sizes: list[int] = field(default_factory=list)
    latency: dict = field(default_factory=lambda: {"preset": "a100_vllm"})
    plots: bool = True
    audit: bool = False  # append request/response JSONL per backend (completion order)
    cache_dir: str | None = None
    ablate_prefix_tokens: list[int] = field(default_factory=lambda: list(ALLOWED_PREFIX_TOKENS))
    datasets: list[dict] = field(default_factory=list)

    @classmethod
    def from_yaml(cls, path: str | Path, **overrides) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping at top level")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        if "out_dir" not in raw:
            raise ConfigError("config must set out_dir (or pass --out)")
        if "dataset" not in raw:
            raise ConfigError("config must set dataset")
        config = cls(**raw)
        config.validate()
        return config

    def validate(self) -> None:
        if not Path(self.dataset).exists():
            raise ConfigError(f"dataset path does not exist: {self.dataset}")
        for entry in self.datasets:
            if "name" not in entry or "dataset" not in entry:
                raise ConfigError(f"datasets entries need name and dataset, got {entry}")
            if not Path(entry["dataset"]).exists():
                raise ConfigError(f"dataset path does not exist: {entry['dataset']}")
        if self.teacher.get("kind") not in ("match", "recall", "llm_judge"):
            raise ConfigError(f"unknown teacher kind {self.teacher.get('kind')!r}")
        if self.scorer.get("kind") not in ("calibrated_stub", "endpoint", "chat_logprob"):
            raise ConfigError(f"unknown scorer kind {self.scorer.get('kind')!r}")
        for kind_field, allowed in (("generator", ("stub", "http")), ("judge", ("stub", "http"))):
            kind = getattr(self, kind_field).get("kind")
            if kind not in allowed:
                raise ConfigError(f"unknown {kind_field} kind {kind!r}")
        for p in self.prefix_tokens:
            if p not in ALLOWED_PREFIX_TOKENS:
                raise ConfigError(f"prefix_tokens must be from {ALLOWED_PREFIX_TOKENS}, got {p}")
        if self.eval_prefix_tokens not in ALLOWED_PREFIX_TOKENS:
            raise ConfigError(f"eval_prefix_tokens must be from {ALLOWED_PREFIX_TOKENS}")
        if self.offline:
            for name in ("generator", "judge"):
                if getattr(self, name).get("kind") == "http":
                    raise ConfigError(f"offline run cannot use an http {name} backend")
            if self.scorer.get("kind") == "endpoint":
                raise ConfigError("offline run cannot use an endpoint scorer")
            if self.scorer.get("backend", {}).get("kind") == "http":
                raise ConfigError("offline run cannot use an http scorer backend")

    def grid_values(self) -> list[float]:
        if isinstance(self.sweep_grid, list):
            return [float(t) for t in self.sweep_grid]
        start = float(self.sweep_grid.get("start", 0.0))
        stop = float(self.sweep_grid.get("stop", 1.0))
        step = float(self.sweep_grid.get("step", 0.05))
        if step <= 0:
            raise ConfigError("sweep_grid.step must be positive")
        count = int(round((stop - start) / step))
        return [round(start + i * step, 10) for i in range(count + 1)]

    def stage_costs(self) -> StageCosts:
        if "costs" in self.latency:
            return StageCosts(**self.latency["costs"])
        return load_preset(self.latency.get("preset", "a100_vllm"))


def _hash_obj(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_sha(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunManifest:
    """Stage-completion ledger for one output directory."""

    def __init__(self, path: Path):
        self.path = path
        self.data: dict = {"tool_version": __version__, "stages": {}, "created_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
        if path.exists():
            self.data = json.loads(path.read_text(encoding="utf-8"))

    def stage(self, name: str) -> dict | None:
        return self.data["stages"].get(name)

    def record(self, name: str, conf_hash: str, artifacts: list[Path]) -> None:
        self.data["stages"][name] = {
            "hash": conf_hash,
            "artifacts": [str(p) for p in artifacts],
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        self.data["updated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.save()

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Pipeline:
    """Owns one output directory and the staged artifacts inside it."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(self.out / "manifest.json")
        self.partial_failures: list[str] = []
        self._records: list[QueryRecord] | None = None
        self._split: DatasetSplit | None = None
        self._gen_client: InferenceClient | None = None
        self._judge_client: InferenceClient | None = None
        self._stage_hashes: dict[str, str] = {}

    # -- artifact paths -----------------------------------------------------

    @property
    def split_path(self) -> Path:
        return self.out / "split.json"

    @property
    def norag_path(self) -> Path:
        return self.out / "generations" / "norag.jsonl"

    @property
    def rag_path(self) -> Path:
        return self.out / "generations" / "rag.jsonl"

    @property
    def verdicts_norag_path(self) -> Path:
        return self.out / "verdicts" / "norag.jsonl"

    @property
    def verdicts_rag_path(self) -> Path:
        return self.out / "verdicts" / "rag.jsonl"

    @property
    def flagged_path(self) -> Path:
        return self.out / "verdicts" / "flagged.json"

    def trainset_path(self, prefix: int, size: int | None = None) -> Path:
        stem = f"trainset_p{prefix}" + (f"_n{size}" if size is not None else "")
        return self.out / "trainsets" / f"{stem}.jsonl"

    @property
    def scores_path(self) -> Path:
        return self.out / "scores" / f"ik_p{self.config.eval_prefix_tokens}.jsonl"

    @property
    def reports_dir(self) -> Path:
        return self.out / "reports"

    # -- shared state ----------------------------------------------------------

    def records(self) -> list[QueryRecord]:
        if self._records is None:
            self._records = load_dataset(self.config.dataset)
        return self._records

    def split(self) -> DatasetSplit:
        if self._split is None:
            obj = json.loads(self.split_path.read_text(encoding="utf-8"))
            by_id = {r.id: r for r in self.records()}
            self._split = DatasetSplit(
                train=[by_id[i] for i in obj["train_ids"]],
                validation=[by_id[i] for i in obj["validation_ids"]],
                seed=obj["seed"],
                permutation=obj["permutation"],
            )
        return self._split

    def _cache_dir(self) -> str:
        return self.config.cache_dir or str(self.out / "cache")

    def _backend_config(self, conf: dict, default_model: str, cache_name: str) -> BackendConfig:
        return BackendConfig(
            base_url=conf.get("base_url", "stub://"),
            model_id=conf.get("model_id", default_model),
            max_parallel_requests=self.config.max_parallel,
            retry_limit=int(conf.get("retry_limit", 3)),
            timeout_s=float(conf.get("timeout_s", 30.0)),
            retry_backoff_s=float(conf.get("retry_backoff_s", 0.5)),
            api_key=conf.get("api_key"),
            cache_dir=str(Path(self._cache_dir()) / cache_name),
        )

    def _audit_path(self, name: str) -> Path | None:
        if not self.config.audit:
            return None
        path = self.out / "audit" / f"{name}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def generator_client(self) -> InferenceClient:
        if self._gen_client is None:
            conf = self.config.generator
            backend_config = self._backend_config(conf, "stub-qa", "generator")
            if conf.get("kind") == "http":
                backend = HttpChatBackend(backend_config, offline=self.config.offline)
            else:
                backend = QAStub(
                    self.records(),
                    knowledge_rate=float(conf.get("knowledge_rate", 0.6)),
                    seed=self.config.seed,
                    model_id=backend_config.model_id,
                )
            self._gen_client = InferenceClient(
                backend, backend_config, audit_log=self._audit_path("generator")
            )
        return self._gen_client

    def judge_client(self) -> InferenceClient:
        if self._judge_client is None:
            conf = self.config.judge
            backend_config = self._backend_config(conf, "stub-judge", "judge")
            if conf.get("kind") == "http":
                backend = HttpChatBackend(backend_config, offline=self.config.offline)
            else:
                backend = JudgeStub(model_id=backend_config.model_id)
            self._judge_client = InferenceClient(
                backend, backend_config, audit_log=self._audit_path("judge")
            )
        return self._judge_client

    def teacher(self):
        conf = self.config.teacher
        cutoff = float(conf.get("cutoff", 0.5))
        kind = conf["kind"]
        if kind == "match":
            return MatchTeacher(cutoff)
        if kind == "recall":
            return RecallTeacher(cutoff)
        return LlmJudgeTeacher(self.judge_client(), cutoff, self.config.judge_max_tokens)

    def scorer_backend(self, labels: list[tuple[str, str]]):
        conf = self.config.scorer
        kind = conf["kind"]
        if kind == "calibrated_stub":
            return StubScorer.calibrated(
                target_acc=float(conf.get("target_acc", 0.82)),
                target_auc=float(conf.get("target_auc", 0.89)),
                labels=labels,
                seed=self.config.seed,
            )
        if kind == "endpoint":
            return EndpointScorer(conf["base_url"], offline=self.config.offline)
        backend_conf = conf.get("backend", {"kind": "stub"})
        backend_config = self._backend_config(backend_conf, "stub-logits", "scorer")
        if backend_conf.get("kind") == "http":
            chat_backend = HttpChatBackend(backend_config, offline=self.config.offline)
        else:
            seed = self.config.seed

            def seeded_candidates(prompt: str) -> list[tuple[str, float]]:
                unit = int.from_bytes(hashlib.sha256(f"{seed}:{prompt}".encode()).digest()[:8], "big") / 2**64
                yes = -0.2 - 4.0 * (1.0 - unit)
                no = -0.2 - 4.0 * unit
                return [("Yes", yes), ("No", no)]

            chat_backend = LogitStub(seeded_candidates, model_id=backend_config.model_id)
        client = InferenceClient(chat_backend, backend_config, audit_log=self._audit_path("scorer"))
        return ChatLogprobScorer(client, top_k=int(conf.get("top_k", 8)))

    # -- stage mechanics ---------------------------------------------------------

    def _run_stage(self, name: str, section: dict, artifacts: list[Path], fn, upstream_ran: bool) -> bool:
        conf_hash = _hash_obj(section)
        self._stage_hashes[name] = conf_hash
        entry = self.manifest.stage(name)
        fresh = entry is not None and entry["hash"] == conf_hash and all(p.exists() for p in artifacts)
        if fresh and not upstream_ran:
            return False
        fn()
        missing = [str(p) for p in artifacts if not p.exists()]
        if missing:
            raise StageError(f"stage {name} finished without its artifacts", missing)
        self.manifest.record(name, conf_hash, artifacts)
        return True

    def _upstream(self, name: str) -> str:
        return self._stage_hashes[name]

    # -- stages ----------------------------------------------------------------

    def stage_split(self, upstream_ran: bool = False) -> bool:
        section = {
            "dataset": _file_sha(self.config.dataset),
            "validation_size": self.config.validation_size,
            "seed": self.config.seed,
        }

        def run() -> None:
            split = split_dataset(self.records(), self.config.validation_size, self.config.seed)
            self._split = split
            write_json(
                {
                    "seed": split.seed,
                    "permutation": split.permutation,
                    "train_ids": [r.id for r in split.train],
                    "validation_ids": [r.id for r in split.validation],
                },
                self.split_path,
            )

        return self._run_stage("split", section, [self.split_path], run, upstream_ran)

    def stage_generate(self, upstream_ran: bool = False) -> bool:
        section = {
            "upstream": self._upstream("split"),
            "generator": self.config.generator,
            "max_answer_tokens": self.config.max_answer_tokens,
            "context_key": self.config.context_key,
        }

        def run() -> None:
            client = self.generator_client()
            split = self.split()
            norag_requests = [
                GenerationRequest(
                    query_id=r.id,
                    mode=Mode.NORAG,
                    prompt=render_norag_prompt(r.question),
                    max_tokens=self.config.max_answer_tokens,
                )
                for r in self.records()
            ]
            rag_requests = []
            missing_docs = []
            for r in split.validation:
                docs = r.extra.get(self.config.context_key)
                if not docs:
                    missing_docs.append(r.id)
                    continue
                rag_requests.append(
                    GenerationRequest(
                        query_id=r.id,
                        mode=Mode.RAG,
                        prompt=render_rag_prompt(r.question, docs),
                        max_tokens=self.config.max_answer_tokens,
                        context_docs=docs,
                    )
                )
            if missing_docs:
                raise StageError(
                    f"validation records lack context documents under key {self.config.context_key!r}",
                    missing_docs,
                )
            self._write_batch(client.batch_run(norag_requests), self.norag_path, "generate/norag")
            self._write_batch(client.batch_run(rag_requests), self.rag_path, "generate/rag")

        return self._run_stage(
            "generate", section, [self.norag_path, self.rag_path], run, upstream_ran
        )

    def _write_batch(self, batch: BatchResult, path: Path, label: str) -> None:
        if batch.failures:
            items = [f"{f.query_id}: {f.error}" for f in batch.failures]
            write_json({"failures": items}, path.parent / (path.stem + "_failures.json"))
            if not batch.successes():
                raise BackendError(f"{label}: every request failed; first error: {items[0]}")
            raise StageError(f"{label} had {len(batch.failures)} failure(s)", items)
        save_generations(batch.successes(), path)

    def stage_verdicts(self, upstream_ran: bool = False) -> bool:
        section = {
            "upstream": self._upstream("generate"),
            "teacher": self.config.teacher,
            "judge": self.config.judge,
            "judge_max_tokens": self.config.judge_max_tokens,
        }
        artifacts = [self.verdicts_norag_path, self.verdicts_rag_path, self.flagged_path]

        def run() -> None:
            teacher = self.teacher()
            by_id = {r.id: r for r in self.records()}
            norag_gens = load_generations(self.norag_path)
            rag_gens = load_generations(self.rag_path)

            norag_verdicts, flagged_norag = batch_verdicts(
                teacher,
                [by_id[g.query_id] for g in norag_gens],
                norag_gens,
                max_parallel=self.config.max_parallel,
            )
            rag_verdicts, flagged_rag = batch_verdicts(
                teacher,
                [by_id[g.query_id] for g in rag_gens],
                rag_gens,
                max_parallel=self.config.max_parallel,
            )
            save_verdicts(norag_verdicts, self.verdicts_norag_path)
            save_verdicts(rag_verdicts, self.verdicts_rag_path)
            flagged = [{"query_id": qid, "error": err} for qid, err in flagged_norag + flagged_rag]
            write_json({"flagged": flagged}, self.flagged_path)
            self.partial_failures.extend(f["query_id"] for f in flagged)

        return self._run_stage("verdicts", section, artifacts, run, upstream_ran)

    def stage_trainsets(self, upstream_ran: bool = False) -> bool:
        section = {
            "upstream": self._upstream("verdicts"),
            "prefix_tokens": self.config.prefix_tokens,
            "subset_sizes": self.config.subset_sizes,
        }
        artifacts = [self.trainset_path(p) for p in self.config.prefix_tokens]
        artifacts += [
            self.trainset_path(p, s) for p in self.config.prefix_tokens for s in self.config.subset_sizes
        ]

        def run() -> None:
            split = self.split()
            norag_gens = load_generations(self.norag_path)
            verdicts = load_verdicts(self.verdicts_norag_path)
            verdict_ids = {v.query_id for v in verdicts}
            train_queries = [q for q in split.train if q.id in verdict_ids]
            teacher = self.teacher()
            for prefix in self.config.prefix_tokens:
                records = export_trainset(train_queries, norag_gens, verdicts, prefix)
                meta = trainset_meta(
                    teacher_id=teacher.teacher_id,
                    cutoff=float(self.config.teacher.get("cutoff", 0.5)),
                    source_dataset=self.config.name,
                    prefix_tokens=prefix,
                )
                write_trainset(self.trainset_path(prefix), records, meta)
                if self.config.subset_sizes:
                    subsets = subset_train(
                        DatasetSplit(train=train_queries, validation=[], seed=self.config.seed),
                        SubsetSpec(sizes=self.config.subset_sizes, seed=self.config.seed),
                    )
                    by_id = {rec.query_id: rec for rec in records}
                    for size, queries in subsets:
                        subset_records = [by_id[q.id] for q in queries]
                        write_trainset(
                            self.trainset_path(prefix, size),
                            subset_records,
                            {**meta, "subset_size": size},
                        )

        return self._run_stage("trainsets", section, artifacts, run, upstream_ran)

    def stage_scores(self, upstream_ran: bool = False) -> bool:
        section = {
            "upstream": self._upstream("verdicts"),
            "scorer": self.config.scorer,
            "eval_prefix_tokens": self.config.eval_prefix_tokens,
        }

        def run() -> None:
            split = self.split()
            verdicts = {v.query_id: v for v in load_verdicts(self.verdicts_norag_path)}
            norag_gens = {g.query_id: g for g in load_generations(self.norag_path)}
            val_queries = [q for q in split.validation if q.id in verdicts]
            labels = [(q.id, verdicts[q.id].label) for q in val_queries]
            backend = self.scorer_backend(labels)
            # cache is scoped to the scorer configuration: a different scorer
            # must never serve another scorer's memoized logits
            cache = ScoreCache(self.out / "scores" / f"cache_{_hash_obj(section)[:12]}.jsonl")
            prefix_budget = self.config.eval_prefix_tokens
            scores = []
            for query in val_queries:
                prefix = truncate_tokens(norag_gens[query.id].answer, prefix_budget)
                scores.append(score_query(query, prefix, backend, prefix_budget, cache))
            save_scores(scores, self.scores_path)

        return self._run_stage("scores", section, [self.scores_path], run, upstream_ran)

    def stage_evaluate(self, upstream_ran: bool = False) -> bool:
        section = {
            "upstream": self._upstream("scores"),
            "sweep_grid": self.config.sweep_grid,
            "latency": self.config.latency,
            "plots": self.config.plots,
        }
        artifacts = [
            self.reports_dir / "eval_report.json",
            self.reports_dir / "sweep.csv",
            self.reports_dir / "fig_quality_vs_retrieval.csv",
            self.reports_dir / "fig_ik_histogram.csv",
        ]
        if self.config.plots:
            artifacts += [
                self.reports_dir / "plots" / "quality_vs_retrieval.svg",
                self.reports_dir / "plots" / "ik_histogram.svg",
            ]

        def run() -> None:
            report, sweep, histogram = self._evaluate_columns()
            write_json(report, self.reports_dir / "eval_report.json")
            write_sweep_csv(sweep, self.reports_dir / "sweep.csv")
            write_quality_curve_csv(sweep, self.reports_dir / "fig_quality_vs_retrieval.csv")
            if histogram is not None:
                write_histogram_csv(histogram, self.reports_dir / "fig_ik_histogram.csv")
            else:
                (self.reports_dir / "fig_ik_histogram.csv").write_text(
                    "bin_lo,bin_hi,count\n", encoding="utf-8"
                )
            if self.config.plots:
                render_quality_curve_svg(
                    sweep,
                    self.reports_dir / "plots" / "quality_vs_retrieval.svg",
                    f"{self.config.name}: routed quality vs retrieval",
                )
                hist_svg = self.reports_dir / "plots" / "ik_histogram.svg"
                if histogram is not None:
                    render_histogram_svg(
                        histogram, hist_svg, f"{self.config.name}: IK score distribution"
                    )
                else:
                    hist_svg.parent.mkdir(parents=True, exist_ok=True)
                    hist_svg.write_text(
                        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="400">'
                        "<!-- fewer than 20 scores; no histogram --></svg>\n",
                        encoding="utf-8",
                    )

        return self._run_stage("evaluate", section, artifacts, run, upstream_ran)

    def _evaluate_columns(self):
        """Join scores, labels, and both eval columns over the validation set."""
        split = self.split()
        scores_by_id = {s.query_id: s for s in load_scores(self.scores_path)}
        norag_v = {v.query_id: v for v in load_verdicts(self.verdicts_norag_path)}
        rag_v = {v.query_id: v for v in load_verdicts(self.verdicts_rag_path)}

        teacher_kind = self.config.teacher["kind"]

        def eval_value(verdict) -> float:
            if teacher_kind == "llm_judge":
                return 1.0 if verdict.label == YES else 0.0
            return float(verdict.raw_score)

        evals, scores, labels, excluded = [], [], [], []
        for query in split.validation:
            if query.id not in scores_by_id or query.id not in norag_v or query.id not in rag_v:
                excluded.append(query.id)
                continue
            score = scores_by_id[query.id]
            scores.append(score)
            labels.append((query.id, norag_v[query.id].label))
            evals.append(
                QueryEvals(
                    query_id=query.id,
                    ik=score.ik,
                    eval_norag=eval_value(norag_v[query.id]),
                    eval_rag=eval_value(rag_v[query.id]),
                )
            )
        if not evals:
            raise StageError("evaluate found no complete per-query columns", excluded)

        report, sweep, histogram = build_eval_report(
            scores,
            labels,
            evals,
            self.config.grid_values(),
            latency_costs=self.config.stage_costs(),
            prefix_used=self.config.eval_prefix_tokens > 0,
            prefix_tokens=self.config.eval_prefix_tokens,
        )
        report["name"] = self.config.name
        report["teacher"] = self.config.teacher["kind"]
        report["seed"] = self.config.seed
        if excluded:
            report["excluded_query_ids"] = sorted(excluded)
        return report, sweep, histogram

    # -- commands ------------------------------------------------------------------

    def cmd_build_trainset(self) -> dict:
        ran = self.stage_split()
        ran = self.stage_generate(upstream_ran=ran) or ran
        ran = self.stage_verdicts(upstream_ran=ran) or ran
        ran = self.stage_trainsets(upstream_ran=ran) or ran
        return {
            "ran": ran,
            "trainsets": [str(self.trainset_path(p)) for p in self.config.prefix_tokens],
        }

    def cmd_score(self) -> dict:
        ran = self.stage_split()
        ran = self.stage_generate(upstream_ran=ran) or ran
        ran = self.stage_verdicts(upstream_ran=ran) or ran
        ran = self.stage_scores(upstream_ran=ran) or ran
        return {"ran": ran, "scores": str(self.scores_path)}

    def cmd_evaluate(self) -> dict:
        if self.config.datasets:
            return self._evaluate_many()
        ran = self.stage_split()
        ran = self.stage_generate(upstream_ran=ran) or ran
        ran = self.stage_verdicts(upstream_ran=ran) or ran
        ran = self.stage_scores(upstream_ran=ran) or ran
        self.stage_evaluate(upstream_ran=ran)
        return json.loads((self.reports_dir / "eval_report.json").read_text(encoding="utf-8"))

    def _evaluate_many(self) -> dict:
        rows = []
        for entry in self.config.datasets:
            sub = self._derive(
                dataset=entry["dataset"],
                name=entry["name"],
                validation_size=int(entry.get("validation_size", self.config.validation_size)),
                out_dir=str(self.out / "datasets" / entry["name"]),
                datasets=[],
            )
            sub_pipeline = Pipeline(sub)
            row = sub_pipeline.cmd_evaluate()
            self.partial_failures.extend(sub_pipeline.partial_failures)
            rows.append(row)
        combined = {"datasets": rows}
        write_json(combined, self.reports_dir / "eval_report.json")
        write_ablation_csv(
            [_flatten_report(r, {"name": r.get("name", "")}) for r in rows],
            ["name", *_ABLATION_COLUMNS],
            self.reports_dir / "eval_datasets.csv",
        )
        return combined

    def cmd_characterize(self) -> dict:
        self.cmd_score()
        scores = load_scores(self.scores_path)
        histogram = characterize(scores)
        payload = {
            "n": histogram.n,
            "bins": histogram.bins,
            "low_mass": histogram.low_mass,
            "high_mass": histogram.high_mass,
            "pattern": histogram.pattern.value,
        }
        write_json(payload, self.reports_dir / "characterize.json")
        write_histogram_csv(histogram, self.reports_dir / "fig_ik_histogram.csv")
        if self.config.plots:
            render_histogram_svg(
                histogram,
                self.reports_dir / "plots" / "ik_histogram.svg",
                f"{self.config.name}: IK score distribution",
            )
        return payload

    def cmd_latency(self) -> dict:
        costs = self.config.stage_costs()
        prefix_used = self.config.eval_prefix_tokens > 0
        norag_path, rag_path = path_costs(costs, prefix_used)
        curve = []
        for i in range(21):
            p = round(0.05 * i, 10)
            est = expected_latency(costs, p, prefix_used)
            curve.append(
                {
                    "p_retrieve": p,
                    "expected_ms": est.expected_ms,
                    "savings_fraction": est.savings_fraction,
                }
            )
        payload = {
            "prefix_used": prefix_used,
            "norag_path_ms": norag_path,
            "rag_path_ms": rag_path,
            "baseline_always_rag_ms": expected_latency(costs, 1.0, prefix_used).baseline_always_rag_ms,
            "curve": curve,
        }
        write_json(payload, self.reports_dir / "latency.json")
        return payload

    def cmd_ablate(self, axis: str) -> dict:
        if axis == "prefix_length":
            rows = self._ablate_prefix()
        elif axis == "trainset_size":
            rows = self._ablate_size()
        elif axis == "teacher":
            rows = self._ablate_teacher()
        else:
            raise ConfigError(
                f"unknown ablation axis {axis!r}; expected prefix_length, trainset_size, or teacher"
            )
        key_columns = {
            "prefix_length": ["prefix_tokens"],
            "trainset_size": ["size", "prefix_tokens"],
            "teacher": ["teacher"],
        }[axis]
        out_path = self.reports_dir / f"ablation_{axis}.csv"
        write_ablation_csv(rows, [*key_columns, *_ABLATION_COLUMNS], out_path)
        return {"axis": axis, "rows": rows, "csv": str(out_path)}

    def _derive(self, **changes) -> RunConfig:
        sub = replace(self.config, **changes)
        sub.plots = False
        if self.config.cache_dir is None:
            sub.cache_dir = str(self.out / "cache")
        return sub

    def _cell_row(self, config: RunConfig, keys: dict) -> dict:
        pipeline = Pipeline(config)
        try:
            report = pipeline.cmd_evaluate()
            self.partial_failures.extend(pipeline.partial_failures)
            return _flatten_report(report, keys)
        except IkGateError as exc:
            row = {**keys, "status": f"missing ({type(exc).__name__})"}
            return row

    def _ablate_prefix(self) -> list[dict]:
        rows = []
        for prefix in self.config.ablate_prefix_tokens:
            sub = self._derive(
                eval_prefix_tokens=prefix,
                prefix_tokens=[prefix],
                out_dir=str(self.out / "ablate" / f"prefix_{prefix}"),
            )
            sub_pipeline = Pipeline(sub)
            sub_pipeline.cmd_build_trainset()
            rows.append(self._cell_row(sub, {"prefix_tokens": prefix}))
        return rows

    def _ablate_size(self) -> list[dict]:
        if not self.config.subset_sizes:
            raise ConfigError("trainset_size ablation needs subset_sizes in the config")
        self.cmd_build_trainset()
        rows = []
        sizes: list = [*self.config.subset_sizes, "all"]
        for size in sizes:
            for prefix in self.config.prefix_tokens:
                trainset = self.trainset_path(prefix, None if size == "all" else int(size))
                keys = {"size": size, "prefix_tokens": prefix}
                if not trainset.exists():
                    rows.append({**keys, "status": "missing (trainset)"})
                    continue
                sub = self._derive(
                    eval_prefix_tokens=prefix,
                    out_dir=str(self.out / "ablate" / f"size_{size}_p{prefix}"),
                )
                rows.append(self._cell_row(sub, keys))
        return rows

    def _ablate_teacher(self) -> list[dict]:
        rows = []
        for kind in ("match", "recall", "llm_judge"):
            sub = self._derive(
                teacher={"kind": kind, "cutoff": float(self.config.teacher.get("cutoff", 0.5))},
                out_dir=str(self.out / "ablate" / f"teacher_{kind}"),
            )
            rows.append(self._cell_row(sub, {"teacher": kind}))
        return rows


def _flatten_report(report: dict, keys: dict) -> dict:
    row = dict(keys)
    row.update(
        {
            "n": report.get("n"),
            "acc": report.get("acc"),
            "auc": report.get("auc") if report.get("auc") is not None else "undefined",
            "norag": report.get("norag"),
            "rag": report.get("rag"),
            "q_at_0p5": report.get("at_0p5", {}).get("quality"),
            "retr_at_0p5": report.get("at_0p5", {}).get("retr"),
            "best_quality": report.get("best", {}).get("quality"),
            "best_retr": report.get("best", {}).get("retr"),
            "best_theta": report.get("best", {}).get("theta"),
            "status": "ok",
        }
    )
    return row
