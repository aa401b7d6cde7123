"""Corpus pipeline orchestration, benchmark evaluation, and reporting.

The pipeline runs four stages in a fixed order — clean, dedup, balance,
sequence — each reading the previous stage's canonical output file, so
running the stages one at a time through the CLI produces byte-identical
files to one composed run. No stage output embeds a timestamp; with a
fixed seed, config, and inputs, reruns are byte-identical.

Evaluation scores prediction files against gold files, dispatching each
task to its metric, and renders the result as a grouped two-model table
(markdown or CSV) with scores fixed to 4 decimals.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import cleaning as cleaning_mod
from . import curriculum as curriculum_mod
from . import dedup as dedup_mod
from .dpo import DpoHyperparams
from .errors import ScibenchError, StageFailure
from .metrics import (
    METRIC_REGISTRY,
    EntityMention,
    PRF,
    RelationTriple,
    accuracy,
    bleu,
    check_gold_mentions,
    micro_merge,
    ner_strict_f1,
    re_micro_f1,
    rouge_l,
    score_topic_terms,
    set_f1,
    tokenize,
)
from .records import (
    Document,
    InstructionPair,
    MalformedRecord,
    Prediction,
    atomic_write_text,
    read_records,
    write_records,
)

logger = logging.getLogger(__name__)

PIPELINE_SCHEMAS = ("document", "instruction_pair")
STAGE_ORDER = ("clean", "dedup", "balance", "sequence")

# Canonical artifact names inside output_dir. Stage subcommands read the
# previous stage's artifact from these same names, which is what makes
# stage-at-a-time CLI runs equal the composed pipeline file-for-file.
CLEANED_FILE = "cleaned.jsonl"
CLEAN_SUMMARY_FILE = "clean_summary.json"
DEDUPED_FILE = "deduped.jsonl"
CLUSTERS_FILE = "dedup_clusters.txt"
DEDUP_SUMMARY_FILE = "dedup_summary.json"
BALANCED_FILE = "balanced.jsonl"
BALANCE_SUMMARY_FILE = "balance_summary.json"
SCHEDULE_FILE = "schedule.jsonl"
SEQUENCE_SUMMARY_FILE = "sequence_summary.json"
PIPELINE_SUMMARY_FILE = "pipeline_summary.json"

TASK_GROUPS = ("Sequence Labeling", "Generation", "Inference")

# Quality priors used when sequencing raw documents (which carry a source
# label, not a task): curated/synthetic sources rank above general text.
SOURCE_QUALITY_DEFAULT: dict[str, float] = {
    "synthetic": 0.95,
    "academic_paper": 0.85,
    "patent": 0.80,
    "general": 0.60,
}


class InvalidConfig(ScibenchError):
    """Pipeline configuration is malformed or references missing paths."""


class IdMismatch(ScibenchError):
    """Prediction and gold files disagree on instance ids for a task."""


class UnknownTask(ScibenchError):
    """A prediction or gold record names a task outside the benchmark."""


class EmptyReport(ScibenchError):
    """A report with zero rows cannot be rendered."""


# ----- evaluation task table -----

@dataclass(frozen=True)
class EvalTask:
    group: str
    display: str
    metric: str


# Task id -> (table group, display name, metric). Declaration order is
# render order: groups are contiguous and ordered Sequence Labeling,
# Generation, Inference.
EVAL_TASKS: dict[str, EvalTask] = {
    "named_entity_recognition": EvalTask("Sequence Labeling", "Named Entity Recognition", "F1"),
    "relation_extraction": EvalTask("Sequence Labeling", "Relation Extract", "F1"),
    "abstractive_summarization": EvalTask("Sequence Labeling", "Abstractive Summarization", "Rouge"),
    "knowledge_linking": EvalTask("Sequence Labeling", "Knowledge Linking", "F1"),
    "topic_modeling": EvalTask("Sequence Labeling", "Topic Modeling", "Coherence Score"),
    "abstract_to_title": EvalTask("Generation", "Abstract-to-Title", "Rouge"),
    "machine_translation": EvalTask("Generation", "Machine Translation", "BLEU"),
    "relationship_predict": EvalTask("Inference", "Relationship Predict", "Accuracy"),
    "knowledge_fusion": EvalTask("Inference", "Knowledge Fusion", "F1"),
    "semantic_matching": EvalTask("Inference", "Semantic Matching", "F1"),
}

# Metric overrides may only swap a task between the two text-similarity
# metrics; the others need differently shaped payloads.
_OVERRIDABLE_METRICS = frozenset({"Rouge", "BLEU"})


# ----- configuration -----

@dataclass(frozen=True)
class CleaningSettings:
    filters: cleaning_mod.FilterConfig = field(default_factory=cleaning_mod.FilterConfig)
    scrub_pii: bool = True
    use_classifier: bool = False
    classifier_fixture_path: str | None = None  # JSON {doc_id: label}


@dataclass(frozen=True)
class BalanceSettings:
    # None disables the stage (pass-through); keys are sources for the
    # document schema, domains for the instruction_pair schema.
    targets: Mapping[str, float] | None = None


@dataclass(frozen=True)
class MetricsSettings:
    topic_mode: str = "bleu"  # backing scorer for "Coherence Score"
    bleu_smoothing: str = "add_one"
    lang_mode: str = "mixed"  # tokenizer mode for text metrics
    overrides: Mapping[str, str] = field(default_factory=dict)  # task -> metric

    def __post_init__(self):
        for task, metric in self.overrides.items():
            if task not in EVAL_TASKS:
                raise InvalidConfig(f"metric override for unknown task {task!r}")
            if (
                metric not in _OVERRIDABLE_METRICS
                or EVAL_TASKS[task].metric not in _OVERRIDABLE_METRICS
            ):
                raise InvalidConfig(
                    f"override {task!r} -> {metric!r} not allowed: only "
                    f"Rouge and BLEU are interchangeable"
                )


@dataclass(frozen=True)
class JudgeSettings:
    tie_margin: float = 0.0
    fixture_path: str | None = None  # JSON [[question_id, order, s1, s2], ...]

    def __post_init__(self):
        if not self.tie_margin >= 0.0:
            raise InvalidConfig(f"tie_margin must be >= 0, got {self.tie_margin!r}")


@dataclass
class PipelineConfig:
    input_paths: tuple[str, ...]
    output_dir: str
    schema: str = "document"
    seed: int = 0
    jobs: int = 1
    cleaning: CleaningSettings = field(default_factory=CleaningSettings)
    dedup: dedup_mod.LshConfig = field(default_factory=dedup_mod.LshConfig)
    balance: BalanceSettings = field(default_factory=BalanceSettings)
    curriculum: curriculum_mod.StageConfig = field(default_factory=curriculum_mod.StageConfig)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    dpo: DpoHyperparams = field(default_factory=DpoHyperparams)
    config_hash: str = ""

    def __post_init__(self):
        if self.schema not in PIPELINE_SCHEMAS:
            raise InvalidConfig(
                f"schema must be one of {PIPELINE_SCHEMAS}, got {self.schema!r}"
            )
        if self.jobs < 1:
            raise InvalidConfig(f"jobs must be >= 1, got {self.jobs!r}")
        if not self.input_paths:
            raise InvalidConfig("input_paths must be nonempty")
        if not self.config_hash:
            canonical = json.dumps(config_to_dict(self), sort_keys=True)
            self.config_hash = hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Canonical JSON-ready view of a config (excluding the hash itself)."""
    return {
        "input_paths": list(cfg.input_paths),
        "output_dir": cfg.output_dir,
        "schema": cfg.schema,
        "seed": cfg.seed,
        "jobs": cfg.jobs,
        "cleaning": {
            "keyword_blacklist": list(cfg.cleaning.filters.keyword_blacklist),
            "language_threshold": cfg.cleaning.filters.language_threshold,
            "pii_patterns": dict(cfg.cleaning.filters.pii_patterns),
            "require_abstract_nonempty": cfg.cleaning.filters.require_abstract_nonempty,
            "require_doi_valid": cfg.cleaning.filters.require_doi_valid,
            "scrub_pii": cfg.cleaning.scrub_pii,
            "use_classifier": cfg.cleaning.use_classifier,
            "classifier_fixture_path": cfg.cleaning.classifier_fixture_path,
        },
        "dedup": {
            "num_perms": cfg.dedup.num_perms,
            "bands": cfg.dedup.bands,
            "rows_per_band": cfg.dedup.rows_per_band,
            "jaccard_threshold": cfg.dedup.jaccard_threshold,
            "seed": cfg.dedup.seed,
            "word_k": cfg.dedup.word_k,
            "char_k": cfg.dedup.char_k,
            "scope": cfg.dedup.scope,
        },
        "balance": {
            "targets": dict(cfg.balance.targets) if cfg.balance.targets else None,
        },
        "curriculum": {
            "stage1_tasks": sorted(cfg.curriculum.stage1_tasks),
            "stage2_tasks": sorted(cfg.curriculum.stage2_tasks),
            "stage1_target_count": cfg.curriculum.stage1_target_count,
            "stage2_new_count": cfg.curriculum.stage2_new_count,
            "replay_fraction": cfg.curriculum.replay_fraction,
        },
        "metrics": {
            "topic_mode": cfg.metrics.topic_mode,
            "bleu_smoothing": cfg.metrics.bleu_smoothing,
            "lang_mode": cfg.metrics.lang_mode,
            "overrides": dict(cfg.metrics.overrides),
        },
        "judge": {
            "tie_margin": cfg.judge.tie_margin,
            "fixture_path": cfg.judge.fixture_path,
        },
        "dpo": {
            "beta": cfg.dpo.beta,
            "lr_init": cfg.dpo.lr_init,
            "warmup_steps": cfg.dpo.warmup_steps,
            "epochs": cfg.dpo.epochs,
            "batch_size": cfg.dpo.batch_size,
            "gap_scaling": cfg.dpo.gap_scaling,
        },
    }


def _resolve(base_dir: Path, value: str) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else base_dir / path)


def _build_section(name: str, builder, data: Mapping):
    try:
        return builder(**data)
    except TypeError as exc:
        raise InvalidConfig(f"[{name}] has an unknown or missing field: {exc}") from exc
    except (ScibenchError, ValueError) as exc:
        raise InvalidConfig(f"[{name}] is invalid: {exc}") from exc


def config_from_dict(
    data: Mapping,
    base_dir: str | Path = ".",
    config_hash: str = "",
    seed: int | None = None,
    jobs: int | None = None,
) -> PipelineConfig:
    """Build a validated PipelineConfig from a parsed mapping.

    Relative paths resolve against base_dir. seed/jobs arguments override
    the file values (CLI flags win). Referenced input paths must exist.
    """
    base_dir = Path(base_dir)
    data = dict(data)
    unknown = set(data) - {
        "input_paths", "output_dir", "schema", "seed", "jobs",
        "cleaning", "dedup", "balance", "curriculum", "metrics", "judge", "dpo",
    }
    if unknown:
        raise InvalidConfig(f"unknown top-level config keys: {sorted(unknown)}")
    if "input_paths" not in data or "output_dir" not in data:
        raise InvalidConfig("config requires input_paths and output_dir")
    input_paths = data["input_paths"]
    if isinstance(input_paths, str) or not isinstance(input_paths, (list, tuple)):
        raise InvalidConfig("input_paths must be a list of paths")
    resolved_inputs = tuple(_resolve(base_dir, p) for p in input_paths)
    for path in resolved_inputs:
        if not Path(path).is_file():
            raise InvalidConfig(f"input path does not exist: {path}")

    effective_seed = seed if seed is not None else int(data.get("seed", 0))
    effective_jobs = jobs if jobs is not None else int(data.get("jobs", 1))

    cleaning_data = dict(data.get("cleaning", {}))
    filter_fields = {}
    for key in (
        "keyword_blacklist", "language_threshold", "pii_patterns",
        "require_abstract_nonempty", "require_doi_valid",
    ):
        if key in cleaning_data:
            value = cleaning_data.pop(key)
            if key == "keyword_blacklist":
                value = tuple(value)
            filter_fields[key] = value
    if "classifier_fixture_path" in cleaning_data and cleaning_data["classifier_fixture_path"]:
        fixture = _resolve(base_dir, cleaning_data["classifier_fixture_path"])
        if not Path(fixture).is_file():
            raise InvalidConfig(f"classifier fixture does not exist: {fixture}")
        cleaning_data["classifier_fixture_path"] = fixture
    filters = _build_section("cleaning", cleaning_mod.FilterConfig, filter_fields)
    cleaning_settings = _build_section(
        "cleaning", CleaningSettings, {"filters": filters, **cleaning_data}
    )

    dedup_data = dict(data.get("dedup", {}))
    dedup_data.setdefault("seed", effective_seed)
    lsh = _build_section("dedup", dedup_mod.LshConfig, dedup_data)

    balance_data = dict(data.get("balance", {}))
    balance = _build_section("balance", BalanceSettings, balance_data)

    curriculum_data = dict(data.get("curriculum", {}))
    for key in ("stage1_tasks", "stage2_tasks"):
        if key in curriculum_data:
            curriculum_data[key] = frozenset(curriculum_data[key])
    stage_cfg = _build_section("curriculum", curriculum_mod.StageConfig, curriculum_data)

    metrics_settings = _build_section("metrics", MetricsSettings, dict(data.get("metrics", {})))

    judge_data = dict(data.get("judge", {}))
    if judge_data.get("fixture_path"):
        fixture = _resolve(base_dir, judge_data["fixture_path"])
        if not Path(fixture).is_file():
            raise InvalidConfig(f"judge fixture does not exist: {fixture}")
        judge_data["fixture_path"] = fixture
    judge_settings = _build_section("judge", JudgeSettings, judge_data)

    dpo_settings = _build_section("dpo", DpoHyperparams, dict(data.get("dpo", {})))

    return _build_section(
        "config",
        PipelineConfig,
        {
            "input_paths": resolved_inputs,
            "output_dir": _resolve(base_dir, data["output_dir"]),
            "schema": data.get("schema", "document"),
            "seed": effective_seed,
            "jobs": effective_jobs,
            "cleaning": cleaning_settings,
            "dedup": lsh,
            "balance": balance,
            "curriculum": stage_cfg,
            "metrics": metrics_settings,
            "judge": judge_settings,
            "dpo": dpo_settings,
            "config_hash": config_hash,
        },
    )


def load_config(
    path: str | Path, seed: int | None = None, jobs: int | None = None
) -> PipelineConfig:
    """Load a TOML config file. The config hash is the SHA-256 of the raw
    file bytes; --seed/--jobs style overrides do not change it (the
    effective seed is recorded separately in every summary)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise InvalidConfig(f"{path} is not valid TOML: {exc}") from exc
    return config_from_dict(
        data,
        base_dir=path.parent,
        config_hash=hashlib.sha256(raw).hexdigest(),
        seed=seed,
        jobs=jobs,
    )


# ----- stage summaries -----

@dataclass
class StageSummary:
    stage: str
    count_in: int
    count_out: int
    rejections: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self, config_hash: str, seed: int) -> dict:
        return {
            "stage": self.stage,
            "count_in": self.count_in,
            "count_out": self.count_out,
            "rejections": dict(sorted(self.rejections.items())),
            "extra": self.extra,
            "config_hash": config_hash,
            "seed": seed,
        }


@dataclass
class PipelineSummary:
    stages: dict[str, StageSummary]
    config_hash: str
    seed: int


def _write_summary(config: PipelineConfig, filename: str, summary: StageSummary) -> None:
    payload = summary.to_dict(config.config_hash, config.seed)
    atomic_write_text(
        Path(config.output_dir) / filename,
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
    )


def _out_path(config: PipelineConfig, name: str) -> Path:
    return Path(config.output_dir) / name


def _read_stage_input(config: PipelineConfig, name: str) -> list:
    return list(read_records(_out_path(config, name), config.schema))


# ----- stage: clean -----

def _make_classifier(config: PipelineConfig):
    settings = config.cleaning
    if settings.classifier_fixture_path:
        with open(settings.classifier_fixture_path, "r", encoding="utf-8") as handle:
            table = json.load(handle)
        return cleaning_mod.FixtureClassifier(table)
    return cleaning_mod.HttpClassifier(max_in_flight=config.jobs)


def _clean_documents(config: PipelineConfig) -> StageSummary:
    settings = config.cleaning
    patterns = cleaning_mod.compile_pii_patterns(settings.filters.pii_patterns)
    classifier = _make_classifier(config) if settings.use_classifier else None

    kept: list[Document] = []
    rejections: dict[str, int] = {}
    pii_counts: dict[str, int] = {}
    count_in = 0

    def reject(reason_names: Iterable[str]) -> None:
        for name in reason_names:
            rejections[name] = rejections.get(name, 0) + 1

    for path in config.input_paths:
        for doc in read_records(path, "document"):
            count_in += 1
            try:
                decision = cleaning_mod.apply_rule_filters(doc, settings.filters)
            except cleaning_mod.EmptyDocument:
                reject(["empty_document"])
                continue
            meta = cleaning_mod.validate_metadata(doc, settings.filters)
            reasons = [name for name, _ in decision.reasons + meta.reasons]
            if reasons:
                reject(reasons)
                continue
            if settings.scrub_pii:
                fields = {}
                for name in ("title", "abstract", "body"):
                    scrubbed, counts = cleaning_mod.scrub_pii(getattr(doc, name), patterns)
                    fields[name] = scrubbed
                    for key, value in counts.items():
                        pii_counts[key] = pii_counts.get(key, 0) + value
                doc = replace(doc, **fields)
            if classifier is not None:
                label = cleaning_mod.classify_document(doc, classifier)
                if label != "scientific":
                    reject([f"classifier_{label}"])
                    continue
            doc = replace(
                doc,
                language_tag=cleaning_mod.detect_language_tag(
                    doc.body, settings.filters.language_threshold
                ),
            )
            kept.append(doc)

    write_records(_out_path(config, CLEANED_FILE), kept)
    return StageSummary(
        stage="clean",
        count_in=count_in,
        count_out=len(kept),
        rejections=rejections,
        extra={"pii_redactions": dict(sorted(pii_counts.items()))},
    )


def _clean_pairs(config: PipelineConfig) -> StageSummary:
    settings = config.cleaning
    patterns = cleaning_mod.compile_pii_patterns(settings.filters.pii_patterns)
    # Pairs carry a language label already, so only the blacklist rule
    # applies; a zero threshold makes the script rule unconditionally pass.
    text_filters = replace(settings.filters, language_threshold=0.0)

    kept: list[InstructionPair] = []
    rejections: dict[str, int] = {}
    pii_counts: dict[str, int] = {}
    count_in = 0

    for path in config.input_paths:
        for pair in read_records(path, "instruction_pair"):
            count_in += 1
            if not pair.response.strip():
                rejections["empty_response"] = rejections.get("empty_response", 0) + 1
                continue
            probe = Document(id=pair.id, body=pair.instruction + "\n" + pair.response)
            decision = cleaning_mod.apply_rule_filters(probe, text_filters)
            if not decision.accepted:
                for name, _ in decision.reasons:
                    rejections[name] = rejections.get(name, 0) + 1
                continue
            if settings.scrub_pii:
                fields = {}
                for name in ("instruction", "response"):
                    scrubbed, counts = cleaning_mod.scrub_pii(getattr(pair, name), patterns)
                    fields[name] = scrubbed
                    for key, value in counts.items():
                        pii_counts[key] = pii_counts.get(key, 0) + value
                pair = replace(pair, **fields)
            kept.append(pair)

    write_records(_out_path(config, CLEANED_FILE), kept)
    return StageSummary(
        stage="clean",
        count_in=count_in,
        count_out=len(kept),
        rejections=rejections,
        extra={"pii_redactions": dict(sorted(pii_counts.items()))},
    )


def stage_clean(config: PipelineConfig) -> StageSummary:
    """Rule filters, PII scrubbing, metadata checks, optional classifier.

    Writes cleaned.jsonl and clean_summary.json into output_dir.
    """
    if config.schema == "document":
        summary = _clean_documents(config)
    else:
        summary = _clean_pairs(config)
    _write_summary(config, CLEAN_SUMMARY_FILE, summary)
    return summary


# ----- stage: dedup -----

def stage_dedup(config: PipelineConfig) -> StageSummary:
    """Exact and near-duplicate removal over the cleaned records.

    Writes deduped.jsonl, dedup_clusters.txt, and dedup_summary.json.
    """
    records = _read_stage_input(config, CLEANED_FILE)
    if config.schema == "document":
        docs = records
    else:
        # near-duplicate detection over the response text
        docs = [Document(id=pair.id, body=pair.response) for pair in records]

    clusters = dedup_mod.find_near_duplicates(docs, config.dedup)
    kept_records = dedup_mod.drop_duplicates(records, clusters)

    header = f"config {config.config_hash} seed {config.seed}"
    dedup_mod.write_clusters(_out_path(config, CLUSTERS_FILE), clusters, header=header)
    write_records(_out_path(config, DEDUPED_FILE), kept_records)

    summary = StageSummary(
        stage="dedup",
        count_in=len(records),
        count_out=len(kept_records),
        extra={
            "clusters": len(clusters),
            "duplicates_dropped": len(records) - len(kept_records),
        },
    )
    _write_summary(config, DEDUP_SUMMARY_FILE, summary)
    return summary


# ----- stage: balance -----

def stage_balance(config: PipelineConfig) -> StageSummary:
    """Downsample to the configured category proportions.

    Documents balance by source, instruction pairs by domain. Without
    configured targets (or with an empty input) the stage passes records
    through unchanged. Writes balanced.jsonl and balance_summary.json.
    """
    records = _read_stage_input(config, DEDUPED_FILE)
    targets = config.balance.targets
    extra: dict = {}

    if not targets:
        kept = records
        extra["mode"] = "pass-through (no targets configured)"
    elif not records:
        kept = records
        extra["mode"] = "skipped (empty input)"
    else:
        if config.schema == "document":
            category_of = lambda record: record.source
        else:
            category_of = lambda record: record.domain
        kept = curriculum_mod.balance_proportions(
            records, targets, seed=config.seed, category_of=category_of
        )
        extra["mode"] = "balanced"
        extra["targets"] = dict(sorted(targets.items()))
        counts_in: dict[str, int] = {}
        counts_out: dict[str, int] = {}
        for record in records:
            key = category_of(record)
            counts_in[key] = counts_in.get(key, 0) + 1
        for record in kept:
            key = category_of(record)
            counts_out[key] = counts_out.get(key, 0) + 1
        extra["category_counts_in"] = dict(sorted(counts_in.items()))
        extra["category_counts_out"] = dict(sorted(counts_out.items()))

    write_records(_out_path(config, BALANCED_FILE), kept)
    summary = StageSummary(
        stage="balance", count_in=len(records), count_out=len(kept), extra=extra
    )
    _write_summary(config, BALANCE_SUMMARY_FILE, summary)
    return summary


# ----- stage: sequence -----

def _sequence_documents(records: Sequence[Document]) -> curriculum_mod.TrainingSchedule:
    scored = []
    for doc in records:
        tokens = len(tokenize(doc.body, "mixed").tokens)
        difficulty = 1.0 - math.exp(-tokens / curriculum_mod.LENGTH_SCALE_TOKENS)
        quality = SOURCE_QUALITY_DEFAULT.get(doc.source, 0.5)
        scored.append((doc, difficulty, quality))
    ranked = sorted(scored, key=lambda item: (-item[2], item[1]))
    entries = [
        curriculum_mod.ScheduleEntry(1, doc.id, difficulty, quality)
        for doc, difficulty, quality in ranked
    ]
    return curriculum_mod.TrainingSchedule(entries=entries, stage1_count=len(entries))


def stage_sequence(config: PipelineConfig) -> StageSummary:
    """Order the balanced records into a training schedule.

    Documents form a single stage ordered by (quality desc, difficulty
    asc); instruction pairs get the full two-stage schedule with replay.
    Writes schedule.jsonl and sequence_summary.json.
    """
    records = _read_stage_input(config, BALANCED_FILE)
    extra: dict = {}

    if not records:
        schedule = curriculum_mod.TrainingSchedule()
        extra["mode"] = "skipped (empty input)"
    elif config.schema == "document":
        schedule = _sequence_documents(records)
        extra["mode"] = "single-stage document ordering"
    else:
        schedule = curriculum_mod.build_stage_schedule(
            records, config.curriculum, seed=config.seed
        )
        extra["mode"] = "two-stage curriculum"
        extra["stage1_count"] = schedule.stage1_count
        extra["stage2_new_count"] = schedule.stage2_new_count
        extra["stage2_replay_count"] = schedule.stage2_replay_count
    if schedule.warnings:
        extra["warnings"] = list(schedule.warnings)

    curriculum_mod.write_schedule(_out_path(config, SCHEDULE_FILE), schedule)
    summary = StageSummary(
        stage="sequence",
        count_in=len(records),
        count_out=len(schedule.entries),
        extra=extra,
    )
    _write_summary(config, SEQUENCE_SUMMARY_FILE, summary)
    return summary


# ----- composed pipeline -----

_STAGE_FUNCTIONS = {
    "clean": stage_clean,
    "dedup": stage_dedup,
    "balance": stage_balance,
    "sequence": stage_sequence,
}


def run_pipeline(config: PipelineConfig) -> PipelineSummary:
    """Run clean, dedup, balance, and sequence in order.

    Every stage writes its artifacts atomically into output_dir; a stage
    error is wrapped in StageFailure and earlier stages' outputs stay on
    disk. Reruns with identical inputs, config, and seed are
    byte-identical.
    """
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    summaries: dict[str, StageSummary] = {}
    for stage_name in STAGE_ORDER:
        try:
            summaries[stage_name] = _STAGE_FUNCTIONS[stage_name](config)
        except ScibenchError as exc:
            raise StageFailure(stage_name, exc) from exc
        logger.info(
            "stage %s: %d in, %d out",
            stage_name,
            summaries[stage_name].count_in,
            summaries[stage_name].count_out,
        )
    payload = {
        "config_hash": config.config_hash,
        "seed": config.seed,
        "schema": config.schema,
        "stages": {
            name: summaries[name].to_dict(config.config_hash, config.seed)
            for name in STAGE_ORDER
        },
    }
    atomic_write_text(
        _out_path(config, PIPELINE_SUMMARY_FILE),
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
    )
    return PipelineSummary(stages=summaries, config_hash=config.config_hash, seed=config.seed)


# ----- evaluation -----

def _load_predictions(paths: Sequence[str | Path], role: str) -> dict[str, dict[str, Prediction]]:
    """Map task -> id -> record, rejecting unknown tasks and duplicate ids."""
    table: dict[str, dict[str, Prediction]] = {}
    for path in paths:
        for record in read_records(path, "prediction"):
            if record.task not in EVAL_TASKS:
                raise UnknownTask(
                    f"{role} record {record.id!r} names unknown task "
                    f"{record.task!r}; known: {sorted(EVAL_TASKS)}"
                )
            per_task = table.setdefault(record.task, {})
            if record.id in per_task:
                raise IdMismatch(
                    f"duplicate {role} id {record.id!r} for task {record.task!r}"
                )
            per_task[record.id] = record
    return table


def _check_id_alignment(
    task: str, preds: Mapping[str, Prediction], golds: Mapping[str, Prediction]
) -> list[str]:
    pred_ids = set(preds)
    gold_ids = set(golds)
    if pred_ids != gold_ids:
        missing = sorted(gold_ids - pred_ids)[:5]
        extra = sorted(pred_ids - gold_ids)[:5]
        raise IdMismatch(
            f"task {task!r}: prediction/gold ids differ "
            f"(missing from predictions: {missing}, unmatched extras: {extra})"
        )
    return sorted(gold_ids)


def _payload_str(record: Prediction, key: str) -> str:
    value = record.payload.get(key)
    if not isinstance(value, str):
        raise MalformedRecord(
            f"record {record.id!r} (task {record.task!r}) needs a string "
            f"{key!r} field, got {value!r}"
        )
    return value


def _payload_str_list(record: Prediction, key: str) -> list[str]:
    value = record.payload.get(key)
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise MalformedRecord(
            f"record {record.id!r} (task {record.task!r}) needs a list of "
            f"strings in {key!r}, got {value!r}"
        )
    return value


def _parse_mentions(record: Prediction, is_gold: bool) -> tuple[EntityMention, ...]:
    value = record.payload.get("entities")
    if not isinstance(value, list):
        raise MalformedRecord(
            f"record {record.id!r} needs an 'entities' list, got {value!r}"
        )
    mentions = []
    for item in value:
        if not isinstance(item, dict):
            raise MalformedRecord(f"record {record.id!r} has a non-object entity: {item!r}")
        try:
            surface = item["surface"]
            entity_type = item["entity_type"]
            start, end = item["start"], item["end"]
        except KeyError as exc:
            raise MalformedRecord(
                f"record {record.id!r} entity missing field {exc}"
            ) from exc
        if not isinstance(start, int) or not isinstance(end, int):
            raise MalformedRecord(
                f"record {record.id!r} entity span must be integers, "
                f"got {start!r}..{end!r}"
            )
        try:
            mentions.append(EntityMention(surface, entity_type, (start, end)))
        except ValueError as exc:
            raise MalformedRecord(f"record {record.id!r}: {exc}") from exc
    result = tuple(mentions)
    if is_gold:
        check_gold_mentions(result)
    return result


def _parse_triples(record: Prediction) -> tuple[RelationTriple, ...]:
    value = record.payload.get("triples")
    if not isinstance(value, list):
        raise MalformedRecord(
            f"record {record.id!r} needs a 'triples' list, got {value!r}"
        )
    triples = []
    for item in value:
        if not isinstance(item, dict):
            raise MalformedRecord(f"record {record.id!r} has a non-object triple: {item!r}")
        try:
            triples.append(RelationTriple(item["head"], item["relation"], item["tail"]))
        except KeyError as exc:
            raise MalformedRecord(f"record {record.id!r} triple missing field {exc}") from exc
        except ValueError as exc:
            raise MalformedRecord(f"record {record.id!r}: {exc}") from exc
    return tuple(triples)


def _gold_lang_mode(record: Prediction, default: str) -> str:
    value = record.payload.get("lang_mode", default)
    if value not in ("latin", "cjk", "mixed"):
        raise MalformedRecord(
            f"record {record.id!r} has invalid lang_mode {value!r}"
        )
    return value


@dataclass
class TaskScore:
    """Score plus the per-instance pieces bootstrap resampling needs:
    kind 'mean' carries one score per instance, kind 'counts' carries one
    (tp, fp, fn) triple per instance."""

    score: float
    kind: str
    values: list


def _score_task(
    task: str,
    metric: str,
    preds: Mapping[str, Prediction],
    golds: Mapping[str, Prediction],
    settings: MetricsSettings,
) -> TaskScore:
    ids = _check_id_alignment(task, preds, golds)

    if metric == "F1" and task == "named_entity_recognition":
        parts = [
            ner_strict_f1(
                _parse_mentions(preds[i], is_gold=False),
                _parse_mentions(golds[i], is_gold=True),
            )
            for i in ids
        ]
        merged = micro_merge(parts)
        return TaskScore(merged.f1, "counts", [(p.tp, p.fp, p.fn) for p in parts])
    if metric == "F1" and task == "relation_extraction":
        parts = [
            re_micro_f1(_parse_triples(preds[i]), _parse_triples(golds[i]))
            for i in ids
        ]
        merged = micro_merge(parts)
        return TaskScore(merged.f1, "counts", [(p.tp, p.fp, p.fn) for p in parts])
    if metric == "F1":
        parts = [
            set_f1(
                _payload_str_list(preds[i], "items"),
                _payload_str_list(golds[i], "items"),
            )
            for i in ids
        ]
        merged = micro_merge(parts)
        return TaskScore(merged.f1, "counts", [(p.tp, p.fp, p.fn) for p in parts])
    if metric == "Rouge":
        scores = []
        for i in ids:
            mode = _gold_lang_mode(golds[i], settings.lang_mode)
            scores.append(
                rouge_l(
                    tokenize(_payload_str(preds[i], "text"), mode),
                    tokenize(_payload_str(golds[i], "text"), mode),
                )
            )
        return TaskScore(math.fsum(scores) / len(scores), "mean", scores)
    if metric == "BLEU":
        scores = []
        for i in ids:
            gold = golds[i]
            mode = _gold_lang_mode(gold, settings.lang_mode)
            if "references" in gold.payload:
                references = [
                    tokenize(text, mode)
                    for text in _payload_str_list(gold, "references")
                ]
            else:
                references = [tokenize(_payload_str(gold, "text"), mode)]
            scores.append(
                bleu(
                    tokenize(_payload_str(preds[i], "text"), mode),
                    references,
                    smoothing=settings.bleu_smoothing,
                )
            )
        return TaskScore(math.fsum(scores) / len(scores), "mean", scores)
    if metric == "Accuracy":
        matches = [
            accuracy([_payload_str(preds[i], "label")], [_payload_str(golds[i], "label")])
            for i in ids
        ]
        return TaskScore(math.fsum(matches) / len(matches), "mean", matches)
    if metric == "Coherence Score":
        scores = [
            score_topic_terms(
                _payload_str_list(preds[i], "terms"),
                _payload_str_list(golds[i], "terms"),
                mode=settings.topic_mode,
            ).score
            for i in ids
        ]
        return TaskScore(math.fsum(scores) / len(scores), "mean", scores)
    raise UnknownTask(f"no scorer for metric {metric!r} (task {task!r})")


def run_eval(
    pred_files: Sequence[str | Path],
    gold_files: Sequence[str | Path],
    config: PipelineConfig | None = None,
    model_name: str = "model_a",
    generated_at: str | None = None,
    collect_details: bool = False,
):
    """Score prediction files against gold files task by task.

    Returns a single-model MetricReport whose rows follow the benchmark
    table order (Sequence Labeling, then Generation, then Inference).
    With collect_details=True returns (report, details) where details maps
    task id -> TaskScore for bootstrap resampling.
    """
    settings = config.metrics if config is not None else MetricsSettings()
    preds = _load_predictions(pred_files, "prediction")
    golds = _load_predictions(gold_files, "gold")
    if set(preds) != set(golds):
        raise IdMismatch(
            f"prediction tasks {sorted(preds)} differ from gold tasks {sorted(golds)}"
        )

    rows = []
    details: dict[str, TaskScore] = {}
    for task, info in EVAL_TASKS.items():
        if task not in golds:
            continue
        metric = settings.overrides.get(task, info.metric)
        result = _score_task(task, metric, preds[task], golds[task], settings)
        details[task] = result
        rows.append(
            ReportRow(
                task_group=info.group,
                dataset=info.display,
                score_model_a=result.score,
                score_model_b=None,
                metric_name=metric,
            )
        )

    report = MetricReport(
        rows=tuple(rows),
        model_a_name=model_name,
        model_b_name=None,
        config_hash=config.config_hash if config is not None else "",
        seed=config.seed if config is not None else 0,
        generated_at=(
            generated_at
            if generated_at is not None
            else datetime.now(timezone.utc).isoformat(timespec="seconds")
        ),
    )
    if collect_details:
        return report, details
    return report


def bootstrap_interval(
    task_score: TaskScore,
    iterations: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval over per-instance scores or counts."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    values = task_score.values
    if not values:
        raise ValueError("no per-instance values to resample")
    rng = random.Random(seed)
    stats = []
    for _ in range(iterations):
        sample = [values[rng.randrange(len(values))] for _ in values]
        if task_score.kind == "counts":
            merged = micro_merge(PRF.from_counts(tp, fp, fn) for tp, fp, fn in sample)
            stats.append(merged.f1)
        else:
            stats.append(math.fsum(sample) / len(sample))
    stats.sort()
    lo_index = int((alpha / 2) * (iterations - 1))
    hi_index = int((1 - alpha / 2) * (iterations - 1))
    return stats[lo_index], stats[hi_index]


# ----- reporting -----

@dataclass(frozen=True)
class ReportRow:
    task_group: str
    dataset: str
    score_model_a: float
    score_model_b: float | None
    metric_name: str

    def __post_init__(self):
        if self.task_group not in TASK_GROUPS:
            raise ValueError(
                f"task_group must be one of {TASK_GROUPS}, got {self.task_group!r}"
            )
        if self.metric_name not in METRIC_REGISTRY:
            raise ValueError(
                f"metric_name {self.metric_name!r} is not a registered metric"
            )


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[ReportRow, ...]
    model_a_name: str = "model_a"
    model_b_name: str | None = "model_b"
    config_hash: str = ""
    seed: int = 0
    generated_at: str = ""


def combine_reports(report_a: MetricReport, report_b: MetricReport) -> MetricReport:
    """Merge two single-model reports over the same datasets into one
    two-model report (model b's scores fill the second score column)."""
    keys_a = [(r.task_group, r.dataset) for r in report_a.rows]
    keys_b = [(r.task_group, r.dataset) for r in report_b.rows]
    if keys_a != keys_b:
        raise IdMismatch(f"reports cover different datasets: {keys_a} vs {keys_b}")
    rows = tuple(
        replace(row_a, score_model_b=row_b.score_model_a)
        for row_a, row_b in zip(report_a.rows, report_b.rows)
    )
    return replace(
        report_a, rows=rows, model_b_name=report_b.model_a_name
    )


def _format_score(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def emit_report(report: MetricReport, format: str = "markdown") -> str:
    """Render the report with 4-decimal scores.

    markdown: grouped table, the group label printed only on the first
    row of each group. csv: one row per (task_group, dataset) plus '#'
    provenance comment lines that parse_report_csv reads back.
    """
    if format not in ("markdown", "csv"):
        raise ValueError(f"format must be markdown or csv, got {format!r}")
    if not report.rows:
        raise EmptyReport("report has no rows")
    model_b = report.model_b_name if report.model_b_name is not None else ""
    if format == "markdown":
        lines = [
            f"<!-- config {report.config_hash} seed {report.seed} "
            f"generated {report.generated_at} -->",
            f"| Task | Dataset | {report.model_a_name} | {model_b or '-'} "
            f"| Evaluation Metrics |",
            "| --- | --- | --- | --- | --- |",
        ]
        previous_group = None
        for row in report.rows:
            group = row.task_group if row.task_group != previous_group else ""
            previous_group = row.task_group
            score_b = _format_score(row.score_model_b) or "-"
            lines.append(
                f"| {group} | {row.dataset} | {_format_score(row.score_model_a)} "
                f"| {score_b} | {row.metric_name} |"
            )
        return "".join(line + "\n" for line in lines)

    buffer = io.StringIO()
    buffer.write(f"# config_hash={report.config_hash}\n")
    buffer.write(f"# seed={report.seed}\n")
    buffer.write(f"# generated_at={report.generated_at}\n")
    buffer.write(f"# model_a={report.model_a_name}\n")
    buffer.write(f"# model_b={model_b}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["task_group", "dataset", "score_model_a", "score_model_b", "metric"])
    for row in report.rows:
        writer.writerow([
            row.task_group,
            row.dataset,
            _format_score(row.score_model_a),
            _format_score(row.score_model_b),
            row.metric_name,
        ])
    return buffer.getvalue()


def parse_report_csv(text: str) -> MetricReport:
    """Invert emit_report(..., 'csv'), including the provenance comments."""
    provenance = {"config_hash": "", "seed": "0", "generated_at": "", "model_a": "model_a", "model_b": ""}
    data_lines = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            if key in provenance:
                provenance[key] = value
        elif line.strip():
            data_lines.append(line)
    if not data_lines:
        raise EmptyReport("no header row in CSV")
    reader = csv.reader(io.StringIO("\n".join(data_lines)))
    header = next(reader)
    expected = ["task_group", "dataset", "score_model_a", "score_model_b", "metric"]
    if header != expected:
        raise MalformedRecord(f"unexpected CSV header {header!r}")
    rows = []
    for parts in reader:
        if len(parts) != 5:
            raise MalformedRecord(f"CSV row has {len(parts)} fields: {parts!r}")
        group, dataset, score_a, score_b, metric = parts
        rows.append(
            ReportRow(
                task_group=group,
                dataset=dataset,
                score_model_a=float(score_a),
                score_model_b=float(score_b) if score_b else None,
                metric_name=metric,
            )
        )
    if not rows:
        raise EmptyReport("CSV contains no data rows")
    return MetricReport(
        rows=tuple(rows),
        model_a_name=provenance["model_a"],
        model_b_name=provenance["model_b"] or None,
        config_hash=provenance["config_hash"],
        seed=int(provenance["seed"]),
        generated_at=provenance["generated_at"],
    )


def report_to_json(report: MetricReport) -> str:
    payload = {
        "model_a_name": report.model_a_name,
        "model_b_name": report.model_b_name,
        "config_hash": report.config_hash,
        "seed": report.seed,
        "generated_at": report.generated_at,
        "rows": [
            {
                "task_group": row.task_group,
                "dataset": row.dataset,
                "score_model_a": row.score_model_a,
                "score_model_b": row.score_model_b,
                "metric_name": row.metric_name,
            }
            for row in report.rows
        ],
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def report_from_json(text: str) -> MetricReport:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"report JSON does not parse: {exc}") from exc
    if not isinstance(payload, dict) or "rows" not in payload:
        raise MalformedRecord("report JSON must be an object with a 'rows' list")
    try:
        rows = tuple(
            ReportRow(
                task_group=row["task_group"],
                dataset=row["dataset"],
                score_model_a=row["score_model_a"],
                score_model_b=row.get("score_model_b"),
                metric_name=row["metric_name"],
            )
            for row in payload["rows"]
        )
        return MetricReport(
            rows=rows,
            model_a_name=payload.get("model_a_name", "model_a"),
            model_b_name=payload.get("model_b_name"),
            config_hash=payload.get("config_hash", ""),
            seed=payload.get("seed", 0),
            generated_at=payload.get("generated_at", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"report JSON is malformed: {exc}") from exc
