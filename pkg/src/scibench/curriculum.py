"""Proportion balancing and two-stage training-schedule construction.

Balancing downsamples only: the output keeps the target category ratios at
the largest scale the scarcest category permits. The schedule orders
stage-1 pairs (structured-understanding tasks) by descending quality then
ascending difficulty, then stage-2 pairs (generation tasks plus an
optionally replayed fraction of stage 1) by the same rule. Difficulty and
quality come from a pluggable scorer; the default is a documented
stand-in, not a learned model.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Protocol, Sequence

from .errors import ScibenchError
from .metrics import tokenize
from .records import InstructionPair, atomic_write_text

logger = logging.getLogger(__name__)

# Default stage membership: structured-understanding tasks first, open
# generation second. A task may legally appear in both sets; tasks in
# neither set are left out of the schedule (reported as a warning count).
STAGE1_TASKS_DEFAULT = frozenset({
    "named_entity_recognition",
    "relation_extraction",
    "knowledge_linking",
    "machine_translation",
    "abstract_extract",
    "relation_predict",
    "knowledge_extract",
    "semantic_matching",
})
STAGE2_TASKS_DEFAULT = frozenset({
    "abstract_to_title",
    "summary_to_title",
    "summary_to_topic",
    "title_to_keywords",
    "topic_and_summary_to_title",
    "topic_modeling",
    "knowledge_fusion",
    "relationship_complete",
    "general_dialogue",
})

STAGE1_TARGET_DEFAULT = 340_000
STAGE2_NEW_TARGET_DEFAULT = 490_000

# Stand-in task-complexity weights in (0, 1]: extraction-style tasks low,
# open generation and fusion high. Overridable via DefaultScorer.
TASK_COMPLEXITY_DEFAULT: dict[str, float] = {
    "named_entity_recognition": 0.40,
    "abstract_extract": 0.40,
    "knowledge_extract": 0.50,
    "semantic_matching": 0.50,
    "general_dialogue": 0.50,
    "other": 0.50,
    "relation_extraction": 0.60,
    "knowledge_linking": 0.60,
    "relation_predict": 0.60,
    "title_to_keywords": 0.60,
    "topic_modeling": 0.65,
    "machine_translation": 0.70,
    "summary_to_title": 0.70,
    "summary_to_topic": 0.70,
    "abstract_to_title": 0.70,
    "relationship_complete": 0.70,
    "topic_and_summary_to_title": 0.75,
    "knowledge_fusion": 0.80,
}

# Stand-in source priors: curated scientific domains above general chat.
DOMAIN_QUALITY_DEFAULT: dict[str, float] = {
    "science_paper": 0.90,
    "patent": 0.85,
    "general": 0.60,
}

# Token count at which the length term reaches 1 - 1/e.
LENGTH_SCALE_TOKENS = 256


class MissingCategory(ScibenchError):
    """A target category has no pairs in the input."""


class InvalidTargets(ScibenchError):
    """Target proportions do not sum to 1 (or are otherwise invalid)."""


class EmptyStage(ScibenchError):
    """A schedule stage matched zero pairs."""

    def __init__(self, stage: int):
        super().__init__(f"stage {stage} matched zero pairs")
        self.stage = stage


@dataclass(frozen=True)
class StageConfig:
    stage1_tasks: frozenset = STAGE1_TASKS_DEFAULT
    stage2_tasks: frozenset = STAGE2_TASKS_DEFAULT
    stage1_target_count: int = STAGE1_TARGET_DEFAULT
    stage2_new_count: int = STAGE2_NEW_TARGET_DEFAULT
    replay_fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.replay_fraction <= 1.0:
            raise ValueError("replay_fraction must be in [0, 1]")
        if self.stage1_target_count < 0 or self.stage2_new_count < 0:
            raise ValueError("stage target counts must be nonnegative")


@dataclass(frozen=True)
class ScheduleEntry:
    stage: int  # 1 or 2
    pair_id: str
    difficulty: float
    quality: float


@dataclass
class TrainingSchedule:
    """Ordered training plan. All stage-1 entries precede stage-2 entries;
    within a stage the order is (quality desc, difficulty asc), stable.

    warnings carries informational notes (count deviations from the
    configured targets, excluded-task counts); they are never errors.
    """

    entries: list[ScheduleEntry] = field(default_factory=list)
    stage1_count: int = 0
    stage2_new_count: int = 0
    stage2_replay_count: int = 0
    warnings: list[str] = field(default_factory=list)


# ----- balancing -----

def balance_proportions(
    pairs: Sequence[InstructionPair],
    targets: Mapping[str, float],
    seed: int,
    category_of: Callable[[InstructionPair], str] | None = None,
) -> list[InstructionPair]:
    """Downsample pairs so category proportions match the targets.

    The output size is the maximum achievable without oversampling any
    category: with exact rational arithmetic, scale = min over categories
    of count_c / target_c, and each category keeps floor(scale * target_c)
    items, sampled uniformly under the seed. Output preserves input order.
    """
    if not targets:
        raise InvalidTargets("targets must be nonempty")
    for category, target in targets.items():
        if target <= 0:
            raise InvalidTargets(f"target for {category!r} must be positive")
    total = math.fsum(targets.values())
    if abs(total - 1.0) > 1e-9:
        raise InvalidTargets(f"targets sum to {total!r}, expected 1.0")

    if category_of is None:
        category_of = lambda pair: pair.domain

    indices_by_category: dict[str, list[int]] = {cat: [] for cat in targets}
    for index, pair in enumerate(pairs):
        category = category_of(pair)
        if category in indices_by_category:
            indices_by_category[category].append(index)
    for category in sorted(targets):
        if not indices_by_category[category]:
            raise MissingCategory(f"no pairs in target category {category!r}")

    # Exact arithmetic: Fraction targets avoid any epsilon tuning.
    fraction_targets = {cat: Fraction(t) for cat, t in targets.items()}
    scale = min(
        Fraction(len(indices_by_category[cat])) / fraction_targets[cat]
        for cat in targets
    )
    take = {
        cat: int(scale * fraction_targets[cat])  # Fraction floors via int()
        for cat in targets
    }

    rng = random.Random(seed)
    selected: set[int] = set()
    for category in sorted(targets):
        pool = indices_by_category[category]
        count = take[category]
        selected.update(pool if count >= len(pool) else rng.sample(pool, count))
    return [pairs[i] for i in sorted(selected)]


# ----- scoring -----

class DifficultyScorer(Protocol):
    def score(self, pair: InstructionPair) -> tuple[float, float]: ...


class DefaultScorer:
    """Documented stand-in scorer.

    difficulty = task_weight * (1 - exp(-tokens(response) / 256)): zero for
    an empty response, strictly increasing in response length, capped by
    the task-complexity weight. quality = a configurable prior on the
    pair's domain. Both land in [0, 1].
    """

    def __init__(
        self,
        task_weights: Mapping[str, float] | None = None,
        quality_priors: Mapping[str, float] | None = None,
        length_scale: float = LENGTH_SCALE_TOKENS,
    ):
        self.task_weights = dict(TASK_COMPLEXITY_DEFAULT)
        if task_weights:
            self.task_weights.update(task_weights)
        self.quality_priors = dict(DOMAIN_QUALITY_DEFAULT)
        if quality_priors:
            self.quality_priors.update(quality_priors)
        if length_scale <= 0:
            raise ValueError("length_scale must be positive")
        self.length_scale = length_scale

    def score(self, pair: InstructionPair) -> tuple[float, float]:
        tokens = len(tokenize(pair.response, "mixed").tokens)
        weight = self.task_weights.get(pair.task, 0.5)
        difficulty = weight * (1.0 - math.exp(-tokens / self.length_scale))
        quality = self.quality_priors.get(pair.domain, 0.5)
        return difficulty, quality


def score_difficulty(
    pair: InstructionPair, scorer: DifficultyScorer | None = None
) -> tuple[float, float]:
    """(difficulty, quality) for one pair; both validated into [0, 1]."""
    if scorer is None:
        scorer = DefaultScorer()
    difficulty, quality = scorer.score(pair)
    for name, value in (("difficulty", difficulty), ("quality", quality)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"scorer returned {name}={value!r}, outside [0, 1]")
    return difficulty, quality


# ----- schedule assembly -----

def _ordered_entries(
    stage: int, scored: list[tuple[InstructionPair, float, float]]
) -> list[ScheduleEntry]:
    # stable sort: quality descending, then difficulty ascending
    ranked = sorted(scored, key=lambda item: (-item[2], item[1]))
    return [
        ScheduleEntry(stage, pair.id, difficulty, quality)
        for pair, difficulty, quality in ranked
    ]


def build_stage_schedule(
    pairs: Sequence[InstructionPair],
    cfg: StageConfig | None = None,
    scorer: DifficultyScorer | None = None,
    seed: int = 0,
) -> TrainingSchedule:
    """Assemble the two-stage schedule.

    Stage 1: pairs whose task is in stage1_tasks, ordered quality-first.
    Stage 2: all stage-2-task pairs, merged with replay_fraction of the
    stage-1 pairs that are not already in stage 2 (sampled uniformly under
    the seed), same ordering rule. A pair whose task is in both stage sets
    therefore appears exactly once per stage, never twice in stage 2.
    Count deviations from the configured targets are warnings, never
    errors; a stage whose own task set matches zero pairs raises
    EmptyStage (replay does not rescue an empty stage 2).
    """
    if cfg is None:
        cfg = StageConfig()
    if scorer is None:
        scorer = DefaultScorer()

    stage1_scored = []
    stage2_scored = []
    excluded = 0
    for pair in pairs:
        in_stage1 = pair.task in cfg.stage1_tasks
        in_stage2 = pair.task in cfg.stage2_tasks
        if not in_stage1 and not in_stage2:
            excluded += 1
            continue
        difficulty, quality = score_difficulty(pair, scorer)
        if in_stage1:
            stage1_scored.append((pair, difficulty, quality))
        if in_stage2:
            stage2_scored.append((pair, difficulty, quality))

    if not stage1_scored:
        raise EmptyStage(1)
    if not stage2_scored:
        raise EmptyStage(2)

    stage1_entries = _ordered_entries(1, stage1_scored)

    # replay draws only from stage-1 pairs not already scheduled in stage 2,
    # so both-stage tasks are never duplicated within stage 2
    stage2_ids = {pair.id for pair, _, _ in stage2_scored}
    replay_candidates = [
        scored for scored in stage1_scored if scored[0].id not in stage2_ids
    ]
    # round half up so the replay count is platform-stable
    replay_count = int(len(replay_candidates) * cfg.replay_fraction + 0.5)
    rng = random.Random(seed)
    if replay_count >= len(replay_candidates):
        replay_indices = range(len(replay_candidates))
    else:
        replay_indices = sorted(rng.sample(range(len(replay_candidates)), replay_count))
    # merge pool in a fixed base order (new stage-2 pairs, then replays)
    # so the stable sort is reproducible
    stage2_pool = list(stage2_scored)
    for index in replay_indices:
        pair, difficulty, quality = replay_candidates[index]
        stage2_pool.append((pair, difficulty, quality))
    stage2_entries = _ordered_entries(2, stage2_pool)

    schedule = TrainingSchedule(
        entries=stage1_entries + stage2_entries,
        stage1_count=len(stage1_entries),
        stage2_new_count=len(stage2_scored),
        stage2_replay_count=len(list(replay_indices)),
    )
    if excluded:
        schedule.warnings.append(
            f"{excluded} pairs belong to neither stage's task set and were excluded"
        )
    if schedule.stage1_count != cfg.stage1_target_count:
        schedule.warnings.append(
            f"stage 1 has {schedule.stage1_count} pairs; configured target "
            f"is {cfg.stage1_target_count}"
        )
    if schedule.stage2_new_count != cfg.stage2_new_count:
        schedule.warnings.append(
            f"stage 2 has {schedule.stage2_new_count} new pairs; configured "
            f"target is {cfg.stage2_new_count}"
        )
    return schedule


# ----- schedule file I/O -----

def write_schedule(path, schedule: TrainingSchedule) -> None:
    """Line-delimited JSON: one {stage, pair_id, difficulty, quality}
    object per entry, in schedule order."""
    lines = [
        json.dumps(
            {
                "stage": e.stage,
                "pair_id": e.pair_id,
                "difficulty": e.difficulty,
                "quality": e.quality,
            },
            ensure_ascii=False,
        )
        for e in schedule.entries
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_schedule(path) -> list[ScheduleEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries.append(
                ScheduleEntry(
                    stage=obj["stage"],
                    pair_id=obj["pair_id"],
                    difficulty=obj["difficulty"],
                    quality=obj["quality"],
                )
            )
    return entries
