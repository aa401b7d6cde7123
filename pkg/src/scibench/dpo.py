"""Preference-optimization numerics: loss, gradient, learning-rate
schedule, and preference-dataset validation.

The loss is -log sigmoid(u) with u = (logp_w - logp_l) / beta by default;
gap_scaling "beta" switches the factor to beta * gap for the conventional
form. An optional reference model's log-probs can be supplied, in which
case the gap is the difference of per-side gaps (reference-adjusted mode,
off by default). Model log-probabilities are inputs; no model code here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import ScibenchError
from .records import PreferencePair, ValidationReport

logger = logging.getLogger(__name__)

GAP_SCALINGS = ("inverse_beta", "beta")

# Reference composition of the curated preference dataset: 3,000
# human-annotated and 6,000 AI-generated pairs. Deviations warn, never fail.
HUMAN_PAIRS_TARGET = 3000
AI_PAIRS_TARGET = 6000


class NonPositiveBeta(ScibenchError):
    """beta must be a positive finite real."""


class NonFiniteInput(ScibenchError):
    """A log-probability input was NaN or infinite."""


class InvalidScheduleConfig(ScibenchError):
    """Learning-rate schedule arguments are inconsistent."""


class EmptyBatch(ScibenchError):
    """batch_loss needs at least one pair."""


@dataclass(frozen=True)
class PairLogProbs:
    """Log-probabilities of the preferred (w) and dispreferred (l) outputs.

    Values are expected to be <= 0 in practice (they are log-probs) but
    only finiteness is enforced, so synthetic probes stay legal.
    """

    logp_w: float
    logp_l: float

    def __post_init__(self):
        if not (math.isfinite(self.logp_w) and math.isfinite(self.logp_l)):
            raise NonFiniteInput(
                f"log-probs must be finite, got ({self.logp_w}, {self.logp_l})"
            )


@dataclass(frozen=True)
class DpoHyperparams:
    beta: float = 0.1
    lr_init: float = 5e-5
    warmup_steps: int = 500
    epochs: int = 3
    batch_size: int = 64
    gap_scaling: str = "inverse_beta"

    def __post_init__(self):
        _check_beta(self.beta)
        if self.lr_init <= 0 or not math.isfinite(self.lr_init):
            raise InvalidScheduleConfig(f"lr_init must be positive, got {self.lr_init}")
        if self.warmup_steps <= 0:
            raise InvalidScheduleConfig(
                f"warmup_steps must be positive, got {self.warmup_steps}"
            )
        if self.epochs <= 0 or self.batch_size <= 0:
            raise InvalidScheduleConfig("epochs and batch_size must be positive")
        if self.gap_scaling not in GAP_SCALINGS:
            raise InvalidScheduleConfig(
                f"gap_scaling must be one of {GAP_SCALINGS}, got {self.gap_scaling!r}"
            )


def _check_beta(beta: float) -> None:
    if not isinstance(beta, (int, float)) or isinstance(beta, bool):
        raise NonPositiveBeta(f"beta must be a real number, got {type(beta).__name__}")
    if not math.isfinite(beta) or beta <= 0:
        raise NonPositiveBeta(f"beta must be positive and finite, got {beta}")


def _scaled_gap(
    lp: PairLogProbs,
    beta: float,
    reference: PairLogProbs | None,
    gap_scaling: str,
) -> float:
    _check_beta(beta)
    if gap_scaling not in GAP_SCALINGS:
        raise ValueError(f"gap_scaling must be one of {GAP_SCALINGS}")
    gap = lp.logp_w - lp.logp_l
    if reference is not None:
        gap -= reference.logp_w - reference.logp_l
    factor = (1.0 / beta) if gap_scaling == "inverse_beta" else beta
    return factor * gap


def _softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow for large |x|.
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def dpo_loss(
    lp: PairLogProbs,
    beta: float,
    reference: PairLogProbs | None = None,
    gap_scaling: str = "inverse_beta",
) -> float:
    """-log sigmoid(scaled gap), computed as softplus(-u) for stability.

    Always positive; equals ln 2 when the scaled gap is 0. Stable for
    |u| well past 700 because sigma is never formed directly.
    """
    u = _scaled_gap(lp, beta, reference, gap_scaling)
    return _softplus(-u)


def dpo_grad(
    lp: PairLogProbs,
    beta: float,
    reference: PairLogProbs | None = None,
    gap_scaling: str = "inverse_beta",
) -> tuple[float, float]:
    """Partial derivatives of dpo_loss wrt (logp_w, logp_l).

    With u the scaled gap and s = sigma(-u): d/d logp_w = -factor * s and
    d/d logp_l = +factor * s. The two always sum to zero (the loss depends
    only on the gap) and the preferred side's gradient is negative.
    """
    u = _scaled_gap(lp, beta, reference, gap_scaling)
    factor = (1.0 / beta) if gap_scaling == "inverse_beta" else beta
    s = _sigmoid(-u)
    return (-factor * s, factor * s)


def lr_schedule(step: int, total_steps: int, hp: DpoHyperparams) -> float:
    """Linear warmup to lr_init over warmup_steps, then cosine decay to 0
    at total_steps. Defined for 0 <= step <= total_steps."""
    if total_steps <= hp.warmup_steps:
        raise InvalidScheduleConfig(
            f"total_steps ({total_steps}) must exceed warmup_steps ({hp.warmup_steps})"
        )
    if not 0 <= step <= total_steps:
        raise InvalidScheduleConfig(
            f"step {step} outside [0, {total_steps}]"
        )
    if step < hp.warmup_steps:
        return hp.lr_init * step / hp.warmup_steps
    progress = (step - hp.warmup_steps) / (total_steps - hp.warmup_steps)
    return hp.lr_init * 0.5 * (1.0 + math.cos(math.pi * progress))


def batch_loss(
    batch: Sequence[PairLogProbs],
    beta: float,
    reference: Sequence[PairLogProbs] | None = None,
    gap_scaling: str = "inverse_beta",
) -> tuple[float, list[float]]:
    """Mean loss over a batch plus the per-pair values for diagnostics."""
    if not batch:
        raise EmptyBatch("batch_loss needs at least one pair")
    if reference is not None and len(reference) != len(batch):
        raise ValueError("reference batch length must match batch length")
    per_pair = [
        dpo_loss(lp, beta, reference[i] if reference is not None else None, gap_scaling)
        for i, lp in enumerate(batch)
    ]
    return math.fsum(per_pair) / len(per_pair), per_pair


# ----- dataset validation -----

def validate_preference_dataset(
    pairs: Iterable[PreferencePair],
    human_labels: Mapping[str, object] | None = None,
    ai_labels: Mapping[str, object] | None = None,
) -> ValidationReport:
    """Check a preference dataset's composition and integrity.

    Reports the human/ai composition against the 3,000/6,000 reference
    split (warn on deviation), flags pairs whose preferred and dispreferred
    outputs are identical (fail), warns on duplicated prompt_ids, and when
    both label maps are given reports the agreement rate over their shared
    prompt ids as an informational row (no pass/fail threshold).
    """
    report = ValidationReport()
    pairs = list(pairs)
    by_source: dict[str, int] = {}
    invalid_ids: list[str] = []
    seen_ids: dict[str, int] = {}
    for pair in pairs:
        by_source[pair.source] = by_source.get(pair.source, 0) + 1
        if pair.y_w == pair.y_l:
            invalid_ids.append(pair.prompt_id)
        seen_ids[pair.prompt_id] = seen_ids.get(pair.prompt_id, 0) + 1

    total = len(pairs)
    report.computed_total = total
    report.computed_proportions = (
        {src: count / total for src, count in sorted(by_source.items())} if total else {}
    )

    human = by_source.get("human", 0)
    ai = by_source.get("ai", 0)
    if human == HUMAN_PAIRS_TARGET and ai == AI_PAIRS_TARGET:
        report.add(
            "source_composition", "pass",
            f"human={human} ai={ai} matches the {HUMAN_PAIRS_TARGET}/{AI_PAIRS_TARGET} reference",
        )
    else:
        report.add(
            "source_composition", "warn",
            f"human={human} ai={ai} differs from the "
            f"{HUMAN_PAIRS_TARGET}/{AI_PAIRS_TARGET} reference composition",
        )

    if invalid_ids:
        shown = ", ".join(invalid_ids[:5])
        more = "" if len(invalid_ids) <= 5 else f" (+{len(invalid_ids) - 5} more)"
        report.add(
            "identical_outputs", "fail",
            f"{len(invalid_ids)} pairs have y_w == y_l: {shown}{more}",
        )
    else:
        report.add("identical_outputs", "pass", "no pair has y_w == y_l")

    duplicates = sorted(pid for pid, n in seen_ids.items() if n > 1)
    if duplicates:
        report.add(
            "duplicate_prompt_ids", "warn",
            f"{len(duplicates)} duplicated prompt_ids: {', '.join(duplicates[:5])}",
        )
    else:
        report.add("duplicate_prompt_ids", "pass", "prompt_ids unique")

    if human_labels is not None and ai_labels is not None:
        overlap = sorted(set(human_labels) & set(ai_labels))
        if overlap:
            agreeing = sum(1 for key in overlap if human_labels[key] == ai_labels[key])
            rate = agreeing / len(overlap)
            report.add(
                "agreement_rate", "pass",
                f"{rate:.4f} over {len(overlap)} shared items ({agreeing} agreeing)",
            )
        else:
            report.add("agreement_rate", "warn", "label maps share no prompt ids")

    return report
