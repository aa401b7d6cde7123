"""Benchmark scoring functions and the shared tokenizer.

Implements strict span-level entity F1, relation-triple micro-F1, LCS
F-measure (ROUGE-L), clipped n-gram precision with brevity penalty
(BLEU-4), exact-match accuracy, unordered set F1, and topic-term scoring.
All functions are pure; corpus aggregation happens by summing (tp, fp, fn)
counts, never by averaging per-instance F1.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import ScibenchError
from .textutil import collapse_whitespace, is_han, normalize_slot

logger = logging.getLogger(__name__)

LANG_MODES = ("latin", "cjk", "mixed")

# Metric display names legal in report rows. "Coherence Score" is the
# published label for topic-term scoring; its backing scorer mode
# (bleu or set_f1) is configured per run.
METRIC_REGISTRY = frozenset({"F1", "Rouge", "BLEU", "Accuracy", "Coherence Score"})


class OverlappingGoldMentions(ScibenchError):
    """Gold mentions overlap in character span; the gold file is corrupt."""


class EmptyReference(ScibenchError):
    """Reference token sequence is empty."""


class EmptyReferenceList(ScibenchError):
    """No nonempty reference was supplied."""


class LengthMismatch(ScibenchError):
    """Prediction and gold label lists differ in length."""


class EmptyInput(ScibenchError):
    """An operation that needs at least one item received none."""


class EmptyGold(ScibenchError):
    """Gold term list is empty."""


# ----- domain types -----

@dataclass(frozen=True)
class EntityMention:
    """An entity occurrence: surface string, type label, character span
    (end exclusive)."""

    surface: str
    entity_type: str
    span: tuple[int, int]

    def __post_init__(self):
        start, end = self.span
        if not (0 <= start < end):
            raise ValueError(f"invalid span {self.span}: need 0 <= start < end")

    def matches_source(self, source: str) -> bool:
        """True when the surface equals the source slice at the span."""
        start, end = self.span
        return source[start:end] == self.surface


@dataclass(frozen=True)
class RelationTriple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if not (self.head and self.relation and self.tail):
            raise ValueError("relation triple slots must be nonempty")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    lang_mode: str

    def __post_init__(self):
        if self.lang_mode not in LANG_MODES:
            raise ValueError(f"invalid lang_mode {self.lang_mode!r}")
        if any(not t for t in self.tokens):
            raise ValueError("token sequence contains an empty token")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PRF:
    """Precision/recall/F1 with the underlying counts.

    degenerate is True when a denominator was zero (no predictions or no
    gold); the affected rate is defined as 0 rather than raising, because
    empty predictions are legal model behavior.
    """

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    degenerate: bool = False

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        if min(tp, fp, fn) < 0:
            raise ValueError("counts must be nonnegative")
        degenerate = (tp + fp == 0) or (tp + fn == 0)
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1, tp, fp, fn, degenerate)


def micro_merge(parts: Iterable[PRF]) -> PRF:
    """Merge per-instance results by summing counts (associative and
    commutative); the merged rates come from the summed counts."""
    tp = fp = fn = 0
    for part in parts:
        tp += part.tp
        fp += part.fp
        fn += part.fn
    return PRF.from_counts(tp, fp, fn)


# ----- tokenization -----

def _alnum_runs(text: str) -> list[str]:
    runs: list[str] = []
    current: list[str] = []
    for ch in text:
        if ch.isalnum():
            current.append(ch)
        elif current:
            runs.append("".join(current))
            current = []
    if current:
        runs.append("".join(current))
    return runs


def _cjk_tokens(text: str) -> list[str]:
    # One token per Han character; other alphanumeric runs kept whole.
    tokens: list[str] = []
    current: list[str] = []
    for ch in text:
        if is_han(ch):
            if current:
                tokens.append("".join(current))
                current = []
            tokens.append(ch)
        elif ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def tokenize(text: str, lang_mode: str) -> TokenSequence:
    """Lowercase and split text into scoring tokens.

    latin: alphanumeric runs (whitespace/punctuation/symbols separate).
    cjk: one token per Han character; non-Han alphanumeric runs kept whole.
    mixed: the cjk rule (it degenerates to the latin rule on Han-free text).
    Empty text gives an empty sequence.
    """
    if lang_mode not in LANG_MODES:
        raise ValueError(f"invalid lang_mode {lang_mode!r}")
    lowered = text.lower()
    if lang_mode == "latin":
        tokens = _alnum_runs(lowered)
    else:
        tokens = _cjk_tokens(lowered)
    return TokenSequence(tuple(tokens), lang_mode)


# ----- strict NER F1 -----

def check_gold_mentions(gold: Iterable[EntityMention]) -> None:
    """Reject gold mention sets whose spans overlap (corrupt gold data)."""
    spans = sorted(m.span for m in gold)
    for (a_start, a_end), (b_start, b_end) in zip(spans, spans[1:]):
        if b_start < a_end:
            raise OverlappingGoldMentions(
                f"gold mentions overlap: ({a_start},{a_end}) and ({b_start},{b_end})"
            )


def ner_strict_f1(
    pred: Iterable[EntityMention], gold: Iterable[EntityMention]
) -> PRF:
    """Strict matching: a prediction is a true positive only when surface,
    type and span all equal an unmatched gold mention (one-to-one).

    With exact-equality matching, maximum bipartite matching reduces to
    multiset intersection, which is what is computed here.
    """
    pred_counts = Counter(pred)
    gold_counts = Counter(gold)
    tp = sum((pred_counts & gold_counts).values())
    n_pred = sum(pred_counts.values())
    n_gold = sum(gold_counts.values())
    return PRF.from_counts(tp, n_pred - tp, n_gold - tp)


# ----- relation triple micro F1 -----

def _normalized_triple(triple: RelationTriple) -> tuple[str, str, str]:
    return (
        normalize_slot(triple.head),
        normalize_slot(triple.relation),
        normalize_slot(triple.tail),
    )


def re_micro_f1(
    pred: Iterable[RelationTriple], gold: Iterable[RelationTriple]
) -> PRF:
    """Multiset triple matching: exact slot equality after whitespace
    normalization, each gold triple matched at most once."""
    pred_counts = Counter(_normalized_triple(t) for t in pred)
    gold_counts = Counter(_normalized_triple(t) for t in gold)
    tp = sum((pred_counts & gold_counts).values())
    n_pred = sum(pred_counts.values())
    n_gold = sum(gold_counts.values())
    return PRF.from_counts(tp, n_pred - tp, n_gold - tp)


# ----- ROUGE-L -----

def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # Classic O(len(a) * len(b)) dynamic program, two rows.
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for item_a in a:
        current = [0]
        for j, item_b in enumerate(b):
            if item_a == item_b:
                current.append(previous[j] + 1)
            else:
                current.append(max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def rouge_l(candidate: TokenSequence, reference: TokenSequence) -> float:
    """LCS-based F-measure with beta = 1: P = LCS/|cand|, R = LCS/|ref|,
    score = 2PR/(P+R). 0.0 when the LCS is empty or the candidate is."""
    if len(reference) == 0:
        raise EmptyReference("reference token sequence is empty")
    if len(candidate) == 0:
        return 0.0
    lcs = _lcs_length(candidate.tokens, reference.tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


# ----- BLEU -----

def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: TokenSequence,
    references: Sequence[TokenSequence],
    max_n: int = 4,
    smoothing: str = "add_one",
) -> float:
    """Geometric mean of clipped n-gram precisions times brevity penalty.

    smoothing "none": any zero precision (or a candidate shorter than n)
    zeroes the whole score. smoothing "add_one": numerator and denominator
    get +1 for n >= 2, keeping short candidates scoreable. The brevity
    penalty uses the reference length closest to the candidate length,
    ties broken toward the shorter reference.
    """
    if smoothing not in ("none", "add_one"):
        raise ValueError(f"invalid smoothing {smoothing!r}")
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not references or all(len(ref) == 0 for ref in references):
        raise EmptyReferenceList("need at least one nonempty reference")

    cand = candidate.tokens
    c = len(cand)
    if c == 0:
        return 0.0

    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)

    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngram_counts(cand, n)
        ref_ngrams = [_ngram_counts(ref.tokens, n) for ref in references]
        clipped = 0
        for gram, count in cand_ngrams.items():
            best = max(counts[gram] for counts in ref_ngrams)
            clipped += min(count, best)
        total = max(0, c - n + 1)
        if smoothing == "add_one" and n >= 2:
            numerator, denominator = clipped + 1, total + 1
        else:
            numerator, denominator = clipped, total
        if numerator == 0 or denominator == 0:
            return 0.0
        log_sum += math.log(numerator / denominator)
    return brevity * math.exp(log_sum / max_n)


# ----- accuracy -----

def accuracy(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Exact-match fraction after whitespace normalization of each label."""
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise EmptyInput("accuracy needs at least one label")
    hits = sum(
        1 for p, g in zip(pred, gold) if normalize_slot(p) == normalize_slot(g)
    )
    return hits / len(gold)


# ----- set F1 -----

def default_normalizer(text: str) -> str:
    """Case-fold, trim, collapse internal whitespace."""
    return collapse_whitespace(text.casefold())


def set_f1(
    pred: Iterable[str],
    gold: Iterable[str],
    normalizer: Callable[[str], str] = default_normalizer,
) -> PRF:
    """Unordered exact matching after normalization. Duplicates collapse;
    used for matched-feature lists, fused-classification lists and
    (mention, type) pair lists."""
    pred_set = {normalizer(item) for item in pred}
    gold_set = {normalizer(item) for item in gold}
    tp = len(pred_set & gold_set)
    return PRF.from_counts(tp, len(pred_set) - tp, len(gold_set) - tp)


# ----- topic terms -----

TOPIC_TERMS_MIN = 3
TOPIC_TERMS_MAX = 7


@dataclass(frozen=True)
class TopicTermScore:
    score: float
    count_valid: bool  # whether 3 <= number of predicted terms <= 7


def score_topic_terms(
    pred_terms: Sequence[str],
    gold_terms: Sequence[str],
    mode: str = "bleu",
) -> TopicTermScore:
    """Score predicted topic terms against gold terms.

    bleu mode treats each normalized term as one token of a sequence
    (add-one smoothing, so short term lists stay scoreable); set_f1 mode
    scores unordered exact term overlap. count_valid reports whether the
    prediction has between 3 and 7 terms.
    """
    if mode not in ("bleu", "set_f1"):
        raise ValueError(f"invalid topic term mode {mode!r}")
    if not gold_terms:
        raise EmptyGold("gold term list is empty")
    count_valid = TOPIC_TERMS_MIN <= len(pred_terms) <= TOPIC_TERMS_MAX

    pred_norm = [default_normalizer(t) for t in pred_terms]
    pred_norm = [t for t in pred_norm if t]
    gold_norm = [default_normalizer(t) for t in gold_terms]
    gold_norm = [t for t in gold_norm if t]
    if not gold_norm:
        raise EmptyGold("gold terms are empty after normalization")

    if mode == "set_f1":
        score = set_f1(pred_norm, gold_norm).f1
    else:
        reference = TokenSequence(tuple(gold_norm), "mixed")
        if not pred_norm:
            score = 0.0
        else:
            candidate = TokenSequence(tuple(pred_norm), "mixed")
            score = bleu(candidate, [reference], max_n=4, smoothing="add_one")
    return TopicTermScore(score, count_valid)
