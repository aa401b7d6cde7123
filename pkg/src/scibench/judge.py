"""Pairwise comparison protocol with position swap.

Each question is judged twice, with the two answers' slots swapped between
runs, and each answer's final score is the mean of its two slot scores.
This cancels any scoring component that depends only on slot position: a
judge that always favors the first slot produces identical means for both
answers, hence a tie. Winner selection uses a configurable tie margin
(default 0, strict inequality decides).
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Protocol, Sequence

from .errors import ScibenchError
from .records import atomic_write_text

logger = logging.getLogger(__name__)

JUDGE_URL_ENV = "SCIBENCH_JUDGE_URL"
JUDGE_KEY_ENV = "SCIBENCH_JUDGE_API_KEY"
PROMPT_ASSET = "pairwise_judge_v1.txt"

ORDERS = ("ab", "ba")
WINNERS = ("a", "b", "tie")


class JudgeUnavailable(ScibenchError):
    """The judge endpoint cannot be reached or keeps failing."""


class MalformedJudgeReply(ScibenchError):
    """The judge replied without two finite numeric scores."""


# ----- domain types -----

@dataclass(frozen=True)
class RunRecord:
    """One positional run: which logical answer sat in the first slot
    ('ab' = answer_a first), and the two slot scores in slot order."""

    order: str
    score_first: float
    score_second: float

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")


@dataclass(frozen=True)
class PairVerdict:
    question_id: str
    score_a: float
    score_b: float
    winner: str
    tie_margin: float
    raw_runs: tuple[RunRecord, RunRecord]

    def __post_init__(self):
        if self.winner not in WINNERS:
            raise ValueError(f"winner must be one of {WINNERS}, got {self.winner!r}")
        if len(self.raw_runs) != 2 or {run.order for run in self.raw_runs} != set(ORDERS):
            raise ValueError("raw_runs must hold exactly one 'ab' and one 'ba' run")
        expected = _decide_winner(self.score_a, self.score_b, self.tie_margin)
        if self.winner != expected:
            raise ValueError(
                f"winner {self.winner!r} inconsistent with scores "
                f"({self.score_a}, {self.score_b}) at margin {self.tie_margin}"
            )


@dataclass(frozen=True)
class Tally:
    wins_a: int
    wins_b: int
    ties: int

    def __post_init__(self):
        for name in ("wins_a", "wins_b", "ties"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.wins_a + self.wins_b + self.ties


@dataclass(frozen=True)
class JudgeCase:
    question_id: str
    question: str
    answer_a: str
    answer_b: str


# ----- judges -----

class ExternalJudge(Protocol):
    def score(
        self,
        question_id: str,
        question: str,
        first_answer: str,
        second_answer: str,
        order: str,
    ) -> tuple[float, float]:
        """Score the two answers in slot order (first, second).

        order says which logical answer occupies the first slot ('ab' =
        answer_a first). Real judges must ignore it — the slot contents
        already encode position — it exists so offline fixtures can key
        replies per (question_id, order) run.
        """
        ...


class FixtureJudge:
    """Offline judge driven by a (question_id, order) -> (score_1, score_2)
    table, in slot order."""

    def __init__(self, table: Mapping[tuple[str, str], tuple[float, float]]):
        self.table = dict(table)

    def score(self, question_id, question, first_answer, second_answer, order):
        key = (question_id, order)
        if key not in self.table:
            raise JudgeUnavailable(f"fixture table has no entry for {key!r}")
        return self.table[key]


class HttpJudge:
    """JSON-over-HTTP judge client: POST {prompt} -> {score_1, score_2}.

    The prompt comes from a versioned template with {question}, {answer_1},
    {answer_2} placeholders. Endpoint from SCIBENCH_JUDGE_URL, bearer auth
    from SCIBENCH_JUDGE_API_KEY. In-flight requests are bounded by
    max_in_flight so the client is safe to share across worker threads.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_SECONDS = 0.5

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        template: str | None = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        session=None,
    ):
        self.url = url or os.environ.get(JUDGE_URL_ENV, "")
        if not self.url:
            raise JudgeUnavailable(
                f"no judge endpoint: set {JUDGE_URL_ENV} or pass url"
            )
        self.api_key = api_key if api_key is not None else os.environ.get(JUDGE_KEY_ENV)
        self.template = template if template is not None else load_prompt_template()
        self.timeout = timeout
        self._gate = threading.BoundedSemaphore(max_in_flight)
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def score(self, question_id, question, first_answer, second_answer, order):
        prompt = self.template.format(
            question=question, answer_1=first_answer, answer_2=second_answer
        )
        last_error: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                time.sleep(self.BACKOFF_SECONDS * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._session.post(
                        self.url,
                        json={"prompt": prompt},
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except Exception as exc:  # transport errors are retried
                last_error = exc
                logger.warning("judge attempt %d failed: %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = JudgeUnavailable(f"server error {response.status_code}")
                continue
            if response.status_code != 200:
                raise JudgeUnavailable(f"judge returned HTTP {response.status_code}")
            try:
                payload = response.json()
            except ValueError as exc:
                raise MalformedJudgeReply(f"non-JSON reply: {exc}") from exc
            return _parse_scores(payload)
        raise JudgeUnavailable(
            f"judge unreachable after {self.MAX_ATTEMPTS} attempts: {last_error}"
        )


def load_prompt_template() -> str:
    return (
        resources.files("scibench")
        .joinpath("prompts", PROMPT_ASSET)
        .read_text(encoding="utf-8")
    )


def _parse_scores(payload) -> tuple[float, float]:
    if not isinstance(payload, dict):
        raise MalformedJudgeReply(f"reply is not an object: {payload!r}")
    scores = []
    for key in ("score_1", "score_2"):
        if key not in payload:
            raise MalformedJudgeReply(f"reply missing {key!r}: {payload!r}")
        value = payload[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedJudgeReply(f"{key} is not numeric: {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise MalformedJudgeReply(f"{key} is not finite: {value!r}")
        scores.append(value)
    return scores[0], scores[1]


# ----- protocol -----

def _decide_winner(score_a: float, score_b: float, tie_margin: float) -> str:
    if score_a > score_b + tie_margin:
        return "a"
    if score_b > score_a + tie_margin:
        return "b"
    return "tie"


def _checked_scores(raw, question_id: str) -> tuple[float, float]:
    try:
        first, second = raw
    except (TypeError, ValueError) as exc:
        raise MalformedJudgeReply(
            f"judge for {question_id!r} returned {raw!r}, expected two scores"
        ) from exc
    for value in (first, second):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedJudgeReply(
                f"judge for {question_id!r} returned non-numeric score {value!r}"
            )
        if not math.isfinite(float(value)):
            raise MalformedJudgeReply(
                f"judge for {question_id!r} returned non-finite score {value!r}"
            )
    return float(first), float(second)


def judge_pair(
    question_id: str,
    question: str,
    answer_a: str,
    answer_b: str,
    judge: ExternalJudge,
    tie_margin: float = 0.0,
) -> PairVerdict:
    """Judge one question twice with swapped answer positions.

    Run 1 puts answer_a in the first slot, run 2 puts answer_b first. Each
    answer's score is the mean of its two slot scores, so position-only
    preferences cancel exactly.
    """
    if not tie_margin >= 0.0:
        raise ValueError(f"tie_margin must be >= 0, got {tie_margin!r}")
    run1 = _checked_scores(
        judge.score(question_id, question, answer_a, answer_b, "ab"), question_id
    )
    run2 = _checked_scores(
        judge.score(question_id, question, answer_b, answer_a, "ba"), question_id
    )
    score_a = (run1[0] + run2[1]) / 2.0
    score_b = (run1[1] + run2[0]) / 2.0
    return PairVerdict(
        question_id=question_id,
        score_a=score_a,
        score_b=score_b,
        winner=_decide_winner(score_a, score_b, tie_margin),
        tie_margin=tie_margin,
        raw_runs=(RunRecord("ab", *run1), RunRecord("ba", *run2)),
    )


def judge_many(
    cases: Sequence[JudgeCase],
    judge: ExternalJudge,
    tie_margin: float = 0.0,
    jobs: int = 1,
) -> list[PairVerdict]:
    """Judge every case, concurrently across questions when jobs > 1.

    Results come back in input order regardless of completion order, so a
    deterministic judge yields a deterministic verdict list.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs!r}")
    if jobs == 1 or len(cases) <= 1:
        return [
            judge_pair(c.question_id, c.question, c.answer_a, c.answer_b, judge, tie_margin)
            for c in cases
        ]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(
                judge_pair, c.question_id, c.question, c.answer_a, c.answer_b, judge, tie_margin
            )
            for c in cases
        ]
        return [future.result() for future in futures]


def tally(verdicts: Sequence[PairVerdict]) -> Tally:
    """Exact win/loss/tie counts; empty input gives all zeros.

    The fold visits verdicts in question_id order; counts are
    order-independent but the traversal is pinned for reproducible logs.
    """
    wins_a = wins_b = ties = 0
    for verdict in sorted(verdicts, key=lambda v: v.question_id):
        if verdict.winner == "a":
            wins_a += 1
        elif verdict.winner == "b":
            wins_b += 1
        else:
            ties += 1
    return Tally(wins_a, wins_b, ties)


# ----- verdict persistence -----

def write_verdicts(path, verdicts: Sequence[PairVerdict]) -> None:
    """Line-delimited JSON, one verdict per line, for audit."""
    lines = []
    for v in verdicts:
        lines.append(
            json.dumps(
                {
                    "question_id": v.question_id,
                    "score_a": v.score_a,
                    "score_b": v.score_b,
                    "winner": v.winner,
                    "tie_margin": v.tie_margin,
                    "raw_runs": [
                        [run.order, run.score_first, run.score_second]
                        for run in v.raw_runs
                    ],
                },
                ensure_ascii=False,
            )
        )
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_verdicts(path) -> list[PairVerdict]:
    verdicts = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            verdicts.append(
                PairVerdict(
                    question_id=obj["question_id"],
                    score_a=obj["score_a"],
                    score_b=obj["score_b"],
                    winner=obj["winner"],
                    tie_margin=obj["tie_margin"],
                    raw_runs=tuple(
                        RunRecord(order, first, second)
                        for order, first, second in obj["raw_runs"]
                    ),
                )
            )
    return verdicts
