"""Pairwise comparison protocol: position swap, averaging, and tallies."""

import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scibench.judge import (
    JUDGE_URL_ENV,
    FixtureJudge,
    HttpJudge,
    JudgeCase,
    JudgeUnavailable,
    MalformedJudgeReply,
    PairVerdict,
    RunRecord,
    Tally,
    judge_many,
    judge_pair,
    load_prompt_template,
    read_verdicts,
    tally,
    write_verdicts,
)


class ScriptedJudge:
    """Deterministic judge computed from (question_id, order)."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def score(self, question_id, question, first_answer, second_answer, order):
        self.calls.append((question_id, order, first_answer, second_answer))
        return self.fn(question_id, order, first_answer, second_answer)


def _constant_judge(first, second):
    return ScriptedJudge(lambda qid, order, fa, sa: (first, second))


# ----- the three protocol behaviors -----


def test_symmetric_judge_ties():
    verdict = judge_pair("q1", "Q?", "ans a", "ans b", _constant_judge(5.0, 5.0))
    assert verdict.winner == "tie"
    assert verdict.score_a == verdict.score_b == 5.0


def test_position_bias_cancels_to_tie():
    biased = _constant_judge(9.0, 1.0)  # always prefers whatever sits first
    verdict = judge_pair("q1", "Q?", "ans a", "ans b", biased)
    assert verdict.score_a == 5.0
    assert verdict.score_b == 5.0
    assert verdict.winner == "tie"


def test_content_sensitive_judge_picks_winner():
    def score(qid, order, first_answer, second_answer):
        by_content = {"good answer": 8.0, "weak answer": 3.0}
        return by_content[first_answer], by_content[second_answer]

    verdict = judge_pair("q1", "Q?", "good answer", "weak answer", ScriptedJudge(score))
    assert verdict.winner == "a"
    assert verdict.score_a == 8.0
    assert verdict.score_b == 3.0


# ----- protocol mechanics -----


def test_judge_pair_issues_two_swapped_calls():
    judge = _constant_judge(5.0, 5.0)
    judge_pair("q1", "Q?", "first answer", "second answer", judge)
    assert judge.calls == [
        ("q1", "ab", "first answer", "second answer"),
        ("q1", "ba", "second answer", "first answer"),
    ]


def test_averaging_is_exact():
    def score(qid, order, fa, sa):
        return (7.0, 2.0) if order == "ab" else (4.0, 3.0)

    verdict = judge_pair("q1", "Q?", "a", "b", ScriptedJudge(score))
    # a sat first in run 1 (7.0) and second in run 2 (3.0).
    assert abs(verdict.score_a - (7.0 + 3.0) / 2) <= 1e-12
    assert abs(verdict.score_b - (2.0 + 4.0) / 2) <= 1e-12
    assert verdict.raw_runs == (RunRecord("ab", 7.0, 2.0), RunRecord("ba", 4.0, 3.0))


def test_tie_margin_turns_narrow_wins_into_ties():
    def score(qid, order, fa, sa):
        return (6.0, 5.5) if order == "ab" else (5.5, 6.0)

    strict = judge_pair("q1", "Q?", "a", "b", ScriptedJudge(score))
    assert strict.winner == "a"
    with_margin = judge_pair(
        "q1", "Q?", "a", "b", ScriptedJudge(score), tie_margin=1.0
    )
    assert with_margin.winner == "tie"


def test_tie_margin_must_be_nonnegative():
    judge = _constant_judge(1.0, 1.0)
    with pytest.raises(ValueError):
        judge_pair("q1", "Q?", "a", "b", judge, tie_margin=-0.1)
    with pytest.raises(ValueError):
        judge_pair("q1", "Q?", "a", "b", judge, tie_margin=float("nan"))


@pytest.mark.parametrize(
    "reply",
    [(1.0,), "not scores", (1.0, "high"), (float("nan"), 1.0), (1.0, float("inf")), (True, 1.0)],
)
def test_malformed_judge_replies_rejected(reply):
    judge = ScriptedJudge(lambda *args: reply)
    with pytest.raises(MalformedJudgeReply):
        judge_pair("q1", "Q?", "a", "b", judge)


# ----- verdict invariants -----


def _runs():
    return (RunRecord("ab", 6.0, 4.0), RunRecord("ba", 4.0, 6.0))


def test_pair_verdict_winner_must_match_scores():
    with pytest.raises(ValueError):
        PairVerdict("q", 6.0, 4.0, "b", 0.0, _runs())
    PairVerdict("q", 6.0, 4.0, "a", 0.0, _runs())
    PairVerdict("q", 6.0, 4.0, "tie", 2.5, _runs())


def test_pair_verdict_requires_opposite_orders():
    with pytest.raises(ValueError):
        PairVerdict(
            "q", 6.0, 4.0, "a", 0.0,
            (RunRecord("ab", 6.0, 4.0), RunRecord("ab", 6.0, 4.0)),
        )


def test_run_record_order_vocabulary():
    with pytest.raises(ValueError):
        RunRecord("first", 1.0, 2.0)


def test_tally_counts_nonnegative():
    with pytest.raises(ValueError):
        Tally(-1, 0, 0)
    assert Tally(2, 3, 4).total == 9


# ----- fixture judge -----


def test_fixture_judge_keyed_by_question_and_order():
    judge = FixtureJudge({("q1", "ab"): (9.0, 1.0), ("q1", "ba"): (2.0, 8.0)})
    verdict = judge_pair("q1", "Q?", "a", "b", judge)
    assert verdict.score_a == (9.0 + 8.0) / 2
    assert verdict.score_b == (1.0 + 2.0) / 2
    assert verdict.winner == "a"


def test_fixture_judge_missing_entry():
    judge = FixtureJudge({("q1", "ab"): (1.0, 1.0)})
    with pytest.raises(JudgeUnavailable):
        judge_pair("q1", "Q?", "a", "b", judge)


# ----- batches and tallying -----


def _verdict(qid, winner):
    scores = {"a": (6.0, 4.0), "b": (4.0, 6.0), "tie": (5.0, 5.0)}
    score_a, score_b = scores[winner]
    runs = (
        RunRecord("ab", score_a, score_b),
        RunRecord("ba", score_b, score_a),
    )
    return PairVerdict(qid, score_a, score_b, winner, 0.0, runs)


def test_tally_empty():
    assert tally([]) == Tally(0, 0, 0)


def test_tally_hand_case():
    verdicts = [_verdict("q1", "a"), _verdict("q2", "a"), _verdict("q3", "tie")]
    assert tally(verdicts) == Tally(2, 0, 1)


def test_tally_matches_counting_oracle():
    import random

    rng = random.Random(13)
    winners = [rng.choice(["a", "b", "tie"]) for _ in range(100)]
    verdicts = [_verdict(f"q{i:03d}", w) for i, w in enumerate(winners)]
    rng.shuffle(verdicts)
    result = tally(verdicts)
    counts = Counter(winners)
    assert result == Tally(counts["a"], counts["b"], counts["tie"])
    assert result.total == 100


def test_judge_many_preserves_input_order():
    def score(qid, order, fa, sa):
        quality = {"good": 9.0, "bad": 2.0}
        return quality[fa], quality[sa]

    cases = [
        JudgeCase("q2", "Q?", "good", "bad"),
        JudgeCase("q1", "Q?", "bad", "good"),
        JudgeCase("q3", "Q?", "good", "good"),
    ]
    serial = judge_many(cases, ScriptedJudge(score))
    assert [v.question_id for v in serial] == ["q2", "q1", "q3"]
    assert [v.winner for v in serial] == ["a", "b", "tie"]

    threaded = judge_many(cases, ScriptedJudge(score), jobs=4)
    assert threaded == serial
    with pytest.raises(ValueError):
        judge_many(cases, ScriptedJudge(score), jobs=0)


@settings(max_examples=40)
@given(st.lists(st.sampled_from(["a", "b", "tie"]), max_size=30))
def test_label_swap_invariance(winners):
    verdicts = [_verdict(f"q{i}", w) for i, w in enumerate(winners)]
    swapped = []
    for v in verdicts:
        flipped = {"a": "b", "b": "a", "tie": "tie"}[v.winner]
        swapped.append(_verdict(v.question_id, flipped))
    before = tally(verdicts)
    after = tally(swapped)
    assert after == Tally(before.wins_b, before.wins_a, before.ties)
    assert before.total == after.total == len(winners)


# ----- HTTP judge -----


class FakeResponse:
    def __init__(self, status_code=200, payload=None):
        self.status_code = status_code
        self._payload = payload

    def json(self):
        if self._payload is None:
            raise ValueError("not JSON")
        return self._payload


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


@pytest.fixture
def no_backoff(monkeypatch):
    monkeypatch.setattr(HttpJudge, "BACKOFF_SECONDS", 0.0)


def test_prompt_template_has_placeholders():
    template = load_prompt_template()
    rendered = template.format(question="QQ", answer_1="A1", answer_2="A2")
    for fragment in ("QQ", "A1", "A2"):
        assert fragment in rendered
    assert "{question}" not in rendered


def test_http_judge_formats_prompt_and_parses_scores(no_backoff):
    session = FakeSession([FakeResponse(payload={"score_1": 7, "score_2": 4.5})])
    judge = HttpJudge(
        url="http://judge/score",
        api_key="secret",
        template="Q: {question} | 1: {answer_1} | 2: {answer_2}",
        session=session,
    )
    scores = judge.score("q1", "why?", "first text", "second text", "ab")
    assert scores == (7.0, 4.5)
    call = session.calls[0]
    assert call["json"] == {"prompt": "Q: why? | 1: first text | 2: second text"}
    assert call["headers"]["Authorization"] == "Bearer secret"


def test_http_judge_retries_then_fails(no_backoff):
    session = FakeSession([FakeResponse(status_code=500)] * 5)
    judge = HttpJudge(url="http://judge", template="{question}{answer_1}{answer_2}", session=session)
    with pytest.raises(JudgeUnavailable):
        judge.score("q1", "q", "a", "b", "ab")
    assert len(session.calls) == HttpJudge.MAX_ATTEMPTS


def test_http_judge_malformed_reply(no_backoff):
    session = FakeSession([FakeResponse(payload={"score_1": 1.0})])
    judge = HttpJudge(url="http://judge", template="{question}{answer_1}{answer_2}", session=session)
    with pytest.raises(MalformedJudgeReply):
        judge.score("q1", "q", "a", "b", "ab")
    session = FakeSession([FakeResponse(payload={"score_1": "high", "score_2": 1.0})])
    judge = HttpJudge(url="http://judge", template="{question}{answer_1}{answer_2}", session=session)
    with pytest.raises(MalformedJudgeReply):
        judge.score("q1", "q", "a", "b", "ab")


def test_http_judge_requires_endpoint(monkeypatch):
    monkeypatch.delenv(JUDGE_URL_ENV, raising=False)
    with pytest.raises(JudgeUnavailable):
        HttpJudge()


def test_http_judge_with_fixture_protocol_end_to_end(no_backoff):
    session = FakeSession(
        [
            FakeResponse(payload={"score_1": 9.0, "score_2": 1.0}),
            FakeResponse(payload={"score_1": 9.0, "score_2": 1.0}),
        ]
    )
    judge = HttpJudge(url="http://judge", template="{question}|{answer_1}|{answer_2}", session=session)
    verdict = judge_pair("q1", "Q?", "alpha", "beta", judge)
    # Pure position bias over HTTP still cancels to a tie.
    assert verdict.winner == "tie"
    assert session.calls[0]["json"]["prompt"] == "Q?|alpha|beta"
    assert session.calls[1]["json"]["prompt"] == "Q?|beta|alpha"


# ----- persistence -----


def test_verdict_file_round_trip(tmp_path):
    verdicts = [_verdict("q1", "a"), _verdict("q2", "tie")]
    path = tmp_path / "verdicts.jsonl"
    write_verdicts(path, verdicts)
    assert read_verdicts(path) == verdicts


def test_verdict_scores_survive_serialization_exactly(tmp_path):
    runs = (RunRecord("ab", 1 / 3, 2 / 7), RunRecord("ba", 2 / 7, 1 / 3))
    score_a = (1 / 3 + 1 / 3) / 2
    score_b = (2 / 7 + 2 / 7) / 2
    verdict = PairVerdict("q", score_a, score_b, "a", 0.0, runs)
    path = tmp_path / "verdicts.jsonl"
    write_verdicts(path, [verdict])
    loaded = read_verdicts(path)[0]
    assert loaded.score_a == score_a
    assert loaded.score_b == score_b
    assert math.isfinite(loaded.score_a)
