"""Document filtering: keyword blacklist, dominant-script threshold, PII
redaction, metadata validation, and the external-classifier hook.

Filter order in the pipeline is fixed: rule filters, then PII scrubbing,
then metadata validation, then the classifier (cheap checks first, the
network call last). Every per-document operation here is pure given its
config and safe to run concurrently.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from .errors import ScibenchError
from .records import Document
from .textutil import script_letter_counts

logger = logging.getLogger(__name__)

CLASSIFIER_LABELS = frozenset({"scientific", "non_scientific", "toxic"})

CLASSIFIER_URL_ENV = "SCIBENCH_CLASSIFIER_URL"
CLASSIFIER_KEY_ENV = "SCIBENCH_API_KEY"

# Defaults are deliberately conservative: the email pattern is RFC-like,
# the phone pattern finds maximal runs of 7+ digits with single optional
# separators, and the id pattern is a bare 15-18 digit run. Order matters:
# id_number runs before phone so long digit runs are not consumed as phone
# numbers. The phone pattern has no upper digit cap and no trailing guard:
# capping would let a match stop in the middle of a run of adjacent numbers
# and leave digit fragments behind, so scrub_pii matches whole regions and
# segments them afterwards (see _scrub_phone_regions).
DEFAULT_PII_PATTERNS: dict[str, str] = {
    "email": r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}",
    "id_number": r"(?<!\d)\d{15,18}(?!\d)",
    "phone": r"(?<![\w.])\+?\d(?:[ \-().]?\d){6,}",
}


class EmptyDocument(ScibenchError):
    """Document body has no non-whitespace characters."""


class InvalidPattern(ScibenchError):
    """A configured PII regex does not compile."""


class ClassifierUnavailable(ScibenchError):
    """Classifier transport failed after bounded retries."""


class ClassifierMalformedReply(ScibenchError):
    """Classifier replied with an unknown label or an unparseable body."""


@dataclass(frozen=True)
class FilterConfig:
    """Rule-filter configuration.

    pii_patterns maps pattern name -> regex source; matches are replaced
    with "[" + NAME.upper() + "]". required_metadata flags which metadata
    checks are enforced by validate_metadata.
    """

    keyword_blacklist: tuple[str, ...] = ()
    language_threshold: float = 0.7
    pii_patterns: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_PII_PATTERNS)
    )
    require_abstract_nonempty: bool = False
    require_doi_valid: bool = False

    def __post_init__(self):
        if not 0.0 <= self.language_threshold <= 1.0:
            raise ValueError(
                f"language_threshold must be in [0, 1], got {self.language_threshold}"
            )
        for keyword in self.keyword_blacklist:
            if not _TOKEN_SPLIT.search(keyword or ""):
                raise ValueError(
                    f"blacklist entry {keyword!r} contains no matchable token"
                )
        compile_pii_patterns(self.pii_patterns)  # fail fast on bad regexes


@dataclass(frozen=True)
class FilterDecision:
    verdict: str  # accept | reject
    reasons: tuple[tuple[str, str], ...] = ()  # (rule_name, evidence_span)

    def __post_init__(self):
        if self.verdict not in ("accept", "reject"):
            raise ValueError(f"invalid verdict {self.verdict!r}")
        if self.verdict == "reject" and not self.reasons:
            raise ValueError("reject decisions must carry at least one reason")

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"


def compile_pii_patterns(patterns: Mapping[str, str]) -> dict[str, re.Pattern]:
    """Compile named PII regexes, raising InvalidPattern on the first bad one."""
    compiled: dict[str, re.Pattern] = {}
    for name, source in patterns.items():
        try:
            compiled[name] = re.compile(source)
        except re.error as exc:
            raise InvalidPattern(f"PII pattern {name!r} does not compile: {exc}") from exc
    return compiled


# ----- rule filters -----

_TOKEN_SPLIT = re.compile(r"[^\W_]+", re.UNICODE)


def _blacklist_hit(text: str, blacklist: tuple[str, ...]) -> tuple[str, str] | None:
    """Earliest blacklisted entry in text, on case-folded token boundaries.

    A multi-word entry matches the same tokens consecutively; no entry ever
    matches inside a longer token ("bet" does not hit "betting").
    """
    if not blacklist:
        return None
    banned = [tuple(_TOKEN_SPLIT.findall(entry.casefold())) for entry in blacklist]
    matches = list(_TOKEN_SPLIT.finditer(text.casefold()))
    words = [m.group(0) for m in matches]
    for i in range(len(words)):
        for entry in banned:
            n = len(entry)
            if 0 < n <= len(words) - i and tuple(words[i:i + n]) == entry:
                span = f"chars {matches[i].start()}-{matches[i + n - 1].end()}"
                return " ".join(entry), span
    return None


def dominant_script_proportion(body: str) -> float | None:
    """max(Latin, Han) letters over all letters in the body.

    None when the body contains no letters at all (no script evidence, so
    the language rule cannot be applied).
    """
    latin, han, other = script_letter_counts(body)
    total = latin + han + other
    if total == 0:
        return None
    return max(latin, han) / total


def detect_language_tag(body: str, threshold: float = 0.7) -> str:
    """en / zh when that script's letter share reaches the threshold,
    otherwise mixed."""
    latin, han, other = script_letter_counts(body)
    total = latin + han + other
    if total == 0:
        return "mixed"
    if latin / total >= threshold:
        return "en"
    if han / total >= threshold:
        return "zh"
    return "mixed"


def apply_rule_filters(doc: Document, config: FilterConfig) -> FilterDecision:
    """Reject when a blacklisted keyword occurs anywhere in the document's
    text (title, abstract or body; case-insensitive on token boundaries,
    multi-word entries matching consecutive tokens) or when the body's
    dominant-script proportion falls below the threshold.

    All triggered rules are listed in the decision's reasons.
    """
    if not doc.body.strip():
        raise EmptyDocument(f"document {doc.id!r} has an empty body")
    reasons: list[tuple[str, str]] = []

    hit = _blacklist_hit(doc.full_text(), config.keyword_blacklist)
    if hit is not None:
        token, span = hit
        reasons.append(("keyword_blacklist", f"token {token!r} at {span}"))

    proportion = dominant_script_proportion(doc.body)
    if proportion is not None and proportion < config.language_threshold:
        reasons.append((
            "language_proportion",
            f"dominant script proportion {proportion:.4f} < {config.language_threshold}",
        ))

    if reasons:
        return FilterDecision("reject", tuple(reasons))
    return FilterDecision("accept")


# ----- PII scrubbing -----

# Non-space separator characters that mark a space-joined digit-group run
# as one phone number rather than a sequence of independent figures.
_PHONE_MARKERS = frozenset("+-().")


def _digits(fragment: str) -> int:
    return sum(ch.isdigit() for ch in fragment)


def _scrub_phone_regions(pattern: re.Pattern, text: str, token: str) -> tuple[str, int]:
    """Replace phone numbers inside maximal digit/separator regions.

    The pattern matches a whole region (digits joined by single optional
    separators, 7+ digits total), which may span several adjacent numbers
    or mix numbers with stray short figures. Segmentation per region:

    - a space-delimited piece with 7+ connected digits is one number;
    - a run of shorter pieces is one number when it scores 7+ digits in
      total and shows grouping evidence: a "+"/"-"/"("/")"/"." separator
      or at least one group of 3+ digits. Runs of bare 1-2 digit groups
      (page spans, table cells) are left untouched;
    - a piece directly followed by a letter is an identifier, not a phone;
      the rest of its region is still segmented normally.
    """
    replaced = 0

    def handle(match: re.Match) -> str:
        nonlocal replaced
        region = match.group(0)
        after = match.string[match.end():match.end() + 1]
        pieces = region.split(" ")
        tainted_tail = bool(after) and (after.isalnum() or after == "_")
        eligible = pieces[:-1] if tainted_tail else pieces
        out: list[str] = []
        run: list[str] = []

        def flush_run() -> None:
            nonlocal replaced
            if not run:
                return
            joined = " ".join(run)
            evidence = any(ch in _PHONE_MARKERS for ch in joined) or any(
                _digits(piece) >= 3 for piece in run
            )
            if _digits(joined) >= 7 and evidence and pattern.fullmatch(joined):
                replaced += 1
                out.append(token)
            else:
                out.append(joined)
            run.clear()

        for piece in eligible:
            if _digits(piece) >= 7 and pattern.fullmatch(piece):
                flush_run()
                replaced += 1
                out.append(token)
            else:
                run.append(piece)
        flush_run()
        if tainted_tail:
            out.append(pieces[-1])
        return " ".join(out)

    return pattern.sub(handle, text), replaced


def scrub_pii(
    text: str, patterns: Mapping[str, str] | Mapping[str, re.Pattern] | None = None
) -> tuple[str, dict[str, int]]:
    """Replace every PII match with "[NAME]" (upper-cased pattern name).

    Returns the scrubbed text and per-pattern replacement counts.
    Patterns apply in mapping order; replacement tokens contain no digits
    or address characters, so scrubbing is idempotent. Non-matching text
    is untouched. A pattern named "phone" is applied region-wise (see
    _scrub_phone_regions) so adjacent numbers are counted separately and
    never leave digit fragments behind; other patterns are plain
    substitutions.
    """
    if patterns is None:
        patterns = DEFAULT_PII_PATTERNS
    compiled: dict[str, re.Pattern] = {}
    for name, pattern in patterns.items():
        if isinstance(pattern, re.Pattern):
            compiled[name] = pattern
        else:
            compiled.update(compile_pii_patterns({name: pattern}))

    counts = {name: 0 for name in compiled}
    scrubbed = text
    for name, pattern in compiled.items():
        token = f"[{name.upper()}]"
        if name == "phone":
            scrubbed, n = _scrub_phone_regions(pattern, scrubbed, token)
        else:
            scrubbed, n = pattern.subn(token, scrubbed)
        counts[name] = n
    return scrubbed, counts


# ----- metadata validation -----

_DOI_PATTERN = re.compile(r"^10\.\d{4,9}/\S+$")


def is_valid_doi(doi: str) -> bool:
    """DOI grammar: "10." + 4-9 digits + "/" + nonempty suffix without
    whitespace."""
    return bool(_DOI_PATTERN.match(doi))


def validate_metadata(doc: Document, config: FilterConfig) -> FilterDecision:
    """Reject documents missing required metadata: a nonempty abstract
    and/or a DOI satisfying the grammar, per the config flags."""
    reasons: list[tuple[str, str]] = []
    if config.require_abstract_nonempty and not doc.abstract.strip():
        reasons.append(("abstract_nonempty", "abstract is empty or whitespace"))
    if config.require_doi_valid:
        if doc.doi is None:
            reasons.append(("doi_valid", "doi is absent"))
        elif not is_valid_doi(doc.doi):
            reasons.append(("doi_valid", f"doi {doc.doi!r} fails the 10.<digits>/<suffix> grammar"))
    if reasons:
        return FilterDecision("reject", tuple(reasons))
    return FilterDecision("accept")


# ----- external classifier -----

class ExternalClassifier(Protocol):
    def classify(self, doc_id: str, text: str) -> str: ...


class FixtureClassifier:
    """Offline classifier driven by a doc_id -> label table."""

    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    def classify(self, doc_id: str, text: str) -> str:
        if doc_id not in self.table:
            raise ClassifierUnavailable(f"fixture table has no entry for {doc_id!r}")
        return self.table[doc_id]


class HttpClassifier:
    """JSON-over-HTTP classifier client: POST {id, text} -> {label}.

    Endpoint comes from SCIBENCH_CLASSIFIER_URL, bearer auth from
    SCIBENCH_API_KEY. In-flight requests are bounded by max_in_flight so
    the client is safe to share across worker threads.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_SECONDS = 0.5

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_in_flight: int = 4,
        session=None,
    ):
        self.url = url or os.environ.get(CLASSIFIER_URL_ENV, "")
        if not self.url:
            raise ClassifierUnavailable(
                f"no classifier endpoint: set {CLASSIFIER_URL_ENV} or pass url"
            )
        self.api_key = api_key if api_key is not None else os.environ.get(CLASSIFIER_KEY_ENV)
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

    def classify(self, doc_id: str, text: str) -> str:
        last_error: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                time.sleep(self.BACKOFF_SECONDS * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = self._session.post(
                        self.url,
                        json={"id": doc_id, "text": text},
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
            except Exception as exc:  # transport errors are retried
                last_error = exc
                logger.warning("classifier attempt %d failed: %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = ClassifierUnavailable(
                    f"server error {response.status_code}"
                )
                continue
            if response.status_code != 200:
                raise ClassifierUnavailable(
                    f"classifier returned HTTP {response.status_code}"
                )
            try:
                payload = response.json()
            except ValueError as exc:
                raise ClassifierMalformedReply(f"non-JSON reply: {exc}") from exc
            if not isinstance(payload, dict) or "label" not in payload:
                raise ClassifierMalformedReply(f"reply missing 'label': {payload!r}")
            return payload["label"]
        raise ClassifierUnavailable(
            f"classifier unreachable after {self.MAX_ATTEMPTS} attempts: {last_error}"
        )


def classify_document(doc: Document, classifier: ExternalClassifier) -> str:
    """Return the classifier's label for the document's full text.

    The label must be one of scientific / non_scientific / toxic; anything
    else is a malformed reply. Callers reject non_scientific and toxic.
    """
    label = classifier.classify(doc.id, doc.full_text())
    if label not in CLASSIFIER_LABELS:
        raise ClassifierMalformedReply(
            f"unknown label {label!r} for document {doc.id!r}"
        )
    return label
