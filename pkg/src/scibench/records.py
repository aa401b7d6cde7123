"""Record types and line-delimited JSON I/O.

Every corpus artifact in this toolkit is UTF-8 line-delimited JSON: one
object per line, LF terminated. The field names used here are the
normative on-disk names. Unknown fields are ignored on read so corpora can
carry extra annotations without breaking older readers; optional fields
that are absent take documented defaults.

Schemas:

``document``
    id, body (required); title, abstract (default ""); language_tag
    (en|zh|mixed, default "mixed"); doi (optional, default absent);
    source (academic_paper|patent|synthetic|general, default "general").

``instruction_pair``
    id, instruction (required, nonempty), response (required, may be
    empty), domain (patent|science_paper|general), task (see TASKS),
    language (en|zh).

``preference_pair``
    prompt_id, x, y_w, y_l (required), source (human|ai). A pair with
    y_w == y_l parses fine; dataset validation flags it downstream.

``prediction``
    id, task (required); all remaining fields form a task-specific
    payload dict (e.g. "entities", "triples", "text", "items", "terms",
    "label").
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

from .errors import ScibenchError

logger = logging.getLogger(__name__)

# ----- vocabularies -----

LANGUAGE_TAGS = frozenset({"en", "zh", "mixed"})
PAIR_LANGUAGES = frozenset({"en", "zh"})
DOMAINS = frozenset({"patent", "science_paper", "general"})
SOURCES = frozenset({"academic_paper", "patent", "synthetic", "general"})
PREFERENCE_SOURCES = frozenset({"human", "ai"})

TASKS = frozenset({
    "named_entity_recognition",
    "abstract_to_title",
    "machine_translation",
    "relation_extraction",
    "knowledge_linking",
    "knowledge_fusion",
    "relationship_complete",
    "topic_modeling",
    "semantic_matching",
    "summary_to_title",
    "summary_to_topic",
    "title_to_keywords",
    "topic_and_summary_to_title",
    "abstract_extract",
    "relation_predict",
    "knowledge_extract",
    "general_dialogue",
    "other",
})

SCHEMAS = ("document", "instruction_pair", "preference_pair", "prediction")


class MalformedRecord(ScibenchError):
    """Line is not a JSON object or violates its record schema."""


class MissingRequiredField(MalformedRecord):
    def __init__(self, schema: str, field_name: str):
        super().__init__(f"{schema} record missing required field {field_name!r}")
        self.schema = schema
        self.field_name = field_name


class InvalidEnumValue(MalformedRecord):
    def __init__(self, schema: str, field_name: str, value: object, allowed: Iterable[str]):
        super().__init__(
            f"{schema} record has invalid {field_name}={value!r}; "
            f"allowed: {sorted(allowed)}"
        )
        self.schema = schema
        self.field_name = field_name
        self.value = value


# ----- record types -----

@dataclass(frozen=True)
class Document:
    """A corpus document; the unit flowing through cleaning and dedup."""

    id: str
    body: str
    title: str = ""
    abstract: str = ""
    language_tag: str = "mixed"
    doi: str | None = None
    source: str = "general"

    def full_text(self) -> str:
        """Title, abstract and body joined; the view filters and dedup see."""
        parts = [p for p in (self.title, self.abstract, self.body) if p]
        return "\n".join(parts)


@dataclass(frozen=True)
class InstructionPair:
    """One instruction-response training instance."""

    id: str
    instruction: str
    response: str
    domain: str
    task: str
    language: str


@dataclass(frozen=True)
class PreferencePair:
    """A binary preference comparison: y_w preferred over y_l for prompt x."""

    prompt_id: str
    x: str
    y_w: str
    y_l: str
    source: str


@dataclass(frozen=True)
class Prediction:
    """A model output (or gold target) for one benchmark instance.

    The payload shape depends on the task; see the module docstring.
    """

    id: str
    task: str
    payload: dict = field(default_factory=dict)


Record = Union[Document, InstructionPair, PreferencePair, Prediction]


# ----- validation reports (shared by manifest and dataset validators) -----

@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # pass | warn | fail
    detail: str


@dataclass
class ValidationReport:
    """Outcome of a validation run: check rows plus computed aggregates."""

    checks: list[CheckResult] = field(default_factory=list)
    computed_total: int | None = None
    computed_proportions: dict[str, float] | None = None

    def add(self, name: str, status: str, detail: str) -> None:
        if status not in ("pass", "warn", "fail"):
            raise ValueError(f"invalid check status {status!r}")
        self.checks.append(CheckResult(name, status, detail))

    def has_failures(self) -> bool:
        return any(c.status == "fail" for c in self.checks)

    def has_warnings(self) -> bool:
        return any(c.status == "warn" for c in self.checks)

    def summary_lines(self) -> list[str]:
        return [f"[{c.status.upper():4s}] {c.name}: {c.detail}" for c in self.checks]


# ----- parsing -----

def _require(obj: dict, schema: str, name: str) -> Any:
    if name not in obj:
        raise MissingRequiredField(schema, name)
    return obj[name]


def _require_str(obj: dict, schema: str, name: str, nonempty: bool = False) -> str:
    value = _require(obj, schema, name)
    if not isinstance(value, str):
        raise MalformedRecord(
            f"{schema}.{name} must be a string, got {type(value).__name__}"
        )
    if nonempty and not value:
        raise MalformedRecord(f"{schema}.{name} must be nonempty")
    return value


def _optional_str(obj: dict, schema: str, name: str, default: str = "") -> str:
    if name not in obj:
        return default
    value = obj[name]
    if not isinstance(value, str):
        raise MalformedRecord(
            f"{schema}.{name} must be a string, got {type(value).__name__}"
        )
    return value


def _enum(schema: str, name: str, value: str, allowed: frozenset) -> str:
    if value not in allowed:
        raise InvalidEnumValue(schema, name, value, allowed)
    return value


def parse_record(line: str, schema: str) -> Record:
    """Parse one serialized line into a record of the given schema.

    Raises MalformedRecord (or a subclass) on any violation. Unknown
    fields are ignored except for the prediction schema, where they form
    the payload.
    """
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    if not line.strip():
        raise MalformedRecord("blank line")
    try:
        obj = json.loads(line)
    except ValueError as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedRecord(f"record must be a JSON object, got {type(obj).__name__}")

    if schema == "document":
        doi = obj.get("doi")
        if doi is not None and not isinstance(doi, str):
            raise MalformedRecord("document.doi must be a string when present")
        return Document(
            id=_require_str(obj, schema, "id", nonempty=True),
            body=_require_str(obj, schema, "body"),
            title=_optional_str(obj, schema, "title"),
            abstract=_optional_str(obj, schema, "abstract"),
            language_tag=_enum(
                schema, "language_tag",
                _optional_str(obj, schema, "language_tag", "mixed"), LANGUAGE_TAGS,
            ),
            doi=doi,
            source=_enum(
                schema, "source",
                _optional_str(obj, schema, "source", "general"), SOURCES,
            ),
        )
    if schema == "instruction_pair":
        return InstructionPair(
            id=_require_str(obj, schema, "id", nonempty=True),
            instruction=_require_str(obj, schema, "instruction", nonempty=True),
            response=_require_str(obj, schema, "response"),
            domain=_enum(schema, "domain", _require_str(obj, schema, "domain"), DOMAINS),
            task=_enum(schema, "task", _require_str(obj, schema, "task"), TASKS),
            language=_enum(
                schema, "language", _require_str(obj, schema, "language"), PAIR_LANGUAGES
            ),
        )
    if schema == "preference_pair":
        return PreferencePair(
            prompt_id=_require_str(obj, schema, "prompt_id", nonempty=True),
            x=_require_str(obj, schema, "x"),
            y_w=_require_str(obj, schema, "y_w"),
            y_l=_require_str(obj, schema, "y_l"),
            source=_enum(
                schema, "source", _require_str(obj, schema, "source"), PREFERENCE_SOURCES
            ),
        )
    # prediction
    rec_id = _require_str(obj, schema, "id", nonempty=True)
    task = _require_str(obj, schema, "task", nonempty=True)
    payload = {k: v for k, v in obj.items() if k not in ("id", "task")}
    return Prediction(id=rec_id, task=task, payload=payload)


def serialize_record(record: Record) -> str:
    """Serialize a record to its single-line JSON form (no trailing newline).

    Field order is fixed per schema so identical records serialize to
    identical bytes. parse_record(serialize_record(r)) == r for all valid
    records.
    """
    if isinstance(record, Document):
        obj: dict[str, Any] = {
            "id": record.id,
            "title": record.title,
            "abstract": record.abstract,
            "body": record.body,
            "language_tag": record.language_tag,
            "source": record.source,
        }
        if record.doi is not None:
            obj["doi"] = record.doi
    elif isinstance(record, InstructionPair):
        obj = {
            "id": record.id,
            "instruction": record.instruction,
            "response": record.response,
            "domain": record.domain,
            "task": record.task,
            "language": record.language,
        }
    elif isinstance(record, PreferencePair):
        obj = {
            "prompt_id": record.prompt_id,
            "x": record.x,
            "y_w": record.y_w,
            "y_l": record.y_l,
            "source": record.source,
        }
    elif isinstance(record, Prediction):
        for key in ("id", "task"):
            if key in record.payload:
                raise MalformedRecord(f"prediction payload must not contain {key!r}")
        obj = {"id": record.id, "task": record.task, **record.payload}
    else:
        raise TypeError(f"not a record type: {type(record).__name__}")
    return json.dumps(obj, ensure_ascii=False)


# ----- file I/O -----

def read_records(path: str | Path, schema: str) -> Iterator[Record]:
    """Stream records from a line-delimited file.

    Errors are re-raised with file and line context attached.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            try:
                yield parse_record(line, schema)
            except MalformedRecord as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text to path atomically (temp file + rename, same directory)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_records(path: str | Path, records: Iterable[Record]) -> int:
    """Write records to a line-delimited file atomically. Returns the count."""
    lines = []
    for record in records:
        lines.append(serialize_record(record))
    body = "".join(line + "\n" for line in lines)
    atomic_write_text(path, body)
    logger.debug("wrote %d records to %s", len(lines), path)
    return len(lines)
