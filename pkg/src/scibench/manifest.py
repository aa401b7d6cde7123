"""Dataset manifests: declared composition of an instruction-tuning corpus.

A manifest is one JSON file:

    {
      "declared_total": 796981,
      "declared_proportions": {"patent": 0.187, ...},
      "rows": [
        {"domain": "patent", "task": "named_entity_recognition",
         "language": "en", "count": 1000},
        ...
      ]
    }

Row language may be "en", "zh", or "unspecified" (for rows that aggregate
both). The validator recomputes totals and per-domain proportions from the
rows and flags disagreements with the declared metadata; it never edits
the manifest. Totals are reported under two interpretations because
bilingual corpora are sometimes counted per language row and sometimes per
parallel pair: total_all_rows sums every row, total_bilingual_collapsed
counts a (domain, task) group once when it consists of exactly one en row
and one zh row with equal counts.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ScibenchError
from .records import DOMAINS, TASKS, InstructionPair, ValidationReport, atomic_write_text

logger = logging.getLogger(__name__)

ROW_LANGUAGES = frozenset({"en", "zh", "unspecified"})

DEFAULT_PROPORTION_TOLERANCE = 0.01


class InvalidManifest(ScibenchError):
    """Manifest file is structurally invalid (bad JSON, bad row, bad count)."""


@dataclass(frozen=True)
class ManifestRow:
    domain: str
    task: str
    language: str
    count: int


@dataclass
class DatasetManifest:
    """Declared dataset composition: per-(domain, task, language) counts
    plus the publisher's stated total and category proportions."""

    rows: list[ManifestRow] = field(default_factory=list)
    declared_total: int = 0
    declared_proportions: dict[str, float] = field(default_factory=dict)

    def task_table(self) -> set[tuple[str, str]]:
        """The (domain, task) combinations this manifest declares."""
        return {(row.domain, row.task) for row in self.rows}


def _check_row(obj: dict, index: int) -> ManifestRow:
    for key in ("domain", "task", "language", "count"):
        if key not in obj:
            raise InvalidManifest(f"row {index}: missing field {key!r}")
    domain, task, language, count = (
        obj["domain"], obj["task"], obj["language"], obj["count"],
    )
    if domain not in DOMAINS:
        raise InvalidManifest(f"row {index}: unknown domain {domain!r}")
    if task not in TASKS:
        raise InvalidManifest(f"row {index}: unknown task {task!r}")
    if language not in ROW_LANGUAGES:
        raise InvalidManifest(f"row {index}: unknown language {language!r}")
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        raise InvalidManifest(f"row {index}: count must be a nonnegative integer")
    return ManifestRow(domain, task, language, count)


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InvalidManifest(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidManifest(f"{path}: manifest must be a JSON object")
    unknown = set(obj) - {"rows", "declared_total", "declared_proportions"}
    if unknown:
        # A misshaped manifest must not pass vacuously as zero rows.
        raise InvalidManifest(f"{path}: unknown manifest keys: {sorted(unknown)}")
    raw_rows = obj.get("rows", [])
    if not isinstance(raw_rows, list):
        raise InvalidManifest(f"{path}: rows must be a list")
    rows = [_check_row(r, i) for i, r in enumerate(raw_rows)]
    declared_total = obj.get("declared_total", 0)
    if not isinstance(declared_total, int) or declared_total < 0:
        raise InvalidManifest(f"{path}: declared_total must be a nonnegative integer")
    proportions = obj.get("declared_proportions", {})
    if not isinstance(proportions, dict):
        raise InvalidManifest(f"{path}: declared_proportions must be an object")
    for key, value in proportions.items():
        if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
            raise InvalidManifest(
                f"{path}: declared proportion for {key!r} must be in [0, 1]"
            )
    return DatasetManifest(
        rows=rows,
        declared_total=declared_total,
        declared_proportions={k: float(v) for k, v in proportions.items()},
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    obj = {
        "declared_total": manifest.declared_total,
        "declared_proportions": manifest.declared_proportions,
        "rows": [
            {"domain": r.domain, "task": r.task, "language": r.language, "count": r.count}
            for r in manifest.rows
        ],
    }
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, indent=2) + "\n")


# ----- validation -----

def _bilingual_collapsed_total(rows: list[ManifestRow]) -> int:
    """Row sum counting a (domain, task) group once when it is exactly an
    en/zh pair with equal counts (i.e. plausibly parallel data)."""
    groups: dict[tuple[str, str], dict[str, int]] = {}
    for row in rows:
        per_lang = groups.setdefault((row.domain, row.task), {})
        per_lang[row.language] = per_lang.get(row.language, 0) + row.count
    total = 0
    for per_lang in groups.values():
        if set(per_lang) == {"en", "zh"} and per_lang["en"] == per_lang["zh"]:
            total += per_lang["en"]
        else:
            total += sum(per_lang.values())
    return total


def validate_manifest(
    manifest: DatasetManifest,
    tolerance: float = DEFAULT_PROPORTION_TOLERANCE,
) -> ValidationReport:
    """Recompute totals/proportions from rows and compare with the declared
    metadata. All findings are report rows; nothing raises.

    The total check fails on any difference; proportion checks warn when
    |computed - declared| exceeds the tolerance.
    """
    report = ValidationReport()
    rows = manifest.rows

    total_all = sum(row.count for row in rows)
    total_collapsed = _bilingual_collapsed_total(rows)
    report.computed_total = total_all

    by_domain: dict[str, int] = {}
    for row in rows:
        by_domain[row.domain] = by_domain.get(row.domain, 0) + row.count
    if total_all > 0:
        report.computed_proportions = {
            domain: count / total_all for domain, count in sorted(by_domain.items())
        }
    else:
        report.computed_proportions = {}

    collapsed_note = (
        f"rows sum to {total_all}"
        if total_collapsed == total_all
        else f"rows sum to {total_all} ({total_collapsed} counting matched bilingual rows once)"
    )
    if total_all == manifest.declared_total:
        report.add("total_consistency", "pass", f"{collapsed_note}; declared total matches")
    else:
        report.add(
            "total_consistency",
            "fail",
            f"{collapsed_note}; manifest declares {manifest.declared_total}",
        )

    declared = manifest.declared_proportions
    if declared:
        total_declared = sum(declared.values())
        if abs(total_declared - 1.0) > 1e-9:
            report.add(
                "proportions_sum",
                "fail",
                f"declared proportions sum to {total_declared:.6f}, expected 1.0",
            )
        else:
            report.add("proportions_sum", "pass", "declared proportions sum to 1.0")
        for category in sorted(set(declared) | set(by_domain)):
            if category not in by_domain:
                report.add(
                    f"proportion:{category}", "warn",
                    f"declared {declared[category]:.4f} but no rows in this category",
                )
                continue
            if category not in declared:
                report.add(
                    f"proportion:{category}", "warn",
                    "rows present but no declared proportion",
                )
                continue
            computed = report.computed_proportions.get(category, 0.0)
            delta = abs(computed - declared[category])
            status = "pass" if delta <= tolerance else "warn"
            report.add(
                f"proportion:{category}", status,
                f"computed {computed:.4f} vs declared {declared[category]:.4f}"
                f" (|delta| = {delta:.4f})",
            )

    seen: dict[tuple[str, str, str], int] = {}
    for row in rows:
        key = (row.domain, row.task, row.language)
        seen[key] = seen.get(key, 0) + 1
    duplicates = sorted(k for k, n in seen.items() if n > 1)
    if duplicates:
        report.add(
            "row_duplicates", "warn",
            f"{len(duplicates)} duplicated (domain, task, language) rows: "
            + ", ".join("/".join(k) for k in duplicates[:5]),
        )
    else:
        report.add("row_duplicates", "pass", "no duplicated rows")

    return report


def category_distribution(pairs: Iterable[InstructionPair]) -> dict[str, float]:
    """Fraction of pairs per domain. Empty input yields an empty map;
    otherwise the fractions sum to 1.0 within 1e-9."""
    counts: dict[str, int] = {}
    total = 0
    for pair in pairs:
        counts[pair.domain] = counts.get(pair.domain, 0) + 1
        total += 1
    if total == 0:
        return {}
    return {domain: count / total for domain, count in sorted(counts.items())}
