"""Character classification and normalization shared by cleaning, dedup
and metrics. Kept dependency-free and fast: script checks are code-point
range tests, not per-character Unicode database lookups."""

from __future__ import annotations

# Han ranges: unified ideographs, extension A/B-F, and the compatibility
# blocks. Enough for corpus curation; rare supplementary planes included.
_HAN_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2EBEF),
    (0x2F800, 0x2FA1F),
)

_LATIN_RANGES = (
    (0x0041, 0x005A),  # A-Z
    (0x0061, 0x007A),  # a-z
    (0x00C0, 0x024F),  # Latin-1 supplement letters + extended A/B
    (0x1E00, 0x1EFF),  # extended additional
)


def is_han(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _HAN_RANGES)


def is_latin(ch: str) -> bool:
    cp = ord(ch)
    if cp < 0x00C0:
        return 0x41 <= cp <= 0x5A or 0x61 <= cp <= 0x7A
    return any(lo <= cp <= hi for lo, hi in _LATIN_RANGES)


def script_letter_counts(text: str) -> tuple[int, int, int]:
    """Count (latin, han, other) letters in text; non-letters ignored."""
    latin = han = other = 0
    for ch in text:
        if is_latin(ch):
            latin += 1
        elif is_han(ch):
            han += 1
        elif ch.isalpha():
            other += 1
    return latin, han, other


def collapse_whitespace(text: str) -> str:
    """Trim and collapse every internal whitespace run to one space."""
    return " ".join(text.split())


def normalize_slot(text: str) -> str:
    """Whitespace normalization used for exact-match slot comparison."""
    return collapse_whitespace(text)
