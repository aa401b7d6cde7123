"""Near-duplicate detection: shingling, MinHash signatures, LSH banding,
and connected-component clustering.

An exact-hash pass runs before the fuzzy pass: byte-identical texts (after
normalization) are grouped first, and only distinct texts are shingled and
signed. Exact groups and LSH-verified fuzzy edges share one union-find, so
exact duplicates are always recovered regardless of signature noise.

Signatures use the affine universal hash (a*x + b) mod (2^61 - 1) with
a, b drawn from the whole field and shingle values reduced to 32 bits.
The product a*x needs up to 93 bits, so it is computed exactly from the
32-bit halves of a and folded with 2^61 = 1 (mod p); every intermediate
stays inside uint64. Drawing a from the whole field matters: a small a
makes x -> (a*x + b) mod p piecewise monotone in x, which correlates the
signature slots and wrecks the Jaccard estimate.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import ScibenchError
from .records import Document
from .textutil import script_letter_counts

logger = logging.getLogger(__name__)

_MERSENNE_PRIME = np.uint64((1 << 61) - 1)
_CHUNK = 8192
_LOW32 = np.uint64((1 << 32) - 1)
_LOW29 = np.uint64((1 << 29) - 1)


class TextTooShort(ScibenchError):
    """Text has fewer units (words or characters) than the shingle size."""


class IncompatibleSignatures(ScibenchError):
    """Signatures differ in seed or permutation count."""


@dataclass(frozen=True)
class ShingleSet:
    doc_id: str
    shingles: frozenset  # 64-bit shingle hashes
    k: int
    mode: str  # word | char

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("shingle size k must be >= 1")
        if self.mode not in ("word", "char"):
            raise ValueError(f"invalid shingle mode {self.mode!r}")
        if not self.shingles:
            raise ValueError("shingle set must be nonempty")


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    doc_id: str
    values: np.ndarray  # uint64, length num_perms
    seed: int

    @property
    def num_perms(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class LshConfig:
    num_perms: int = 256
    bands: int = 32
    rows_per_band: int = 8
    jaccard_threshold: float = 0.8
    seed: int = 0
    word_k: int = 5
    char_k: int = 8
    scope: str = "full_text"  # full_text | abstract

    def __post_init__(self):
        if self.bands * self.rows_per_band != self.num_perms:
            raise ValueError(
                f"bands ({self.bands}) x rows_per_band ({self.rows_per_band}) "
                f"must equal num_perms ({self.num_perms})"
            )
        if not 0.0 <= self.jaccard_threshold <= 1.0:
            raise ValueError("jaccard_threshold must be in [0, 1]")
        if self.word_k < 1 or self.char_k < 1:
            raise ValueError("shingle sizes must be >= 1")
        if self.scope not in ("full_text", "abstract"):
            raise ValueError(f"invalid scope {self.scope!r}")


# ----- shingling -----

def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _hash64(unit: str) -> int:
    digest = hashlib.blake2b(unit.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def shingle(text: str, k: int, mode: str, doc_id: str = "") -> ShingleSet:
    """Build the set of hashed k-unit windows of the normalized text.

    Word mode windows are k consecutive whitespace-delimited words;
    char mode windows are k consecutive characters. Duplicates collapse.
    """
    if mode not in ("word", "char"):
        raise ValueError(f"invalid shingle mode {mode!r}")
    if k < 1:
        raise ValueError("shingle size k must be >= 1")
    normalized = _normalize(text)
    if mode == "word":
        units: Sequence[str] = normalized.split(" ") if normalized else []
        if len(units) < k:
            raise TextTooShort(f"{len(units)} words < shingle size {k}")
        windows = (" ".join(units[i:i + k]) for i in range(len(units) - k + 1))
    else:
        if len(normalized) < k:
            raise TextTooShort(f"{len(normalized)} chars < shingle size {k}")
        windows = (normalized[i:i + k] for i in range(len(normalized) - k + 1))
    return ShingleSet(
        doc_id=doc_id,
        shingles=frozenset(_hash64(w) for w in windows),
        k=k,
        mode=mode,
    )


# ----- MinHash -----

@lru_cache(maxsize=32)
def _permutation_params(seed: int, num_perms: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    prime = int(_MERSENNE_PRIME)
    a = rng.integers(1, prime, size=num_perms, dtype=np.uint64)
    b = rng.integers(0, prime, size=num_perms, dtype=np.uint64)
    return a, b


def _affine_mod_mersenne(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(a[:, None] * x[None, :] + b[:, None]) mod (2^61 - 1), exactly.

    Requires a, b < 2^61 - 1 and x < 2^32. With a = a_hi * 2^32 + a_lo:
    a_hi * x < 2^61 and a_lo * x < 2^64 both fit in uint64, and
    u * 2^32 = (u >> 29) * 2^61 + (u & (2^29 - 1)) * 2^32 folds via
    2^61 = 1 (mod p). The final sum stays below 2^63.
    """
    a_hi = (a >> np.uint64(32))[:, None]
    a_lo = (a & _LOW32)[:, None]
    u = a_hi * x[None, :]
    v = a_lo * x[None, :]
    total = (
        (u >> np.uint64(29))
        + ((u & _LOW29) << np.uint64(32))
        + (v & _MERSENNE_PRIME)
        + (v >> np.uint64(61))
        + b[:, None]
    )
    folded = (total & _MERSENNE_PRIME) + (total >> np.uint64(61))
    return np.where(folded >= _MERSENNE_PRIME, folded - _MERSENNE_PRIME, folded)


def minhash_signature(s: ShingleSet, cfg: LshConfig) -> MinHashSignature:
    """values[i] = min over shingles of the i-th permutation hash."""
    a, b = _permutation_params(cfg.seed, cfg.num_perms)
    shingles = np.fromiter(
        (v & 0xFFFFFFFF for v in s.shingles), dtype=np.uint64, count=len(s.shingles)
    )
    minima = np.full(cfg.num_perms, np.iinfo(np.uint64).max, dtype=np.uint64)
    for start in range(0, shingles.shape[0], _CHUNK):
        chunk = shingles[start:start + _CHUNK]
        hashed = _affine_mod_mersenne(a, b, chunk)
        np.minimum(minima, hashed.min(axis=1), out=minima)
    values = minima
    values.setflags(write=False)
    return MinHashSignature(doc_id=s.doc_id, values=values, seed=cfg.seed)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of equal signature slots; unbiased estimate of Jaccard."""
    if a.seed != b.seed or a.num_perms != b.num_perms:
        raise IncompatibleSignatures(
            f"seed/num_perms mismatch: ({a.seed}, {a.num_perms}) "
            f"vs ({b.seed}, {b.num_perms})"
        )
    return float(np.count_nonzero(a.values == b.values)) / a.num_perms


# ----- clustering -----

class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, item: str) -> str:
        parent = self.parent.setdefault(item, item)
        if parent != item:
            self.parent[item] = parent = self.find(parent)
        return parent

    def union(self, a: str, b: str) -> None:
        root_a, root_b = self.find(a), self.find(b)
        if root_a != root_b:
            # deterministic: smaller id becomes the root
            if root_b < root_a:
                root_a, root_b = root_b, root_a
            self.parent[root_b] = root_a


def _dedup_text(doc: Document, scope: str) -> str:
    return _normalize(doc.abstract if scope == "abstract" else doc.full_text())


def _shingle_mode(text: str, cfg: LshConfig) -> tuple[int, str]:
    """Char shingles for Han-dominant text, word shingles otherwise."""
    latin, han, _ = script_letter_counts(text)
    if han > latin:
        return cfg.char_k, "char"
    return cfg.word_k, "word"


def find_near_duplicates(
    corpus: Iterable[Document], cfg: LshConfig | None = None
) -> list[set[str]]:
    """Cluster near-duplicate documents.

    Candidate pairs share at least one LSH band; a pair is linked when the
    signature Jaccard estimate reaches the threshold; clusters are the
    connected components (size >= 2 only), each a set of doc ids. The
    retained representative of a cluster is its lexicographically smallest
    id. Deterministic given the config seed and invariant under input
    order.
    """
    if cfg is None:
        cfg = LshConfig()

    uf = _UnionFind()
    by_text: dict[str, list[str]] = {}
    for doc in corpus:
        uf.find(doc.id)  # register singleton
        by_text.setdefault(_dedup_text(doc, cfg.scope), []).append(doc.id)

    # exact pass: identical normalized texts collapse into one group
    for ids in by_text.values():
        anchor = ids[0]
        for other in ids[1:]:
            uf.union(anchor, other)

    # fuzzy pass over distinct texts (sorted for order invariance)
    distinct = sorted(
        (min(ids), text) for text, ids in by_text.items() if text
    )
    signatures: list[MinHashSignature] = []
    for anchor_id, text in distinct:
        k, mode = _shingle_mode(text, cfg)
        try:
            shingles = shingle(text, k, mode, doc_id=anchor_id)
        except TextTooShort:
            continue  # exact pass still covers these documents
        signatures.append(minhash_signature(shingles, cfg))

    buckets: dict[bytes, list[int]] = {}
    for index, sig in enumerate(signatures):
        for band in range(cfg.bands):
            lo = band * cfg.rows_per_band
            key = bytes([band]) + sig.values[lo:lo + cfg.rows_per_band].tobytes()
            buckets.setdefault(key, []).append(index)

    candidate_pairs: set[tuple[int, int]] = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for i, left in enumerate(members):
            for right in members[i + 1:]:
                candidate_pairs.add((left, right) if left < right else (right, left))

    for left, right in sorted(candidate_pairs):
        if estimate_jaccard(signatures[left], signatures[right]) >= cfg.jaccard_threshold:
            uf.union(signatures[left].doc_id, signatures[right].doc_id)

    components: dict[str, set[str]] = {}
    for doc_id in uf.parent:
        components.setdefault(uf.find(doc_id), set()).add(doc_id)
    clusters = [c for c in components.values() if len(c) >= 2]
    clusters.sort(key=min)
    return clusters


def cluster_representative(cluster: set[str]) -> str:
    return min(cluster)


def drop_duplicates(
    docs: Sequence[Document], clusters: list[set[str]]
) -> list[Document]:
    """Remove every cluster member except its representative, preserving
    input order."""
    dropped: set[str] = set()
    for cluster in clusters:
        representative = cluster_representative(cluster)
        dropped.update(doc_id for doc_id in cluster if doc_id != representative)
    return [doc for doc in docs if doc.id not in dropped]


# ----- cluster file I/O -----

def write_clusters(path, clusters: list[set[str]], header: str | None = None) -> None:
    """One line per cluster: representative id first, then the remaining
    member ids sorted, tab-separated. Optional '#' header line on top."""
    from .records import atomic_write_text

    lines = []
    if header:
        lines.append(f"# {header}")
    for cluster in clusters:
        representative = cluster_representative(cluster)
        rest = sorted(cluster - {representative})
        lines.append("\t".join([representative, *rest]))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_clusters(path) -> list[set[str]]:
    clusters = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            clusters.append(set(line.split("\t")))
    return clusters
