"""Shingling, MinHash signatures, LSH clustering, and duplicate removal."""

import random

import numpy as np
import pytest

from scibench.dedup import (
    IncompatibleSignatures,
    LshConfig,
    MinHashSignature,
    ShingleSet,
    TextTooShort,
    cluster_representative,
    drop_duplicates,
    estimate_jaccard,
    find_near_duplicates,
    minhash_signature,
    read_clusters,
    shingle,
    write_clusters,
)
from scibench.records import Document

WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot",
    "golf", "hotel", "india", "juliet", "kilo", "lima",
]


def _long_body(seed, n=200):
    rng = random.Random(seed)
    return " ".join(rng.choice(WORDS) for _ in range(n))


# ----- shingling -----


def test_word_shingles():
    s = shingle("The cat sat", 2, "word")
    assert s.k == 2
    assert s.mode == "word"
    assert len(s.shingles) == 2


def test_char_shingles():
    assert len(shingle("abcd", 2, "char").shingles) == 3


def test_shingles_normalize_case_and_whitespace():
    a = shingle("The   CAT\tsat", 2, "word")
    b = shingle("the cat sat", 2, "word")
    assert a.shingles == b.shingles


def test_repeated_windows_collapse():
    s = shingle("a b a b a", 2, "word")
    assert len(s.shingles) == 2  # "a b" and "b a"


def test_shingle_too_short():
    with pytest.raises(TextTooShort):
        shingle("one two", 3, "word")
    with pytest.raises(TextTooShort):
        shingle("ab", 3, "char")
    with pytest.raises(TextTooShort):
        shingle("", 1, "word")


def test_shingle_argument_validation():
    with pytest.raises(ValueError):
        shingle("text here", 0, "word")
    with pytest.raises(ValueError):
        shingle("text here", 2, "sentence")


def test_shingle_set_invariants():
    with pytest.raises(ValueError):
        ShingleSet(doc_id="d", shingles=frozenset(), k=2, mode="word")
    with pytest.raises(ValueError):
        ShingleSet(doc_id="d", shingles=frozenset({1}), k=0, mode="word")
    with pytest.raises(ValueError):
        ShingleSet(doc_id="d", shingles=frozenset({1}), k=2, mode="line")


# ----- MinHash signatures -----


def _sig(shingles, cfg, doc_id="d"):
    return minhash_signature(
        ShingleSet(doc_id=doc_id, shingles=frozenset(shingles), k=5, mode="word"), cfg
    )


def test_signature_deterministic():
    cfg = LshConfig()
    a = minhash_signature(shingle(_long_body(1), 5, "word", "a"), cfg)
    b = minhash_signature(shingle(_long_body(1), 5, "word", "b"), cfg)
    assert np.array_equal(a.values, b.values)
    assert a.num_perms == cfg.num_perms
    assert estimate_jaccard(a, b) == 1.0


def test_signature_values_are_read_only():
    sig = _sig(range(10), LshConfig())
    assert not sig.values.flags.writeable
    with pytest.raises(ValueError):
        sig.values[0] = 0


def test_estimate_jaccard_tracks_true_overlap():
    cfg = LshConfig()
    a = _sig(range(100), cfg, "a")
    b = _sig(range(50, 150), cfg, "b")  # true Jaccard = 50 / 150
    assert abs(estimate_jaccard(a, b) - 1 / 3) < 0.15


def test_estimate_jaccard_disjoint_sets_near_zero():
    cfg = LshConfig()
    a = _sig(range(100), cfg, "a")
    b = _sig(range(1000, 1100), cfg, "b")
    assert estimate_jaccard(a, b) < 0.1


def test_incompatible_signatures():
    a = _sig(range(10), LshConfig(seed=0))
    b = _sig(range(10), LshConfig(seed=1))
    with pytest.raises(IncompatibleSignatures):
        estimate_jaccard(a, b)
    c = _sig(range(10), LshConfig(num_perms=128, bands=16, rows_per_band=8))
    with pytest.raises(IncompatibleSignatures):
        estimate_jaccard(a, c)


def test_lsh_config_validation():
    with pytest.raises(ValueError):
        LshConfig(num_perms=256, bands=10, rows_per_band=10)
    with pytest.raises(ValueError):
        LshConfig(jaccard_threshold=1.5)
    with pytest.raises(ValueError):
        LshConfig(word_k=0)
    with pytest.raises(ValueError):
        LshConfig(scope="title")
    assert LshConfig().bands * LshConfig().rows_per_band == 256


# ----- clustering -----


def test_exact_duplicates_cluster():
    docs = [
        Document(id="a", body="Hello World"),
        Document(id="b", body="hello   world"),
        Document(id="c", body="hello world"),
        Document(id="d", body="something else entirely"),
    ]
    clusters = find_near_duplicates(docs)
    assert clusters == [{"a", "b", "c"}]


def test_exact_duplicates_survive_short_text():
    # Two one-word documents are below every shingle size, but the exact
    # pass still groups them.
    docs = [Document(id="a", body="tiny"), Document(id="b", body="tiny")]
    assert find_near_duplicates(docs) == [{"a", "b"}]


def test_near_duplicates_cluster():
    base = _long_body(7).split()
    variant = list(base)
    variant[100] = "zulu"
    docs = [
        Document(id="orig", body=" ".join(base)),
        Document(id="edit", body=" ".join(variant)),
        Document(id="other", body=_long_body(8)),
    ]
    clusters = find_near_duplicates(docs)
    assert clusters == [{"orig", "edit"}]


def test_moderate_overlap_not_clustered():
    # Halves swapped out: roughly half the shingles differ, well below the
    # 0.8 threshold.
    first = _long_body(1, n=100) + " " + _long_body(2, n=100)
    second = _long_body(1, n=100) + " " + _long_body(3, n=100)
    docs = [Document(id="a", body=first), Document(id="b", body=second)]
    assert find_near_duplicates(docs) == []


def test_han_text_uses_char_shingles():
    chars = [chr(0x4E00 + i) for i in range(300)]
    original = "".join(chars)
    edited = list(chars)
    edited[150] = chr(0x4E00 + 5000)
    docs = [
        Document(id="zh1", body=original),
        Document(id="zh2", body="".join(edited)),
        Document(id="zh3", body="".join(chr(0x5100 + i) for i in range(300))),
    ]
    assert find_near_duplicates(docs) == [{"zh1", "zh2"}]


def test_clusters_invariant_under_input_order():
    docs = [Document(id=f"doc{i:02d}", body=_long_body(i)) for i in range(8)]
    twin = list(docs[3].body.split())
    twin[50] = "changed"
    docs.append(Document(id="twin", body=" ".join(twin)))
    docs.append(Document(id="copy", body=docs[5].body))

    expected = find_near_duplicates(docs)
    shuffled = list(docs)
    random.Random(42).shuffle(shuffled)
    assert find_near_duplicates(shuffled) == expected
    assert find_near_duplicates(list(reversed(docs))) == expected


def test_clusters_sorted_by_smallest_member():
    docs = [
        Document(id="x1", body="same text one"),
        Document(id="x2", body="same text one"),
        Document(id="a1", body="same text two"),
        Document(id="a2", body="same text two"),
    ]
    clusters = find_near_duplicates(docs)
    assert clusters == [{"a1", "a2"}, {"x1", "x2"}]


def test_abstract_scope():
    cfg = LshConfig(scope="abstract")
    docs = [
        Document(id="a", body=_long_body(1), abstract="Shared abstract text."),
        Document(id="b", body=_long_body(2), abstract="shared  ABSTRACT text."),
    ]
    assert find_near_duplicates(docs, cfg) == [{"a", "b"}]
    assert find_near_duplicates(docs, LshConfig()) == []


def test_dedup_considers_title_in_full_text():
    docs = [
        Document(id="a", body="common body words here", title="One Title"),
        Document(id="b", body="common body words here", title="one title"),
        Document(id="c", body="common body words here", title="Different Title"),
    ]
    clusters = find_near_duplicates(docs)
    assert clusters == [{"a", "b"}]


# ----- duplicate removal -----


def test_drop_duplicates_keeps_representative_in_order():
    docs = [
        Document(id="c", body="1"),
        Document(id="a", body="2"),
        Document(id="b", body="3"),
        Document(id="z", body="4"),
    ]
    survivors = drop_duplicates(docs, [{"a", "b", "c"}])
    assert [d.id for d in survivors] == ["a", "z"]


def test_cluster_representative_is_smallest_id():
    assert cluster_representative({"m", "b", "z"}) == "b"


def test_three_identical_documents_one_survivor():
    docs = [Document(id=f"d{i}", body="identical body text") for i in range(3)]
    clusters = find_near_duplicates(docs)
    survivors = drop_duplicates(docs, clusters)
    assert [d.id for d in survivors] == ["d0"]


# ----- cluster file round trip -----


def test_cluster_file_round_trip(tmp_path):
    clusters = [{"b", "a", "c"}, {"z", "y"}]
    path = tmp_path / "clusters.txt"
    write_clusters(path, clusters, header="config deadbeef seed 0")
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == "# config deadbeef seed 0"
    assert text.splitlines()[1] == "a\tb\tc"
    assert read_clusters(path) == clusters


def test_cluster_file_without_header(tmp_path):
    path = tmp_path / "clusters.txt"
    write_clusters(path, [{"p", "q"}])
    assert read_clusters(path) == [{"p", "q"}]
    assert not path.read_text(encoding="utf-8").startswith("#")


def test_read_clusters_skips_blank_lines(tmp_path):
    path = tmp_path / "clusters.txt"
    path.write_text("# header\n\na\tb\n\n", encoding="utf-8")
    assert read_clusters(path) == [{"a", "b"}]
