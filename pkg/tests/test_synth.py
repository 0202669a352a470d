"""Synthetic corpus generator: determinism, balance, and validity."""

import numpy as np

from vecfold.corpus import load_corpus
from vecfold.synth import (
    CATEGORIES,
    make_synthetic_corpus,
    read_labels_sidecar,
    write_synthetic_corpus,
)


def test_deterministic_per_seed():
    a, la = make_synthetic_corpus(100, seed=0)
    b, lb = make_synthetic_corpus(100, seed=0)
    assert a == b and la == lb
    c, _ = make_synthetic_corpus(100, seed=1)
    assert a != c


def test_categories_balanced_and_labeled():
    records, labels = make_synthetic_corpus(80)
    counts = np.bincount(labels, minlength=4)
    assert counts.tolist() == [20, 20, 20, 20]
    # image references always come from the labeled category's pool
    for rec, lab in zip(records, labels):
        for ref in rec["images"]:
            assert ref.startswith(CATEGORIES[lab] + "/")


def test_image_counts_cycle_through_all_template_cases():
    records, _ = make_synthetic_corpus(8)
    assert [len(r["images"]) for r in records] == [0, 1, 2, 3, 0, 1, 2, 3]


def test_written_corpus_is_strictly_valid(tmp_path):
    corpus_path, labels_path = write_synthetic_corpus(tmp_path / "c.jsonl", 60, seed=2)
    handle = load_corpus(corpus_path, strict=True)
    assert len(handle) == 60
    labels = read_labels_sidecar(labels_path)
    assert set(labels) == {p.id for p in handle}
    assert set(labels.values()) == {0, 1, 2, 3}


def test_vocabularies_disjoint_across_categories():
    from vecfold.synth import _VOCAB

    seen = {}
    for cat, words in _VOCAB.items():
        for w in words:
            assert w not in seen, f"{w!r} in both {seen.get(w)} and {cat}"
            seen[w] = cat
