import logging

import numpy as np
import pytest

from dsmt.data import (
    AugmentedGraph,
    build_neighbor_index,
    categorize_relations,
    load_dataset,
    uncertainty_counts,
)
from dsmt.errors import ParseError, ValidationError

from .conftest import random_graph, write_triples


@pytest.fixture
def three_line(tmp_path):
    train = write_triples(tmp_path / "train.txt", [("a", "r1", "b"), ("b", "r1", "c"), ("a", "r2", "c")])
    valid = write_triples(tmp_path / "valid.txt", [])
    test = write_triples(tmp_path / "test.txt", [])
    return train, valid, test


def test_three_line_fixture_counts(three_line):
    vocab, g = load_dataset(*three_line)
    assert (vocab.n_entities, vocab.n_relations) == (3, 2)
    assert len(g.augmented) == 2 * 3 + 3 == 9
    assert g.n_aug_relations == 5


def test_vocab_covers_all_splits(tmp_path):
    train = write_triples(tmp_path / "train.txt", [("a", "r", "b")])
    valid = write_triples(tmp_path / "valid.txt", [("c", "s", "a")])
    test = write_triples(tmp_path / "test.txt", [("d", "r", "a")])
    vocab, g = load_dataset(train, valid, test)
    assert set(vocab.entities) == {"a", "b", "c", "d"}
    assert set(vocab.relations) == {"r", "s"}
    idx = build_neighbor_index(g)
    assert idx.forward_of(vocab.entity_id("d")) == []


def test_vocab_round_trip(three_line):
    vocab, _ = load_dataset(*three_line)
    for name in vocab.entities:
        assert vocab.entities[vocab.entity_id(name)] == name
    for name in vocab.relations:
        assert vocab.relations[vocab.relation_id(name)] == name
    assert vocab.relation_id("r1^-1") == vocab.relation_id("r1") + vocab.n_relations


def test_empty_train_is_validation_error(tmp_path):
    empty = write_triples(tmp_path / "train.txt", [])
    with pytest.raises(ValidationError):
        load_dataset(empty, empty, empty)


def test_malformed_line_reports_line_number(tmp_path):
    bad = tmp_path / "train.txt"
    bad.write_text("a\tr\tb\na\tr\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_dataset(bad, bad, bad)
    assert info.value.lineno == 2


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.txt", tmp_path / "nope.txt", tmp_path / "nope.txt")


def test_duplicates_dropped_with_warning(tmp_path, caplog):
    train = write_triples(tmp_path / "train.txt", [("a", "r", "b"), ("a", "r", "b")])
    empty = write_triples(tmp_path / "e.txt", [])
    with caplog.at_level(logging.WARNING):
        _, g = load_dataset(train, empty, empty)
    assert len(g.train) == 1
    assert "duplicate" in caplog.text


def test_augmentation_invariants():
    g = random_graph(20, 4, 80, seed=3)
    R = g.n_relations
    aug = {tuple(t) for t in g.augmented.tolist()}
    assert len(g.augmented) == 2 * len(g.train) + g.n_entities
    for h, r, t in g.train.tolist():
        assert sum(1 for x in g.augmented.tolist() if x == [t, r + R, h]) == 1
    loops = [x for x in aug if x[1] == 2 * R]
    assert sorted(x[0] for x in loops) == list(range(g.n_entities))
    # the inverse map applied twice recovers the train set
    inv = {(t, r + R, h) for h, r, t in g.train.tolist()}
    back = {(t, r - R, h) for h, r, t in inv}
    assert back == {tuple(x) for x in g.train.tolist()}


def test_single_triple_neighbors():
    g = AugmentedGraph.from_triples(2, 1, [[0, 0, 1]])
    idx = build_neighbor_index(g)
    assert idx.forward_of(0) == [(0, 1)]
    assert idx.backward_of(1) == [(1, 0)]
    assert idx.forward_of(1) == [] and idx.backward_of(0) == []


def test_star_neighbors():
    g = AugmentedGraph.from_triples(4, 1, [[0, 0, 1], [0, 0, 2], [0, 0, 3]])
    idx = build_neighbor_index(g)
    assert len(idx.forward_of(0)) == 3
    for e in (1, 2, 3):
        assert len(idx.backward_of(e)) == 1


def test_neighbor_symmetry_exhaustive():
    g = random_graph(30, 5, 100, seed=9)
    idx = build_neighbor_index(g)
    R = g.n_relations
    assert sum(len(idx.forward_of(h)) for h in range(g.n_entities)) == len(g.train)
    assert sum(len(idx.backward_of(h)) for h in range(g.n_entities)) == len(g.train)
    for h in range(g.n_entities):
        for r, t in idx.forward_of(h):
            assert (r + R, h) in idx.backward_of(t)
        for r, t in idx.backward_of(h):
            assert (r - R, h) in idx.forward_of(t)
    for h in range(g.n_entities):
        assert idx.forward_of(h) == sorted(idx.forward_of(h))


def test_uncertainty_unique_answer():
    g = AugmentedGraph.from_triples(2, 1, [[0, 0, 1]])
    assert uncertainty_counts(g).count(0, 0) == 1


def test_uncertainty_three_tails():
    g = AugmentedGraph.from_triples(4, 1, [[0, 0, 1], [0, 0, 2], [0, 0, 3]])
    u = uncertainty_counts(g)
    assert u.count(0, 0) == 3
    assert u.count(1, 1) == 1


def test_uncertainty_matches_brute_force():
    g = random_graph(40, 6, 400, seed=4)
    u = uncertainty_counts(g)
    R = g.n_relations
    rows = g.train.tolist()
    rng = np.random.default_rng(0)
    keys = list(u)
    for i in rng.choice(len(keys), size=min(1000, len(keys)), replace=False):
        h, r = keys[i]
        if r < R:
            expect = len({t for hh, rr, t in rows if hh == h and rr == r})
        else:
            expect = len({hh for hh, rr, t in rows if t == h and rr == r - R})
        assert u[(h, r)] == expect
        assert 1 <= u[(h, r)] <= g.n_entities
    assert all(r != 2 * R for _, r in keys)


def test_categories():
    g = AugmentedGraph.from_triples(
        8,
        3,
        [
            [0, 0, 1],
            [0, 1, 4], [0, 1, 5], [2, 1, 4], [2, 1, 5],
            [0, 2, 4], [2, 2, 4], [3, 2, 4],
        ],
    )
    cats = categorize_relations(g)
    assert cats[0].category == "1-1" and cats[0].tph == cats[0].hpt == 1
    assert (cats[1].tph, cats[1].hpt, cats[1].category) == (2, 2, "N-N")
    assert (cats[2].tph, cats[2].hpt, cats[2].category) == (1, 3, "N-1")


def test_category_requires_train_triples():
    g = AugmentedGraph.from_triples(3, 2, [[0, 0, 1]])
    with pytest.raises(ValidationError):
        categorize_relations(g)


def test_vocab_digest_is_order_independent():
    from dsmt.data import Vocabulary

    a = Vocabulary.build(["x", "y"], ["r"])
    b = Vocabulary.build(["y", "x"], ["r"])
    c = Vocabulary.build(["x", "z"], ["r"])
    assert a.digest() == b.digest() != c.digest()
