"""Triple files, vocabularies, direction augmentation and per-query statistics.

Relation ids: original relations occupy ``[0, R)``, the inverse of ``r`` is
``r + R`` and the self-loop relation is ``2R``.  Only training triples feed
message passing.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ValidationError

log = logging.getLogger(__name__)

CATEGORY_THRESHOLD = 1.5
CATEGORIES = ("1-1", "1-N", "N-1", "N-N")


@dataclass(frozen=True)
class Vocabulary:
    entities: tuple
    relations: tuple
    entity_index: dict = field(repr=False, compare=False)
    relation_index: dict = field(repr=False, compare=False)

    @classmethod
    def build(cls, entities, relations):
        entities = tuple(entities)
        relations = tuple(relations)
        return cls(
            entities,
            relations,
            {n: i for i, n in enumerate(entities)},
            {n: i for i, n in enumerate(relations)},
        )

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def entity_id(self, name):
        try:
            return self.entity_index[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def relation_id(self, name):
        """Id of a relation name; a ``^-1`` suffix selects the inverse relation."""
        if name.endswith("^-1"):
            return self.relation_id(name[:-3]) + self.n_relations
        try:
            return self.relation_index[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def relation_name(self, rid):
        R = self.n_relations
        if rid < R:
            return self.relations[rid]
        if rid < 2 * R:
            return self.relations[rid - R] + "^-1"
        if rid == 2 * R:
            return "<self>"
        raise KeyError(f"relation id {rid} out of range")

    def digest(self):
        """64-bit FNV-1a over sorted entity names then sorted relation names, NUL-terminated."""
        h = 0xCBF29CE484222325
        for name in list(sorted(self.entities)) + list(sorted(self.relations)):
            for byte in name.encode("utf-8") + b"\x00":
                h ^= byte
                h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return h


@dataclass(frozen=True)
class AugmentedGraph:
    """Splits as ``(n, 3)`` int64 arrays of (head, rel, tail) plus the augmented train set."""

    n_entities: int
    n_relations: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    augmented: np.ndarray

    @property
    def n_aug_relations(self):
        return 2 * self.n_relations + 1

    @property
    def self_loop(self):
        return 2 * self.n_relations

    @classmethod
    def from_triples(cls, n_entities, n_relations, train, valid=None, test=None):
        train = _as_triples(train)
        valid = _as_triples(valid)
        test = _as_triples(test)
        if len(train) == 0:
            raise ValidationError("training split is empty")
        for name, arr in (("train", train), ("valid", valid), ("test", test)):
            if len(arr) and (
                arr[:, [0, 2]].min() < 0
                or arr[:, [0, 2]].max() >= n_entities
                or arr[:, 1].min() < 0
                or arr[:, 1].max() >= n_relations
            ):
                raise ValidationError(f"{name}: ids out of range")
        return cls(n_entities, n_relations, train, valid, test, augment(train, n_entities, n_relations))


def _as_triples(arr):
    if arr is None:
        return np.zeros((0, 3), dtype=np.int64)
    arr = np.asarray(arr, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


def augment(train, n_entities, n_relations):
    """Train triples, their inverses ``(t, r+R, h)`` and one self loop per entity."""
    inv = np.stack([train[:, 2], train[:, 1] + n_relations, train[:, 0]], axis=1)
    ents = np.arange(n_entities, dtype=np.int64)
    loops = np.stack([ents, np.full(n_entities, 2 * n_relations), ents], axis=1)
    return np.concatenate([train, inv, loops]).astype(np.int64)


def read_triples(path):
    """Parse a tab-separated triple file into a list of name triples."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def _dedup(rows, path):
    seen = set()
    out = []
    for r in rows:
        if r in seen:
            continue
        seen.add(r)
        out.append(r)
    if len(out) != len(rows):
        log.warning("%s: dropped %d duplicate triples", path, len(rows) - len(out))
    return out


def load_dataset(train_path, valid_path, test_path):
    """Read the three splits; returns ``(Vocabulary, AugmentedGraph)``."""
    splits = []
    for p in (train_path, valid_path, test_path):
        splits.append(_dedup(read_triples(p), p))
    if not splits[0]:
        raise ValidationError(f"{train_path}: training split is empty")

    # ids in order of first appearance over train, valid, test
    ent, rel = {}, {}
    for rows in splits:
        for h, r, t in rows:
            ent.setdefault(h, len(ent))
            rel.setdefault(r, len(rel))
            ent.setdefault(t, len(ent))
    vocab = Vocabulary.build(ent, rel)

    def encode(rows):
        if not rows:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array([(ent[h], rel[r], ent[t]) for h, r, t in rows], dtype=np.int64)

    graph = AugmentedGraph.from_triples(len(ent), len(rel), *(encode(s) for s in splits))
    return vocab, graph


def dataset_statistics(graph):
    return {
        "entities": graph.n_entities,
        "relations": graph.n_relations,
        "train": len(graph.train),
        "valid": len(graph.valid),
        "test": len(graph.test),
    }


def format_statistics(stats):
    labels = (
        ("|E|", "entities"),
        ("|R|", "relations"),
        ("|T_train|", "train"),
        ("|T_valid|", "valid"),
        ("|T_test|", "test"),
    )
    return "".join(f"{lab}\t{stats[key]}\n" for lab, key in labels)


# ---------------------------------------------------------------------------
# neighbour index
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborIndex:
    """Edge lists grouped by owning entity, sorted by (owner, rel, other).

    ``forward`` holds rows (h, r, t) for original train edges; ``backward``
    holds rows (t, r + R, h).  ``*_ptr`` are CSR offsets per entity.
    """

    n_entities: int
    forward: np.ndarray
    backward: np.ndarray
    forward_ptr: np.ndarray
    backward_ptr: np.ndarray

    def forward_of(self, h):
        rows = self.forward[self.forward_ptr[h]:self.forward_ptr[h + 1]]
        return [(int(r), int(t)) for _, r, t in rows]

    def backward_of(self, h):
        rows = self.backward[self.backward_ptr[h]:self.backward_ptr[h + 1]]
        return [(int(r), int(t)) for _, r, t in rows]


def _sorted_with_ptr(edges, n):
    order = np.lexsort((edges[:, 2], edges[:, 1], edges[:, 0]))
    edges = edges[order]
    counts = np.bincount(edges[:, 0], minlength=n)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return edges, ptr


def build_neighbor_index(graph):
    R = graph.n_relations
    tr = graph.train
    fwd = tr.copy()
    bwd = np.stack([tr[:, 2], tr[:, 1] + R, tr[:, 0]], axis=1)
    fwd, fptr = _sorted_with_ptr(fwd, graph.n_entities)
    bwd, bptr = _sorted_with_ptr(bwd, graph.n_entities)
    return NeighborIndex(graph.n_entities, fwd, bwd, fptr, bptr)


# ---------------------------------------------------------------------------
# uncertainty and relation categories
# ---------------------------------------------------------------------------


class UncertaintyTable(dict):
    """``(head, rel) -> number of distinct train tails`` for rel in R and R^-1."""

    def count(self, head, rel):
        return self[(int(head), int(rel))]


def query_triples(graph, split="train"):
    """Both-direction (subject, rel, answer) rows of a split, self loops excluded."""
    tr = getattr(graph, split)
    inv = np.stack([tr[:, 2], tr[:, 1] + graph.n_relations, tr[:, 0]], axis=1)
    return np.concatenate([tr, inv])


def uncertainty_counts(graph):
    q = np.unique(query_triples(graph, "train"), axis=0)
    keys, counts = np.unique(q[:, :2], axis=0, return_counts=True)
    return UncertaintyTable(((int(h), int(r)), int(c)) for (h, r), c in zip(keys, counts))


@dataclass(frozen=True)
class RelationCategory:
    tph: float
    hpt: float
    category: str


def categorize_relations(graph, relations=None):
    """Mean tails-per-head / heads-per-tail on train; ``relations`` defaults to all."""
    tr = np.unique(graph.train, axis=0)
    if relations is None:
        relations = range(graph.n_relations)
    out = {}
    for r in relations:
        sub = tr[tr[:, 1] == r]
        if len(sub) == 0:
            raise ValidationError(f"relation {r} has no training triples; cannot categorize")
        tph = len(sub) / len(np.unique(sub[:, 0]))
        hpt = len(sub) / len(np.unique(sub[:, 2]))
        head_side = "1" if hpt < CATEGORY_THRESHOLD else "N"
        tail_side = "1" if tph < CATEGORY_THRESHOLD else "N"
        out[int(r)] = RelationCategory(tph, hpt, f"{head_side}-{tail_side}")
    return out
