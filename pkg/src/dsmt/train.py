"""1-N training with validation model selection, and filtered-rank evaluation."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import tensor as T
from .data import CATEGORIES, categorize_relations, query_triples
from .errors import ContractError, NumericError
from .model import DsMtGCN

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuerySet:
    """Distinct (subject, rel) queries with CSR answer lists."""

    subjects: np.ndarray
    rels: np.ndarray
    indptr: np.ndarray
    answers: np.ndarray

    def __len__(self):
        return len(self.subjects)

    def counts(self):
        return np.diff(self.indptr)

    def answers_of(self, i):
        return self.answers[self.indptr[i]:self.indptr[i + 1]]

    def labels(self, rows, n_entities):
        out = np.zeros((len(rows), n_entities))
        for j, i in enumerate(rows):
            out[j, self.answers_of(i)] = 1.0
        return out


def build_queries(triples):
    """Group (subject, rel, answer) rows into distinct queries."""
    q = np.unique(np.asarray(triples, dtype=np.int64).reshape(-1, 3), axis=0)
    keys, start = np.unique(q[:, :2], axis=0, return_index=True)
    indptr = np.append(start, len(q)).astype(np.int64)
    return QuerySet(keys[:, 0].copy(), keys[:, 1].copy(), indptr, q[:, 2].copy())


def train_queries(graph):
    return build_queries(query_triples(graph, "train"))


def known_positives(graph):
    """Every (subject, rel, answer) over all splits and both directions, grouped."""
    rows = np.concatenate([query_triples(graph, s) for s in ("train", "valid", "test")])
    qs = build_queries(rows)
    return {(int(s), int(r)): qs.answers_of(i) for i, (s, r) in enumerate(zip(qs.subjects, qs.rels))}


# ---------------------------------------------------------------------------
# ranking and metrics
# ---------------------------------------------------------------------------


def _rank_from_counts(greater, ties, rng):
    return 1 + int(greater) + (int(rng.integers(0, ties + 1)) if ties else 0)


def filtered_rank(scores, target, known, rng):
    """Filtered rank under the random tie protocol.

    Known positives other than ``target`` are removed; the rank is one plus
    the number of strictly better survivors plus a uniform draw over the
    number of survivors tied with the target.
    """
    scores = np.asarray(scores, dtype=np.float64)
    known = np.asarray(known, dtype=np.int64)
    if target not in known:
        raise ContractError("filtered_rank: target must be among the known positives")
    greater, ties = _kernels.backend.rank_counts(
        scores[None, :], np.array([target]), np.array([0, len(known)]), known
    )
    return _rank_from_counts(greater[0], ties[0], rng)


def query_rng(seed, i):
    return np.random.default_rng([seed, i])


def filtered_ranks(scores, targets, filters, seed, offset=0):
    """Batched ranks; ``filters`` is a list of known-positive arrays per row.

    Row ``j`` draws its tie-break from a generator seeded by
    ``(seed, offset + j)`` so results do not depend on batching.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lens = np.array([len(f) for f in filters], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    indices = np.concatenate(filters).astype(np.int64) if len(filters) else np.zeros(0, np.int64)
    greater, ties = _kernels.backend.rank_counts(scores, targets, indptr, indices)
    ranks = 1 + greater
    for j in np.flatnonzero(ties):
        ranks[j] += query_rng(seed, offset + j).integers(0, ties[j] + 1)
    return ranks


@dataclass(frozen=True)
class MetricsReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int

    def row(self):
        return f"{self.mrr:.6f}\t{self.hits1:.6f}\t{self.hits3:.6f}\t{self.hits10:.6f}"


METRIC_HEADER = "MRR\tH@1\tH@3\tH@10"


def compute_metrics(ranks):
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ContractError("compute_metrics: empty rank list")
    return MetricsReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits1=float(np.mean(ranks <= 1)),
        hits3=float(np.mean(ranks <= 3)),
        hits10=float(np.mean(ranks <= 10)),
        count=int(ranks.size),
    )


@dataclass
class RankResult:
    ranks: np.ndarray
    forward: np.ndarray
    relations: np.ndarray
    categories: list = field(default_factory=list)

    def __len__(self):
        return len(self.ranks)


def evaluation_queries(graph, split):
    """Triple ``j`` of the split yields query ``2j`` (forward) and ``2j+1`` (backward)."""
    tr = getattr(graph, split)
    R = graph.n_relations
    n = len(tr)
    subj = np.empty(2 * n, dtype=np.int64)
    rel = np.empty(2 * n, dtype=np.int64)
    tgt = np.empty(2 * n, dtype=np.int64)
    subj[0::2], rel[0::2], tgt[0::2] = tr[:, 0], tr[:, 1], tr[:, 2]
    subj[1::2], rel[1::2], tgt[1::2] = tr[:, 2], tr[:, 1] + R, tr[:, 0]
    return subj, rel, tgt


def evaluate(model, split="test", seed=0, known=None, batch_size=None, categorize=True):
    """Filtered ranks for both directions of every triple in ``split``."""
    graph = model.graph
    known = known if known is not None else known_positives(graph)
    batch_size = batch_size or model.config.eval_batch_size
    subj, rel, tgt = evaluation_queries(graph, split)
    R = graph.n_relations
    encoded = model.encode()
    ranks = np.empty(len(subj), dtype=np.int64)
    for start in range(0, len(subj), batch_size):
        sl = slice(start, start + batch_size)
        fwd = rel[sl] < R
        raw = model.raw_scores(subj[sl], rel[sl], fwd, encoded).data
        filters = [known[(int(s), int(r))] for s, r in zip(subj[sl], rel[sl])]
        ranks[sl] = filtered_ranks(raw, tgt[sl], filters, seed, offset=start)
    forward = rel < R
    base_rel = np.where(forward, rel, rel - R)
    cats = []
    if categorize and len(base_rel):
        cmap = categorize_relations(graph, np.unique(base_rel))
        cats = [cmap[int(r)].category for r in base_rel]
    return RankResult(ranks, forward, base_rel, cats)


def subtask_report(result):
    """Metrics per (direction, category); empty cells map to None."""
    table = {}
    forward = np.asarray(result.forward)
    cats = np.asarray(result.categories)
    for direction, flag in (("forward", True), ("backward", False)):
        for cat in CATEGORIES:
            sel = (forward == flag) & (cats == cat)
            table[(direction, cat)] = compute_metrics(result.ranks[sel]) if sel.any() else None
    return table


def format_subtasks(table):
    lines = ["direction\tcategory\tcount\tMRR\tH@10"]
    for (direction, cat), m in table.items():
        if m is None:
            lines.append(f"{direction}\t{cat}\t0\t-\t-")
        else:
            lines.append(f"{direction}\t{cat}\t{m.count}\t{m.mrr:.6f}\t{m.hits10:.6f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_mrr: float = float("nan")


@dataclass
class TrainResult:
    model: DsMtGCN
    best_params: dict
    best_valid_mrr: float
    best_epoch: int
    history: list

    def eval_records(self):
        return [h for h in self.history if not math.isnan(h.valid_mrr)]


def format_history(history):
    return "".join(
        f"{h.epoch}\t{h.loss!r}\t{h.valid_mrr!r}\n" for h in history if not math.isnan(h.valid_mrr)
    )


def train(config, graph, progress=None):
    """Adam on 1-N batches, keeping the parameters with the best validation MRR."""
    model = DsMtGCN(config, graph)
    queries = train_queries(graph)
    u = queries.counts().astype(np.float64)
    n = graph.n_entities
    opt = T.Adam(model.params, lr=config.lr)
    known = known_positives(graph) if len(graph.valid) else None

    history = []
    best = (-1.0, 0, {k: v.copy() for k, v in model.arrays().items()})
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(queries))
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        total, batches = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            rows = order[start:start + config.batch_size]
            labels = queries.labels(rows, n)
            with T.Tape() as tape:
                loss, _, _ = model.loss(queries.subjects[rows], queries.rels[rows], labels, u[rows], drop_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss, list(model.params.values()))
            for name, p in model.params.items():
                if not np.all(np.isfinite(grads.of(p))):
                    raise NumericError(f"non-finite gradient for {name} at epoch {epoch}, batch {b}")
            opt.step(grads)
            total += value * len(rows)
            batches += len(rows)
        rec = EpochRecord(epoch, total / batches)
        evaluated = known is not None and (epoch % config.eval_interval == 0 or epoch == config.max_epochs)
        if evaluated:
            res = evaluate(model, "valid", seed=config.seed, known=known, categorize=False)
            rec.valid_mrr = compute_metrics(res.ranks).mrr
            if rec.valid_mrr > best[0]:
                best = (rec.valid_mrr, epoch, {k: v.copy() for k, v in model.arrays().items()})
                stale = 0
            else:
                stale += 1
        history.append(rec)
        log.info("epoch %d loss %.6f valid_mrr %.4f (%.1fs)", epoch, rec.loss, rec.valid_mrr,
                 time.perf_counter() - t0)
        if progress is not None:
            progress(rec)
        if evaluated and stale >= config.patience:
            break
    if known is None:
        best = (float("nan"), history[-1].epoch, {k: v.copy() for k, v in model.arrays().items()})
    for k, v in best[2].items():
        model.params[k].data[...] = v
    return TrainResult(model, best[2], best[0], best[1], history)
