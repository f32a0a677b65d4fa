"""Embedding geometry and attention exports as plain tab-separated text."""

import logging
from dataclasses import dataclass

import numpy as np

from .encoder import cosine_to_mean
from .errors import ParseError

log = logging.getLogger(__name__)

HIST_BINS = 64


def principal_components(X, n_components=2, tol=1e-9, max_iter=1000, seed=0):
    """Top principal directions by power iteration with deflation.

    Returns ``(components, eigenvalues)``; ``components`` has shape
    ``(n_components, d)``, each unit-norm with its largest-magnitude loading
    positive.  Directions with (numerically) zero variance come back as zero
    rows.
    """
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(len(X), 1)
    scale = max(np.trace(cov), 1e-300)
    rng = np.random.default_rng(seed)
    comps, vals = [], []
    for _ in range(n_components):
        v = rng.normal(size=cov.shape[0])
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = cov @ v
            for c in comps:
                w -= (w @ c) * c
            nrm = np.linalg.norm(w)
            if nrm <= 1e-15 * scale:
                lam = 0.0
                break
            w /= nrm
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            lam = float(v @ cov @ v)
            if done:
                break
        if lam <= 1e-12 * scale:
            comps.append(np.zeros(cov.shape[0]))
            vals.append(0.0)
            continue
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(lam)
        cov = cov - lam * np.outer(v, v)
    return np.array(comps), np.array(vals)


@dataclass
class Geometry:
    conicity: float
    cosines: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    projection: np.ndarray
    rank: int


def geometry(E):
    """Cosine-to-mean distribution, its mean (conicity) and a 2-D PCA projection."""
    E = np.asarray(E, dtype=np.float64)
    cos = cosine_to_mean(E)
    counts, edges = np.histogram(np.clip(cos, -1.0, 1.0), bins=HIST_BINS, range=(-1.0, 1.0))
    comps, vals = principal_components(E)
    rank = int(np.count_nonzero(vals))
    if rank < 2:
        log.warning("degenerate covariance (rank %d); emitting a rank-%d projection", rank, max(rank, 1))
    proj = (E - E.mean(axis=0)) @ comps.T
    return Geometry(float(cos.mean()), cos, counts, edges, proj, rank)


def write_geometry(out_dir, tables, entity_names):
    """Write summary, histogram, per-entity cosine and projection files for each named table."""
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = ["table\tconicity\tpca_rank"]
    hist = ["table\tbin_lo\tbin_hi\tcount"]
    points = ["table\tentity\tcosine\tpc1\tpc2"]
    results = {}
    for name, E in tables.items():
        g = geometry(E)
        results[name] = g
        summary.append(f"{name}\t{g.conicity!r}\t{g.rank}")
        for lo, hi, c in zip(g.hist_edges[:-1], g.hist_edges[1:], g.hist_counts):
            hist.append(f"{name}\t{lo!r}\t{hi!r}\t{int(c)}")
        for ent, cval, (x, y) in zip(entity_names, g.cosines, g.projection):
            points.append(f"{name}\t{ent}\t{cval!r}\t{x!r}\t{y!r}")
    (out_dir / "geometry_summary.tsv").write_text("\n".join(summary) + "\n", encoding="utf-8")
    (out_dir / "geometry_hist.tsv").write_text("\n".join(hist) + "\n", encoding="utf-8")
    (out_dir / "geometry_points.tsv").write_text("\n".join(points) + "\n", encoding="utf-8")
    return results


def renormalize_pair(A):
    """Drop the self weight and rescale (forward, backward) to sum to one."""
    f, b = float(A[0]), float(A[2])
    s = f + b
    if s <= 0:
        return 0.5, 0.5
    return f / s, b / s


ATTENTION_HEADER = "entity\trelation\ttask\tA_forward\tA_self\tA_backward\tpair_forward\tpair_backward"


def attention_rows(task_emb, vocab, queries):
    """One row per ``(entity_name, relation_name)`` query.

    A relation written with a ``^-1`` suffix is a backward sub-task and reads
    the backward-task weights; anything else reads the forward-task weights.
    """
    AF = task_emb.weights_forward.data
    AB = task_emb.weights_backward.data
    rows = []
    for ent_name, rel_name in queries:
        e = vocab.entity_id(ent_name)
        r = vocab.relation_id(rel_name)
        task = "F" if r < vocab.n_relations else "B"
        A = (AF if task == "F" else AB)[e]
        pf, pb = renormalize_pair(A)
        rows.append((ent_name, rel_name, task, float(A[0]), float(A[1]), float(A[2]), pf, pb))
    return rows


def format_attention(rows):
    lines = [ATTENTION_HEADER]
    for ent, rel, task, a0, a1, a2, pf, pb in rows:
        lines.append(f"{ent}\t{rel}\t{task}\t{a0!r}\t{a1!r}\t{a2!r}\t{pf!r}\t{pb!r}")
    return "\n".join(lines) + "\n"


def read_query_file(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected entity<TAB>relation")
            out.append((parts[0], parts[1]))
    return out
