"""Deterministic synthetic knowledge graph with learnable regularities.

Four relations over ``n`` entities:

* ``r0``: a random permutation ``f``.
* ``r1``: its inverse, so ``(a, r0, b)`` implies ``(b, r1, a)``.
* ``r2``: a second permutation ``g``.
* ``r3``: the composition, ``(a, r3, g(f(a)))``.
"""

from pathlib import Path

import numpy as np


def make_toy_triples(n_entities=200, seed=0):
    rng = np.random.default_rng(seed)
    f = rng.permutation(n_entities)
    g = rng.permutation(n_entities)
    e = np.arange(n_entities)
    rows = [
        np.stack([e, np.zeros_like(e), f], 1),
        np.stack([f, np.ones_like(e), e], 1),
        np.stack([e, np.full_like(e, 2), g], 1),
        np.stack([e, np.full_like(e, 3), g[f]], 1),
    ]
    return np.concatenate(rows).astype(np.int64)


def split_triples(triples, train_frac=0.9, seed=0):
    """Shuffle and split; half of the held-out part goes to valid, half to test."""
    order = np.random.default_rng(seed).permutation(len(triples))
    cut = int(round(train_frac * len(triples)))
    held = order[cut:]
    half = len(held) // 2
    return triples[order[:cut]], triples[held[:half]], triples[held[half:]]


def write_toy_dataset(directory, n_entities=200, seed=0, train_frac=0.9):
    """Write train/valid/test TSV files with names ``e<i>`` and ``r<j>``; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    splits = split_triples(make_toy_triples(n_entities, seed), train_frac, seed)
    paths = []
    for name, rows in zip(("train", "valid", "test"), splits):
        p = directory / f"{name}.txt"
        p.write_text("".join(f"e{h}\tr{r}\te{t}\n" for h, r, t in rows), encoding="utf-8")
        paths.append(p)
    return tuple(paths)


def main(argv=None):
    import argparse

    ap = argparse.ArgumentParser(description="Write the synthetic toy dataset as TSV files.")
    ap.add_argument("directory")
    ap.add_argument("--entities", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for p in write_toy_dataset(args.directory, args.entities, args.seed):
        print(p)


if __name__ == "__main__":
    main()
