"""Toy knowledge graphs for smoke runs and acceptance checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import TripleSet


@dataclass
class ToyDataset:
    train: TripleSet
    valid: TripleSet
    test: TripleSet


def _triple_set(rows, n_entities: int, relation_names: list[str]) -> TripleSet:
    arr = np.asarray(sorted(set(map(tuple, rows))), dtype=np.int64).reshape(-1, 3)
    return TripleSet(arr, [f"e{i}" for i in range(n_entities)], list(relation_names))


def compositional_kg(n_entities: int = 200, test_fraction: float = 0.2, seed: int = 0) -> ToyDataset:
    """Relations r1, r2 are random functions; r3(h) = r2(r1(h)).

    All r1/r2 facts and (1 - test_fraction) of the r3 facts are training
    triples; the remaining r3 facts are split evenly into valid and test.
    """
    rng = np.random.default_rng(seed)
    f1 = rng.integers(0, n_entities, size=n_entities)
    f2 = rng.integers(0, n_entities, size=n_entities)
    heads = np.arange(n_entities)
    r1 = np.stack([heads, np.zeros_like(heads), f1], axis=1)
    r2 = np.stack([heads, np.ones_like(heads), f2], axis=1)
    r3 = np.stack([heads, np.full_like(heads, 2), f2[f1]], axis=1)
    perm = rng.permutation(n_entities)
    n_held = int(round(test_fraction * n_entities))
    held = r3[perm[:n_held]]
    kept = r3[perm[n_held:]]
    names = ["r1", "r2", "r3"]
    half = n_held // 2
    return ToyDataset(
        _triple_set(np.concatenate([r1, r2, kept]), n_entities, names),
        _triple_set(held[:half], n_entities, names),
        _triple_set(held[half:], n_entities, names),
    )


def random_kg(n_entities: int, n_relations: int, n_triples: int, seed: int = 0) -> TripleSet:
    rng = np.random.default_rng(seed)
    rows: set[tuple[int, int, int]] = set()
    while len(rows) < n_triples:
        h, t = rng.integers(0, n_entities, size=2)
        if h == t:
            continue
        rows.add((int(h), int(rng.integers(0, n_relations)), int(t)))
    return _triple_set(list(rows), n_entities, [f"r{i}" for i in range(n_relations)])
