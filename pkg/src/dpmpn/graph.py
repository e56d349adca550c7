"""Triple loading, graph construction, neighborhoods, dataset statistics and
per-batch edge masks."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SELF_LOOP_NAME = "_self_loop"
INVERSE_SUFFIX = "_inv"

MASK_MODES = ("cutoff_pairs", "remove_batch", "none")


class DataError(ValueError):
    """Malformed or missing dataset input."""


@dataclass
class TripleSet:
    triples: np.ndarray  # (n, 3) int64: head, rel, tail
    entity_names: list[str]
    relation_names: list[str]
    n_duplicates: int = 0

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)


@dataclass
class NameMaps:
    """Shared first-seen id assignment across several files."""

    entities: dict[str, int] = field(default_factory=dict)
    relations: dict[str, int] = field(default_factory=dict)

    def entity_id(self, name: str) -> int:
        return self.entities.setdefault(name, len(self.entities))

    def relation_id(self, name: str) -> int:
        return self.relations.setdefault(name, len(self.relations))

    def entity_names(self) -> list[str]:
        return list(self.entities)

    def relation_names(self) -> list[str]:
        return list(self.relations)


def load_triples(path, name_maps: NameMaps | None = None) -> TripleSet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    maps = name_maps if name_maps is not None else NameMaps()
    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []
    dups = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise DataError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail, got {line!r}")
            h, r, t = (p.strip() for p in parts)
            key = (maps.entity_id(h), maps.relation_id(r), maps.entity_id(t))
            if key in seen:
                dups += 1
                continue
            seen.add(key)
            rows.append(key)
    if not rows:
        raise DataError(f"{path}: no triples")
    if dups:
        log.warning("%s: dropped %d duplicate triples", path, dups)
    return TripleSet(np.asarray(rows, dtype=np.int64).reshape(-1, 3),
                     maps.entity_names(), maps.relation_names(), dups)


def load_splits(train_path, valid_path=None, test_path=None):
    """Load up to three splits sharing one id space.

    Entities seen only in valid/test still get ids (and embeddings), they
    just have no training edges.
    """
    maps = NameMaps()
    out = [load_triples(train_path, maps)]
    for p in (valid_path, test_path):
        out.append(load_triples(p, maps) if p else None)
    names_e, names_r = maps.entity_names(), maps.relation_names()
    for ts in out:
        if ts is not None:
            ts.entity_names = names_e
            ts.relation_names = names_r
    return tuple(out)


class KnowledgeGraph:
    """Immutable directed KG with optional inverse and self-loop edges.

    Edges are sorted by (src, rel, dst) so each node's out-edges form one
    contiguous slice ``offsets[v]:offsets[v+1]``.
    """

    def __init__(self, n_entities: int, n_base_relations: int, src, rel, dst,
                 is_inverse, is_self_loop, add_inverse: bool, add_self_loops: bool,
                 entity_names=None, relation_names=None):
        order = np.lexsort((dst, rel, src))
        self.src = np.asarray(src, dtype=np.int64)[order]
        self.rel = np.asarray(rel, dtype=np.int64)[order]
        self.dst = np.asarray(dst, dtype=np.int64)[order]
        self.is_inverse = np.asarray(is_inverse, dtype=bool)[order]
        self.is_self_loop = np.asarray(is_self_loop, dtype=bool)[order]
        for a in (self.src, self.rel, self.dst, self.is_inverse, self.is_self_loop):
            a.setflags(write=False)
        self.n_entities = n_entities
        self.n_base_relations = n_base_relations
        self.add_inverse = add_inverse
        self.add_self_loops = add_self_loops
        self.n_relations = n_base_relations * (2 if add_inverse else 1) + 1
        self.self_loop_rel = self.n_relations - 1
        self.offsets = np.searchsorted(self.src, np.arange(n_entities + 1)).astype(np.int64)
        self.offsets.setflags(write=False)
        self._index = {(int(s), int(r), int(d)): i
                       for i, (s, r, d) in enumerate(zip(self.src, self.rel, self.dst))}
        self.self_loop_edge = np.full(n_entities, -1, dtype=np.int64)
        loops = np.flatnonzero(self.is_self_loop)
        self.self_loop_edge[self.src[loops]] = loops
        self.self_loop_edge.setflags(write=False)
        self.entity_names = entity_names
        self.relation_names = relation_names

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edge_id(self, src: int, rel: int, dst: int) -> int | None:
        return self._index.get((src, rel, dst))

    def inverse_relation(self, rel: int) -> int | None:
        if rel == self.self_loop_rel:
            return rel
        if not self.add_inverse:
            return None
        b = self.n_base_relations
        return rel + b if rel < b else rel - b

    def relation_name(self, rel: int) -> str:
        if self.relation_names is not None and rel < len(self.relation_names):
            return self.relation_names[rel]
        return str(rel)

    def entity_name(self, v: int) -> str:
        if self.entity_names is not None and v < len(self.entity_names):
            return self.entity_names[v]
        return str(v)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    def full_mask(self) -> np.ndarray:
        return np.ones(self.n_edges, dtype=bool)


def build_graph(train: TripleSet, add_inverse: bool = True, add_self_loops: bool = True,
                n_entities: int | None = None) -> KnowledgeGraph:
    if len(train) == 0:
        raise DataError("cannot build a graph from zero triples")
    n_ent = train.n_entities if n_entities is None else n_entities
    base = train.n_relations
    h, r, t = train.triples[:, 0], train.triples[:, 1], train.triples[:, 2]
    src, rel, dst = [h], [r], [t]
    inv = [np.zeros(len(h), dtype=bool)]
    loop = [np.zeros(len(h), dtype=bool)]
    if add_inverse:
        src.append(t)
        rel.append(r + base)
        dst.append(h)
        inv.append(np.ones(len(h), dtype=bool))
        loop.append(np.zeros(len(h), dtype=bool))
    n_rel = base * (2 if add_inverse else 1) + 1
    if add_self_loops:
        nodes = np.arange(n_ent)
        src.append(nodes)
        rel.append(np.full(n_ent, n_rel - 1))
        dst.append(nodes)
        inv.append(np.zeros(n_ent, dtype=bool))
        loop.append(np.ones(n_ent, dtype=bool))
    names = list(train.relation_names)
    if add_inverse:
        names += [n + INVERSE_SUFFIX for n in train.relation_names]
    names.append(SELF_LOOP_NAME)
    return KnowledgeGraph(n_ent, base, np.concatenate(src), np.concatenate(rel), np.concatenate(dst),
                          np.concatenate(inv), np.concatenate(loop), add_inverse, add_self_loops,
                          list(train.entity_names), names)


def neighbors(g: KnowledgeGraph, node: int, mask: np.ndarray | None = None) -> list[tuple[int, int, int]]:
    """Out-edges of ``node`` as (rel, dst, edge_id), sorted by (rel, dst)."""
    if not 0 <= node < g.n_entities:
        raise IndexError(f"node {node} out of range [0, {g.n_entities})")
    lo, hi = g.offsets[node], g.offsets[node + 1]
    ids = np.arange(lo, hi)
    if mask is not None:
        ids = ids[mask[lo:hi]]
    return [(int(g.rel[e]), int(g.dst[e]), int(e)) for e in ids]


# --------------------------------------------------------------------- masks

def mask_for_batch(g: KnowledgeGraph, batch, mode: str = "remove_batch") -> np.ndarray:
    """Edge mask (True = usable) hiding the batch's own answers."""
    if mode not in MASK_MODES:
        raise ValueError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")
    mask = g.full_mask()
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if mode == "none" or len(batch) == 0:
        return mask
    if mode == "remove_batch":
        for h, r, t in batch:
            e = g.edge_id(int(h), int(r), int(t))
            if e is not None:
                mask[e] = False
            r_inv = g.inverse_relation(int(r))
            if r_inv is not None:
                e = g.edge_id(int(t), r_inv, int(h))
                if e is not None:
                    mask[e] = False
    else:
        n = g.n_entities
        a = np.minimum(batch[:, 0], batch[:, 2])
        b = np.maximum(batch[:, 0], batch[:, 2])
        pairs = np.unique(a * n + b)
        ea = np.minimum(g.src, g.dst)
        eb = np.maximum(g.src, g.dst)
        mask &= ~np.isin(ea * n + eb, pairs)
    mask |= g.is_self_loop
    return mask


# --------------------------------------------------------------------- stats

@dataclass
class DatasetStats:
    n_entities: int
    n_relations: int
    n_train: int
    n_valid: int
    n_test: int
    pme_train: float
    pme_valid: float
    al_valid: float
    n_valid_disconnected: int

    def to_lines(self) -> list[str]:
        return [
            f"n_entities={self.n_entities}",
            f"n_relations={self.n_relations}",
            f"n_train={self.n_train}",
            f"n_valid={self.n_valid}",
            f"n_test={self.n_test}",
            f"pme_train={self.pme_train:.6f}",
            f"pme_valid={self.pme_valid:.6f}",
            f"al_valid={self.al_valid:.6f}",
            f"n_valid_disconnected={self.n_valid_disconnected}",
        ]


def _pair_keys(triples: np.ndarray, n: int) -> np.ndarray:
    a = np.minimum(triples[:, 0], triples[:, 2])
    b = np.maximum(triples[:, 0], triples[:, 2])
    return a * n + b


def multi_edge_fraction(train: np.ndarray, query: np.ndarray | None, n_entities: int) -> float:
    """Fraction of ``query`` triples whose endpoints are joined by some other
    train triple, direction ignored.  ``query=None`` means train itself."""
    train_keys = _pair_keys(train, n_entities)
    counts = Counter(train_keys.tolist())
    if query is None:
        hits = sum(1 for k in train_keys.tolist() if counts[k] >= 2)
        return hits / len(train_keys)
    if len(query) == 0:
        return 0.0
    # a query triple that is itself in train must not count itself
    train_set = set(map(tuple, train.tolist()))
    hits = 0
    for row, k in zip(query.tolist(), _pair_keys(query, n_entities).tolist()):
        need = 2 if tuple(row) in train_set else 1
        hits += counts.get(k, 0) >= need
    return hits / len(query)


def undirected_adjacency(train: np.ndarray, n_entities: int) -> sp.csr_matrix:
    h, t = train[:, 0], train[:, 2]
    rows = np.concatenate([h, t])
    cols = np.concatenate([t, h])
    adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_entities, n_entities))
    adj.sum_duplicates()
    return adj


def shortest_path_length(adj: sp.csr_matrix, source: int, target: int) -> int | None:
    """Unweighted BFS distance, or None when disconnected."""
    if source == target:
        return 0
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[source] = True
    frontier = np.array([source])
    depth = 0
    while frontier.size:
        depth += 1
        nxt = np.unique(adj[frontier].indices)
        nxt = nxt[~seen[nxt]]
        if nxt.size == 0:
            return None
        if np.any(nxt == target):
            return depth
        seen[nxt] = True
        frontier = nxt
    return None


def dataset_stats(train: TripleSet, valid: TripleSet | None, test: TripleSet | None = None) -> DatasetStats:
    n = train.n_entities
    tr = train.triples
    va = valid.triples if valid is not None else np.zeros((0, 3), dtype=np.int64)
    pme_tr = multi_edge_fraction(tr, None, n)
    pme_va = multi_edge_fraction(tr, va, n)
    adj = undirected_adjacency(tr, n)
    lengths = []
    disconnected = 0
    cache: dict[tuple[int, int], int | None] = {}
    for h, _, t in va.tolist():
        key = (h, t)
        if key not in cache:
            cache[key] = shortest_path_length(adj, h, t)
        d = cache[key]
        if d is None:
            disconnected += 1
        else:
            lengths.append(d)
    al = float(np.mean(lengths)) if lengths else float("nan")
    return DatasetStats(
        n_entities=n,
        n_relations=train.n_relations,
        n_train=len(tr),
        n_valid=len(va),
        n_test=0 if test is None else len(test),
        pme_train=pme_tr,
        pme_valid=pme_va,
        al_valid=al,
        n_valid_disconnected=disconnected,
    )


def triples_with_inverse(triples: np.ndarray, n_base_relations: int) -> np.ndarray:
    inv = triples[:, [2, 1, 0]].copy()
    inv[:, 1] += n_base_relations
    return np.concatenate([triples, inv])


def known_tails(splits: Iterable[np.ndarray]) -> dict[tuple[int, int], set[int]]:
    out: dict[tuple[int, int], set[int]] = {}
    for arr in splits:
        for h, r, t in np.asarray(arr).tolist():
            out.setdefault((h, r), set()).add(t)
    return out


def triples_from_lists(rows: Sequence[tuple[str, str, str]]) -> TripleSet:
    """Build a TripleSet from in-memory string triples (used by tests and the toy generators)."""
    maps = NameMaps()
    seen = set()
    out = []
    for h, r, t in rows:
        key = (maps.entity_id(h), maps.relation_id(r), maps.entity_id(t))
        if key not in seen:
            seen.add(key)
            out.append(key)
    return TripleSet(np.asarray(out, dtype=np.int64).reshape(-1, 3), maps.entity_names(), maps.relation_names())
