"""Filtered ranking metrics, MAP over negative candidates, and attention-flow
statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .agnn import QueryTrace
from .config import Config
from .graph import DataError, KnowledgeGraph
from .params import ModelParams
from .training import forward_batch


@dataclass(frozen=True)
class RankResult:
    query: tuple[int, int, int]
    rank: int
    n_candidates: int


def rank_filtered(scores: Mapping[int, float] | np.ndarray, target: int, known_true: Iterable[int],
                  n_entities: int, query=(-1, -1, -1)) -> RankResult:
    """1 + number of unfiltered entities that beat the target.

    An entity beats the target with a higher score, or with an equal score
    and a lower id.  Entities without a score count as 0.
    """
    if not 0 <= target < n_entities:
        raise IndexError(f"target {target} outside entity range [0, {n_entities})")
    if isinstance(scores, Mapping):
        dense = np.zeros(n_entities, dtype=np.float64)
        if scores:
            dense[np.fromiter(scores.keys(), dtype=np.int64)] = np.fromiter(scores.values(), dtype=np.float64)
    else:
        dense = np.asarray(scores, dtype=np.float64)
    keep = np.ones(n_entities, dtype=bool)
    known = np.fromiter((int(e) for e in known_true), dtype=np.int64)
    keep[known] = False
    keep[target] = False
    s = dense[target]
    ids = np.arange(n_entities)
    better = keep & ((dense > s) | ((dense == s) & (ids < target)))
    n_cand = int(keep.sum()) + 1
    return RankResult(tuple(query), 1 + int(better.sum()), n_cand)


def compute_metrics(ranks: Sequence[RankResult | int]) -> dict[str, float]:
    if len(ranks) == 0:
        raise ValueError("no ranks to summarize")
    r = np.asarray([x.rank if isinstance(x, RankResult) else int(x) for x in ranks], dtype=np.float64)
    return {
        "hits1": float(np.mean(r <= 1)),
        "hits3": float(np.mean(r <= 3)),
        "hits10": float(np.mean(r <= 10)),
        "mrr": float(np.mean(1.0 / r)),
    }


def average_precision(positive: Sequence[float], negative: Sequence[float]) -> float:
    """AP of one ranked list; on equal scores negatives are ranked first."""
    items = [(float(s), 0) for s in negative] + [(float(s), 1) for s in positive]
    # label 0 sorts before label 1 at equal score -> pessimistic ties
    items.sort(key=lambda x: (-x[0], x[1]))
    hits = 0
    total = 0.0
    for i, (_, lab) in enumerate(items, 1):
        if lab:
            hits += 1
            total += hits / i
    return total / hits if hits else 0.0


def map_score(queries: Sequence[tuple[Sequence[float], Sequence[float]]]) -> float:
    if not queries:
        raise ValueError("no queries")
    return float(np.mean([average_precision(p, n) for p, n in queries]))


@dataclass
class AttentionAnalysis:
    entropy: list[float]
    top1: list[float]
    top3: list[float]
    top5: list[float]


def attention_analysis(trace: QueryTrace | Sequence[Mapping[int, float]]) -> AttentionAnalysis:
    dists = trace.attention if isinstance(trace, QueryTrace) else list(trace)
    if not dists:
        raise ValueError("trace has no attention steps")
    ent, t1, t3, t5 = [], [], [], []
    for a in dists:
        p = np.sort(np.asarray([x for x in a.values() if x > 0], dtype=np.float64))[::-1]
        ent.append(float(-(p * np.log(p)).sum()) if p.size else 0.0)
        t1.append(float(p[:1].sum()))
        t3.append(float(p[:3].sum()))
        t5.append(float(p[:5].sum()))
    return AttentionAnalysis(ent, t1, t3, t5)


def mean_analysis(analyses: Sequence[AttentionAnalysis]) -> AttentionAnalysis:
    n = min(len(a.entropy) for a in analyses)
    return AttentionAnalysis(*[
        [float(np.mean([getattr(a, k)[t] for a in analyses])) for t in range(n)]
        for k in ("entropy", "top1", "top3", "top5")
    ])


# ------------------------------------------------------------------ model eval

def eval_queries(triples: np.ndarray, g: KnowledgeGraph) -> np.ndarray:
    """Test triples, plus their inverse direction when the graph has inverses."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if not g.add_inverse:
        return triples
    inv = triples[:, [2, 1, 0]].copy()
    inv[:, 1] += g.n_base_relations
    return np.concatenate([triples, inv])


def predict(params: ModelParams, g: KnowledgeGraph, queries: np.ndarray, cfg: Config,
            rng: np.random.Generator, record: bool = False, batch_size: int | None = None):
    """Yield (batch, state) pairs; no tape is active so nothing is recorded
    for differentiation and the model is untouched."""
    bs = batch_size or cfg.batch_size
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    for i in range(0, len(queries), bs):
        batch = queries[i:i + bs]
        yield batch, forward_batch(params, g, batch, cfg, None, rng, record)


def evaluate(params: ModelParams, g: KnowledgeGraph, queries: np.ndarray,
             known: Mapping[tuple[int, int], set[int]], cfg: Config, rng: np.random.Generator,
             record: bool = False, batch_size: int | None = None):
    """Filtered ranks for every query.  Returns (ranks, traces)."""
    ranks: list[RankResult] = []
    traces: list[QueryTrace] = []
    for batch, state in predict(params, g, queries, cfg, rng, record, batch_size):
        for b, (h, r, t) in enumerate(batch.tolist()):
            nodes, sc = state.prediction_arrays(b)
            dense = np.zeros(g.n_entities, dtype=np.float64)
            dense[nodes] = sc
            ranks.append(rank_filtered(dense, t, known.get((h, r), ()), g.n_entities, (h, r, t)))
        if record:
            traces.extend(state.traces)
    return ranks, traces


def load_negatives(path, entity_ids: Mapping[str, int], relation_ids: Mapping[str, int]):
    """Read ``head<TAB>rel<TAB>candidate<TAB>label`` lines, grouped per (head, rel)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[3].strip() not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: expected head<TAB>rel<TAB>candidate<TAB>0|1")
            try:
                h = entity_ids[parts[0]]
                r = relation_ids[parts[1]]
                c = entity_ids[parts[2]]
            except KeyError as exc:
                raise DataError(f"{path}:{lineno}: unknown name {exc.args[0]!r}") from None
            groups.setdefault((h, r), []).append((c, int(parts[3])))
    return groups


def evaluate_map(params: ModelParams, g: KnowledgeGraph, groups: Mapping[tuple[int, int], list],
                 cfg: Config, rng: np.random.Generator) -> float:
    keys = sorted(groups)
    queries = np.asarray([(h, r, 0) for h, r in keys], dtype=np.int64).reshape(-1, 3)
    per_query = []
    i = 0
    for batch, state in predict(params, g, queries, cfg, rng):
        for b in range(len(batch)):
            nodes, sc = state.prediction_arrays(b)
            score = dict(zip(nodes.tolist(), sc.tolist()))
            cands = groups[keys[i]]
            pos = [score.get(c, 0.0) for c, lab in cands if lab == 1]
            neg = [score.get(c, 0.0) for c, lab in cands if lab == 0]
            if pos:
                per_query.append((pos, neg))
            i += 1
    return map_score(per_query) if per_query else math.nan
