"""Flow-style attention: transition scores over sampled edges, propagation
with renormalization, and top-k selection.

Everything is expressed over flat arrays with group ids so a whole batch of
queries is handled at once; a single query is simply a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ModelParams, mlp1


class AttentionError(RuntimeError):
    pass


@dataclass
class AttentionVector:
    """Distribution over a sparse node support for one query."""

    nodes: np.ndarray
    scores: Tensor
    step: int = 0

    def as_dict(self) -> dict[int, float]:
        return {int(v): float(s) for v, s in zip(self.nodes, self.scores.data)}

    def total(self) -> float:
        return float(self.scores.data.sum())


def init_attention(head: int, dtype=np.float32) -> AttentionVector:
    return AttentionVector(np.array([head], dtype=np.int64), ad.constant([1.0], dtype=dtype), 0)


def attention_scores(h_src: Tensor, h_dst: Tensor, full_dst: Tensor, context: Tensor,
                     params: ModelParams, slope: float = 0.2) -> tuple[Tensor, Tensor]:
    """Bilinear interaction scores per candidate edge.

    ``h_src``/``h_dst`` are subgraph states (zero rows for unseen
    destinations), ``full_dst`` the full-graph state of the destination and
    ``context`` the per-edge [e_r, q_head, q_rel] block.
    """
    if h_src.shape[0] != context.shape[0]:
        raise AttentionError("missing source state for some candidate edges")
    left1 = mlp1(ad.concat([h_src, context]), params, "att.src1", slope)
    right1 = mlp1(ad.concat([h_dst, context]), params, "att.dst1", slope)
    left2 = mlp1(ad.concat([h_src, context]), params, "att.src2", slope)
    right2 = mlp1(ad.concat([full_dst, context]), params, "att.dst2", slope)
    a1 = ad.row_sum(ad.mul(ad.matmul(left1, params["att.W1"]), right1))
    a2 = ad.row_sum(ad.mul(ad.matmul(left2, params["att.W2"]), right2))
    return a1, a2


@dataclass
class TransitionBlock:
    """Per-(source, destination) transition probabilities.

    ``pair_src`` indexes the source slot, ``pair_dst`` the destination
    candidate; probabilities of one source sum to one.
    """

    pair_src: np.ndarray
    pair_dst: np.ndarray
    probs: Tensor
    n_sources: int

    def rows(self) -> dict[int, dict[int, float]]:
        out: dict[int, dict[int, float]] = {}
        for s, d, p in zip(self.pair_src.tolist(), self.pair_dst.tolist(), self.probs.data.tolist()):
            out.setdefault(s, {})[d] = p
        return out


def build_transition(edge_src: np.ndarray, edge_dst: np.ndarray, logits: Tensor,
                     n_sources: int) -> TransitionBlock:
    """Sum edge logits over parallel relations of each (source, destination)
    pair, then softmax over each source's destinations."""
    edge_src = np.asarray(edge_src, dtype=np.int64)
    edge_dst = np.asarray(edge_dst, dtype=np.int64)
    present = np.bincount(edge_src, minlength=n_sources)
    if n_sources and present.min() == 0:
        raise AttentionError(f"source slot {int(np.argmin(present))} has no candidate edges")
    width = int(edge_dst.max()) + 1 if edge_dst.size else 1
    keys = edge_src * width + edge_dst
    uniq, pair_of_edge = np.unique(keys, return_inverse=True)
    pair_logits = ad.segment_sum(logits, pair_of_edge, len(uniq))
    pair_src = uniq // width
    pair_dst = uniq % width
    probs = ad.segment_softmax(pair_logits, pair_src, n_sources)
    return TransitionBlock(pair_src, pair_dst, probs, n_sources)


def normalize_groups(x: Tensor, groups: np.ndarray, n_groups: int) -> Tensor:
    """Divide each entry by its group's total (1-norm of a nonnegative vector)."""
    groups = np.asarray(groups, dtype=np.int64)
    totals = ad.segment_sum(x, groups, n_groups)
    if np.any(totals.data[np.unique(groups)] <= 0):
        raise AttentionError("attention mass vanished; cannot renormalize")
    return ad.div(x, ad.gather(totals, groups))


def propagate_attention(source_scores: Tensor, T: TransitionBlock, n_candidates: int,
                        candidate_group: np.ndarray, n_groups: int) -> Tensor:
    """New mass on each destination candidate = sum over sources of
    a[source] * T[source -> candidate], renormalized per group (query).

    ``source_scores`` holds the current attention of each source slot only;
    mass on nodes outside the sources is dropped before renormalizing.
    """
    flow = ad.mul(ad.gather(source_scores, T.pair_src), T.probs)
    mass = ad.segment_sum(flow, T.pair_dst, n_candidates)
    return normalize_groups(mass, candidate_group, n_groups)


def topk_select(scores: np.ndarray, nodes: np.ndarray, groups: np.ndarray, k: int,
                positive_only: bool = False) -> np.ndarray:
    """Indices of the k highest scores inside each group.

    Ties go to the lower node id.  Result is sorted by (group, node)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores)
    nodes = np.asarray(nodes, dtype=np.int64)
    groups = np.asarray(groups, dtype=np.int64)
    idx = np.arange(len(scores))
    if positive_only:
        idx = idx[scores > 0]
    order = idx[np.lexsort((nodes[idx], -scores[idx], groups[idx]))]
    g = groups[order]
    first = np.searchsorted(g, g, side="left")
    rank = np.arange(len(order)) - first
    chosen = order[rank < k]
    chosen = chosen[np.lexsort((nodes[chosen], groups[chosen]))]
    ad.note_branch(chosen)
    return chosen


def topk_nodes(a: AttentionVector | dict, k: int) -> list[int]:
    """Top-k node ids of one distribution, best first, ties to the lower id."""
    if isinstance(a, dict):
        nodes = np.fromiter(a.keys(), dtype=np.int64, count=len(a))
        scores = np.fromiter(a.values(), dtype=np.float64, count=len(a))
    else:
        nodes, scores = a.nodes, a.scores.data
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.lexsort((nodes, -np.asarray(scores)))[:k]
    return nodes[order].tolist()
