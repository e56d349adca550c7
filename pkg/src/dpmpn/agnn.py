"""Input-dependent pruned message passing over per-query subgraphs.

A batch of queries shares one flat row space: row i holds the state of node
``row_node[i]`` in the subgraph of query ``row_query[i]``.  Only visited
nodes own a row, so storage grows with the subgraphs, never with the KG.

One step follows attending-from -> sampling -> attention transition ->
attending-to -> messages -> node-state attending -> residual update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (AttentionError, AttentionVector, attention_scores, build_transition,
                        normalize_groups, propagate_attention, topk_select)
from .autodiff import Tensor
from .expansion import ExpansionFrontier, Horizons, sample_neighbors
from .graph import KnowledgeGraph
from .ignn import aggregate_scaled
from .params import ModelParams, mlp2


@dataclass
class QueryContext:
    heads: np.ndarray
    rels: np.ndarray
    q_head: Tensor  # B x D
    q_rel: Tensor  # B x D

    @classmethod
    def build(cls, params: ModelParams, heads, rels) -> "QueryContext":
        heads = np.asarray(heads, dtype=np.int64).reshape(-1)
        rels = np.asarray(rels, dtype=np.int64).reshape(-1)
        if heads.size and (heads.min() < 0 or heads.max() >= params.n_entities):
            raise IndexError("query head out of range")
        if rels.size and (rels.min() < 0 or rels.max() >= params.n_relations):
            raise IndexError("query relation out of range")
        return cls(heads, rels, ad.gather(params["ent_emb"], heads), ad.gather(params["rel_emb"], rels))

    def __len__(self) -> int:
        return len(self.heads)


@dataclass
class QueryTrace:
    """What one query's subgraph did, step by step."""

    head: int
    rel: int
    visited: list[int]
    attention: list[dict[int, float]]  # a^0 .. a^T
    frontiers: list[ExpansionFrontier]

    @property
    def n_steps(self) -> int:
        return len(self.frontiers)

    def final_attention(self) -> dict[int, float]:
        return self.attention[-1]

    def prediction(self) -> int:
        a = self.final_attention()
        return min(a, key=lambda v: (-a[v], v))


@dataclass
class SubgraphState:
    n_entities: int
    ctx: QueryContext
    row_query: np.ndarray
    row_node: np.ndarray
    H: Tensor
    attention: Tensor
    step: int = 0
    record: bool = False
    traces: list[QueryTrace] | None = None
    message_counts: list[int] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.row_node)

    @property
    def n_queries(self) -> int:
        return len(self.ctx)

    def row_keys(self) -> np.ndarray:
        return self.row_query * self.n_entities + self.row_node

    def lookup(self, query, node) -> np.ndarray:
        """Row index of each (query, node) pair, -1 where not visited."""
        keys = np.asarray(query, dtype=np.int64) * self.n_entities + np.asarray(node, dtype=np.int64)
        rk = self.row_keys()
        order = np.argsort(rk, kind="stable")
        sorted_keys = rk[order]
        pos = np.searchsorted(sorted_keys, keys)
        pos_c = np.minimum(pos, max(len(rk) - 1, 0))
        found = (pos < len(rk)) & (sorted_keys[pos_c] == keys) if len(rk) else np.zeros(len(keys), bool)
        return np.where(found, order[pos_c], -1)

    def visited(self, q: int) -> list[int]:
        return sorted(self.row_node[self.row_query == q].tolist())

    def visited_counts(self) -> np.ndarray:
        return np.bincount(self.row_query, minlength=self.n_queries)

    def prediction(self, q: int) -> AttentionVector:
        rows = np.flatnonzero(self.row_query == q)
        return AttentionVector(self.row_node[rows], ad.gather(self.attention, rows), self.step)

    def prediction_arrays(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        rows = np.flatnonzero(self.row_query == q)
        return self.row_node[rows], self.attention.data[rows]


def init_subgraph(ctx: QueryContext, full_states: Tensor, n_entities: int,
                  record: bool = False) -> SubgraphState:
    """Each query starts from its head with H = full-graph state, a = one-hot."""
    B = len(ctx)
    dtype = full_states.dtype
    state = SubgraphState(
        n_entities=n_entities,
        ctx=ctx,
        row_query=np.arange(B, dtype=np.int64),
        row_node=ctx.heads.copy(),
        H=ad.gather(full_states, ctx.heads),
        attention=ad.constant(np.ones(B), dtype=dtype),
        record=record,
    )
    if record:
        state.traces = [QueryTrace(int(h), int(r), [int(h)], [{int(h): 1.0}], [])
                        for h, r in zip(ctx.heads, ctx.rels)]
    return state


def agnn_step(s: SubgraphState, full_states: Tensor, params: ModelParams, g: KnowledgeGraph,
              horizons: Horizons, mask: np.ndarray | None, rng: np.random.Generator,
              slope: float = 0.2) -> SubgraphState:
    B = s.n_queries
    n_ent = s.n_entities
    D = params.n_dims
    dtype = full_states.dtype
    ctx = s.ctx

    # attending-from: top-N1 visited nodes by current attention
    from_rows = topk_select(s.attention.data, s.row_node, s.row_query, horizons.n_from, positive_only=True)
    from_query = s.row_query[from_rows]
    if len(np.unique(from_query)) != B:
        missing = sorted(set(range(B)) - set(from_query.tolist()))
        raise AttentionError(f"attending-from horizon empty for queries {missing[:5]}")
    from_nodes = s.row_node[from_rows]

    # sampling horizon
    se = sample_neighbors(g, from_nodes, horizons.n_sample, mask, rng)
    e_query = from_query[se.slot]
    e_src_row = from_rows[se.slot]
    cand_keys, e_cand = np.unique(e_query * n_ent + se.dst, return_inverse=True)
    cand_query = cand_keys // n_ent
    cand_node = cand_keys % n_ent
    n_cand = len(cand_keys)
    e_dst_row = s.lookup(e_query, se.dst)

    context = ad.concat([
        ad.gather(params["rel_emb"], se.rel),
        ad.gather(ctx.q_head, e_query),
        ad.gather(ctx.q_rel, e_query),
    ])
    h_src = ad.gather(s.H, e_src_row)
    h_dst = ad.gather(s.H, e_dst_row)
    f_dst = ad.gather(full_states, se.dst)

    # transition and attention propagation
    a1, a2 = attention_scores(h_src, h_dst, f_dst, context, params, slope)
    T = build_transition(se.slot, e_cand, ad.add(a1, a2), len(from_rows))
    a_cand = propagate_attention(ad.gather(s.attention, from_rows), T, n_cand, cand_query, B)

    # attending-to: top-N3 candidates by the new attention, renormalized
    to_idx = topk_select(a_cand.data, cand_node, cand_query, horizons.n_to)
    a_to = normalize_groups(ad.gather(a_cand, to_idx), cand_query[to_idx], B)

    # grow the row space with newly reached nodes
    to_rows = s.lookup(cand_query[to_idx], cand_node[to_idx])
    new = to_rows < 0
    n_old = s.n_rows
    to_rows[new] = n_old + np.arange(int(new.sum()))
    row_query = np.concatenate([s.row_query, cand_query[to_idx][new]])
    row_node = np.concatenate([s.row_node, cand_node[to_idx][new]])
    n_rows = len(row_node)
    a_next = ad.segment_sum(a_to, to_rows, n_rows)

    # messages only on sampled edges that land in the attending-to horizon
    cand_row = np.full(n_cand, -1, dtype=np.int64)
    cand_row[to_idx] = to_rows
    msg_e = np.flatnonzero(cand_row[e_cand] >= 0)
    s.message_counts.append(len(msg_e))
    msg_in = ad.concat([ad.gather(h_src, msg_e), ad.gather(context, msg_e), ad.gather(h_dst, msg_e)])
    msgs = mlp2(msg_in, params, "agnn.msg", slope)
    pooled = aggregate_scaled(msgs, cand_row[e_cand[msg_e]], n_rows)

    # residual update on attending-to and attending-from nodes
    H_ext = s.H
    if n_rows > n_old:
        H_ext = ad.concat([s.H, ad.zeros((n_rows - n_old, D), dtype=dtype)], axis=0)
    upd = np.unique(np.concatenate([to_rows, from_rows]))
    upd_query = row_query[upd]
    attended = ad.scale_rows(ad.matmul(ad.gather(full_states, row_node[upd]), params["agnn.W"]),
                             ad.gather(a_next, upd))
    upd_in = ad.concat([
        ad.gather(H_ext, upd),
        ad.gather(pooled, upd),
        attended,
        ad.gather(ctx.q_head, upd_query),
        ad.gather(ctx.q_rel, upd_query),
    ])
    delta = mlp2(upd_in, params, "agnn.upd", slope)
    H_next = ad.add(H_ext, ad.segment_sum(delta, upd, n_rows))

    out = SubgraphState(n_ent, ctx, row_query, row_node, H_next, a_next, s.step + 1,
                        s.record, s.traces, s.message_counts)
    if s.record:
        _record_step(out, from_rows, from_query, se, e_query, cand_query[to_idx], cand_node[to_idx],
                     msg_e, s.row_node)
    return out


def _record_step(s: SubgraphState, from_rows, from_query, se, e_query, to_query, to_node, msg_e,
                 old_row_node) -> None:
    a = s.attention.data
    edges = list(zip(e_query.tolist(), se.src.tolist(), se.rel.tolist(), se.dst.tolist(), se.eid.tolist()))
    msg_set = set(msg_e.tolist())
    per_q_edges: dict[int, list] = {}
    per_q_msgs: dict[int, list] = {}
    for i, (q, src, rel, dst, eid) in enumerate(edges):
        per_q_edges.setdefault(q, []).append((src, rel, dst, eid))
        if i in msg_set:
            per_q_msgs.setdefault(q, []).append((src, rel, dst, eid))
    per_q_from: dict[int, list] = {}
    for q, v in zip(from_query.tolist(), old_row_node[from_rows].tolist()):
        per_q_from.setdefault(q, []).append(v)
    per_q_to: dict[int, list] = {}
    for q, v in zip(to_query.tolist(), to_node.tolist()):
        per_q_to.setdefault(q, []).append(v)
    per_q_att: dict[int, dict] = {}
    for q, v, x in zip(s.row_query.tolist(), s.row_node.tolist(), a.tolist()):
        if x > 0:
            per_q_att.setdefault(q, {})[v] = x
    for q, tr in enumerate(s.traces):
        tr.frontiers.append(ExpansionFrontier(per_q_from.get(q, []), per_q_edges.get(q, []),
                                              per_q_to.get(q, []), per_q_msgs.get(q, [])))
        tr.attention.append(per_q_att.get(q, {}))
        seen = set(tr.visited)
        tr.visited.extend(v for v in per_q_to.get(q, []) if v not in seen)


def run_agnn(g: KnowledgeGraph, full_states: Tensor, params: ModelParams, heads, rels,
             horizons: Horizons, mask: np.ndarray | None, rng: np.random.Generator,
             slope: float = 0.2, record: bool = False) -> SubgraphState:
    """Run ``horizons.n_steps`` pruned steps for a batch of (head, rel) queries.

    The final attention of each query is its distribution over tails.
    """
    ctx = QueryContext.build(params, heads, rels)
    state = init_subgraph(ctx, full_states, g.n_entities, record)
    for _ in range(horizons.n_steps):
        state = agnn_step(state, full_states, params, g, horizons, mask, rng, slope)
    return state
