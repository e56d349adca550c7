"""Input-agnostic full-graph message passing.

One run produces node states shared by every query of a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import KnowledgeGraph
from .params import ModelParams, mlp2

# incremented on every run_ignn call; tests use it to confirm one run per batch
CALL_COUNT = 0


@dataclass
class FullNodeStates:
    states: Tensor  # n_entities x D
    step: int


def sample_edge_set(g: KnowledgeGraph, cap: int, rng: np.random.Generator,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Uniform sample of at most ``cap`` usable edges, without replacement, sorted."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    pool = np.arange(g.n_edges) if mask is None else np.flatnonzero(mask)
    if cap >= len(pool):
        return pool
    return np.sort(rng.choice(pool, size=cap, replace=False))


def compute_messages(states: Tensor, g: KnowledgeGraph, edges: np.ndarray, params: ModelParams,
                     slope: float = 0.2) -> Tensor:
    """One message per edge: MLP([H_src, e_rel, H_dst])."""
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= g.n_edges):
        raise IndexError("edge id out of range")
    x = ad.concat([
        ad.gather(states, g.src[edges]),
        ad.gather(params["rel_emb"], g.rel[edges]),
        ad.gather(states, g.dst[edges]),
    ], axis=1)
    return mlp2(x, params, "ignn.msg", slope)


def aggregate_scaled(messages: Tensor, dst, n_nodes: int) -> Tensor:
    """Sum incoming messages per node and divide by sqrt(message count)."""
    dst = np.asarray(dst, dtype=np.int64)
    summed = ad.segment_sum(messages, dst, n_nodes)
    count = ad.segment_count(dst, n_nodes).astype(messages.dtype)
    inv = np.where(count > 0, 1.0 / np.sqrt(np.maximum(count, 1)), 0.0).astype(messages.dtype)
    return ad.scale_rows(summed, ad.constant(inv, dtype=messages.dtype))


def update_states(states: Tensor, pooled: Tensor, params: ModelParams, slope: float = 0.2) -> Tensor:
    """Residual update of every node: H + MLP([H, M, e_v])."""
    x = ad.concat([states, pooled, params["ent_emb"]], axis=1)
    return ad.add(states, mlp2(x, params, "ignn.upd", slope))


def ignn_step(states: Tensor, g: KnowledgeGraph, params: ModelParams, edges: np.ndarray,
              slope: float = 0.2) -> Tensor:
    msgs = compute_messages(states, g, edges, params, slope)
    pooled = aggregate_scaled(msgs, g.dst[edges], g.n_entities)
    return update_states(states, pooled, params, slope)


def run_ignn(g: KnowledgeGraph, params: ModelParams, n_steps: int, edge_cap: int,
             rng: np.random.Generator, mask: np.ndarray | None = None,
             slope: float = 0.2) -> FullNodeStates:
    """Run ``n_steps`` of full message passing; zero steps returns the embeddings."""
    global CALL_COUNT
    CALL_COUNT += 1
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    H = params["ent_emb"]
    for _ in range(n_steps):
        edges = sample_edge_set(g, edge_cap, rng, mask)
        H = ignn_step(H, g, params, edges, slope)
    return FullNodeStates(H, n_steps)
