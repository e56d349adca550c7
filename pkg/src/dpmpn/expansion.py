"""Subgraph expansion: boundaries, per-node neighbor sampling, and the
node-count bounds for consecutively expanding subgraphs.

The Monte-Carlo checks here work on plain undirected adjacency lists so they
stay independent of the model code they are meant to cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .graph import KnowledgeGraph


@dataclass(frozen=True)
class Horizons:
    n_from: int  # max attending-from nodes per step (N1)
    n_sample: int  # max sampled out-edges per node (N2)
    n_to: int  # max attending-to nodes per step (N3)
    n_steps: int  # AGNN steps (T)

    def __post_init__(self):
        for name in ("n_from", "n_sample", "n_to", "n_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class SampledEdges:
    """Edges drawn for a list of source slots.

    ``slot[i]`` is the position (in the ``from_nodes`` argument) of edge i's
    source, so callers can attach per-source data such as query ids.
    """

    slot: np.ndarray
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    eid: np.ndarray

    def __len__(self) -> int:
        return len(self.eid)


@dataclass
class ExpansionFrontier:
    attending_from: list[int]
    sampled_edges: list[tuple[int, int, int, int]]
    attending_to: list[int]
    message_edges: list[tuple[int, int, int, int]] = field(default_factory=list)


def boundary(g: KnowledgeGraph, nodes, mask: np.ndarray | None = None) -> set[int]:
    """Out-neighbors of ``nodes`` that are not in ``nodes``."""
    nodes = set(int(v) for v in nodes)
    out: set[int] = set()
    for v in nodes:
        lo, hi = g.offsets[v], g.offsets[v + 1]
        dst = g.dst[lo:hi]
        if mask is not None:
            dst = dst[mask[lo:hi]]
        out.update(dst.tolist())
    return out - nodes


def sample_neighbors(g: KnowledgeGraph, from_nodes, per_node_cap: int, mask: np.ndarray | None,
                     rng: np.random.Generator, keep_self_loop: bool = True) -> SampledEdges:
    """Draw at most ``per_node_cap`` usable out-edges per source, uniformly
    without replacement.  With ``keep_self_loop`` the source's self-loop is
    always part of its sample (and counts toward the cap)."""
    if per_node_cap < 1:
        raise ValueError("per_node_cap must be >= 1")
    nodes = np.asarray(from_nodes, dtype=np.int64)
    starts, ends = g.offsets[nodes], g.offsets[nodes + 1]
    lengths = ends - starts
    total = int(lengths.sum())
    slot = np.repeat(np.arange(len(nodes)), lengths)
    base = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    eid = base + np.arange(total)
    if mask is not None:
        keep = mask[eid]
        eid, slot = eid[keep], slot[keep]
    keys = rng.random(len(eid))
    if keep_self_loop:
        keys[g.is_self_loop[eid]] = -1.0
    order = np.lexsort((keys, slot))
    eid, slot = eid[order], slot[order]
    # rank within slot
    first = np.searchsorted(slot, slot, side="left")
    rank = np.arange(len(slot)) - first
    sel = rank < per_node_cap
    eid, slot = eid[sel], slot[sel]
    # canonical order: by slot, then edge id
    order = np.lexsort((eid, slot))
    eid, slot = eid[order], slot[order]
    return SampledEdges(slot, g.src[eid], g.rel[eid], g.dst[eid], eid)


def expansion_bound(h: Horizons) -> int:
    return 1 + h.n_steps * min(h.n_from * h.n_sample, h.n_to)


def proposition_bound(d: int, t: int) -> tuple[int, Fraction]:
    """Size bound and probability exponent for t-step consecutive expansion
    on a graph whose degrees are at most d (with probability p each).

    Returns (size, exponent): P(|V_t| <= size) > p ** exponent.
    """
    if d < 3:
        raise ValueError("degree bound d must be >= 3 (use degree_two_bound for d=2)")
    if t < 1:
        raise ValueError("t must be >= 1")
    size = Fraction(d * (d - 1) ** t - 2, d - 2)
    expo = Fraction(d * (d - 1) ** (t - 1) - 2, d - 2)
    assert size.denominator == 1
    return int(size), expo


def degree_two_bound(t: int) -> int:
    """With degrees <= 2 the ball of radius t has at most 1 + 2t nodes."""
    return 1 + 2 * t


def size_bound(d: int, t: int) -> int:
    if t == 0:
        return 1
    if d <= 1:
        return 1 + d
    if d == 2:
        return degree_two_bound(t)
    return proposition_bound(d, t)[0]


# ------------------------------------------------------------ Monte-Carlo harness

def random_bounded_degree_graph(n: int, d: int, rng: np.random.Generator,
                                density: float = 1.0) -> list[set[int]]:
    """Random simple undirected graph on n nodes with every degree <= d."""
    adj: list[set[int]] = [set() for _ in range(n)]
    attempts = int(density * n * d)
    for _ in range(attempts):
        u, v = rng.integers(0, n, size=2)
        u, v = int(u), int(v)
        if u == v or v in adj[u] or len(adj[u]) >= d or len(adj[v]) >= d:
            continue
        adj[u].add(v)
        adj[v].add(u)
    return adj


def complete_bipartite(d: int) -> list[set[int]]:
    left = range(d)
    right = range(d, 2 * d)
    adj: list[set[int]] = [set() for _ in range(2 * d)]
    for u in left:
        for v in right:
            adj[u].add(v)
            adj[v].add(u)
    return adj


def regular_tree(d: int, depth: int) -> list[set[int]]:
    """Tree where the root has d children and every inner node d-1 children,
    i.e. the extremal graph for the size bound."""
    adj: list[set[int]] = [set()]
    level = [0]
    for lvl in range(depth):
        nxt = []
        for u in level:
            kids = d if lvl == 0 else d - 1
            for _ in range(kids):
                v = len(adj)
                adj.append({u})
                adj[u].add(v)
                nxt.append(v)
        level = nxt
    return adj


def adj_boundary(adj: list[set[int]], nodes: set[int]) -> set[int]:
    out: set[int] = set()
    for v in nodes:
        out |= adj[v]
    return out - nodes


def greedy_expansion(adj: list[set[int]], root: int, t: int) -> set[int]:
    """G^t = G^{t-1} plus its whole boundary, starting from {root}."""
    nodes = {root}
    for _ in range(t):
        nodes |= adj_boundary(adj, nodes)
    return nodes


@dataclass
class PropositionReport:
    d: int
    t: int
    trials: int
    bound: int
    violations: int
    max_size: int
    mean_size: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} d={self.d} t={self.t} trials={self.trials} bound={self.bound} "
                f"violations={self.violations} max_size={self.max_size} mean_size={self.mean_size:.3f}")


def validate_proposition(d: int, t: int, trials: int, rng: np.random.Generator,
                         n_nodes: int = 60) -> PropositionReport:
    """Greedy expansion on random max-degree-d graphs (the p = 1 regime);
    counts runs whose node count exceeds the size bound."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    bound = size_bound(d, t)
    violations = 0
    sizes = []
    for _ in range(trials):
        adj = random_bounded_degree_graph(n_nodes, d, rng)
        root = int(rng.integers(0, n_nodes))
        size = len(greedy_expansion(adj, root, t))
        sizes.append(size)
        violations += size > bound
    return PropositionReport(d, t, trials, bound, violations, max(sizes), float(np.mean(sizes)))


@dataclass
class StrategyIncrements:
    """Increments of the four sampling strategies built from one shared sample."""

    full_boundary: set[int]  # boundary of G
    s1: set[int]  # sampled from the boundary of G
    s2: set[int]  # boundary of sampled nodes
    s3: set[int]  # per-node sampled neighbors of sampled nodes
    s4: set[int]  # resampled subset of s3
    sampled_nodes: set[int]


def strategy_increments(adj: list[set[int]], current: set[int], n_from: int, n_sample: int,
                        n_to: int, rng: np.random.Generator) -> StrategyIncrements:
    cur = sorted(current)
    full = adj_boundary(adj, current)
    s1 = set(_choose(sorted(full), n_to, rng))
    picked = set(_choose(cur, n_from, rng))
    s2 = adj_boundary(adj, picked)
    s3: set[int] = set()
    for v in sorted(picked):
        cand = sorted(adj[v] & s2)
        s3.update(_choose(cand, n_sample, rng))
    s4 = set(_choose(sorted(s3), n_to, rng))
    return StrategyIncrements(full, s1, s2, s3, s4, picked)


def _choose(items: list[int], k: int, rng: np.random.Generator) -> list[int]:
    if len(items) <= k:
        return list(items)
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[i] for i in sorted(idx)]


def check_strategy_nesting(trials: int, rng: np.random.Generator, n_nodes: int = 40, d: int = 6
                           ) -> int:
    """Number of trials where the nesting chain
    s4 <= s3 <= s2,  G | s2 <= G | boundary(G),  s1 <= boundary(G),
    |s4| <= min(N1*N2, N3)  fails.  Expected 0."""
    failures = 0
    for _ in range(trials):
        adj = random_bounded_degree_graph(n_nodes, d, rng)
        root = int(rng.integers(0, n_nodes))
        current = greedy_expansion(adj, root, int(rng.integers(0, 3)))
        n1, n2, n3 = (int(x) for x in rng.integers(1, 6, size=3))
        inc = strategy_increments(adj, current, n1, n2, n3, rng)
        ok = (inc.s4 <= inc.s3 <= inc.s2
              and (current | inc.s2) <= (current | inc.full_boundary)
              and inc.s1 <= inc.full_boundary
              and len(inc.s4) <= min(n1 * n2, n3))
        failures += not ok
    return failures
