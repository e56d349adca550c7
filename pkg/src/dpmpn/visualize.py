"""Graphviz DOT rendering of one query's attention subgraph."""

from __future__ import annotations

from .agnn import QueryTrace
from .graph import KnowledgeGraph

_YELLOW = (255, 221, 0)
_RED = (214, 39, 40)
_GREY = "#bbbbbb"


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _ramp(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    r, g, b = (round(a + (c - a) * frac) for a, c in zip(_YELLOW, _RED))
    return f"#{r:02x}{g:02x}{b:02x}"


def peak_attention(trace: QueryTrace) -> dict[int, tuple[float, int]]:
    """node -> (peak attention, first step reaching it) over a^0 .. a^T."""
    peak: dict[int, tuple[float, int]] = {v: (0.0, 0) for v in trace.visited}
    for t, a in enumerate(trace.attention):
        for v, x in a.items():
            if x > peak.get(v, (0.0, 0))[0]:
                peak[v] = (x, t)
    return peak


def export_dot(trace: QueryTrace, prune_threshold: float = 0.0, g: KnowledgeGraph | None = None,
               grey_threshold: float | None = None, name: str = "subgraph") -> str:
    """DOT text for the pruned subgraph of ``trace``.

    Kept nodes: the head, the predicted tail, and every visited node whose
    peak attention reaches ``prune_threshold``.  Nodes are coloured yellow to
    red by the step of their peak, or grey when the peak is below
    ``grey_threshold`` (defaults to ``prune_threshold``).  Edges are the
    message-passing edges between kept nodes, self-loops left out.
    """
    grey_threshold = prune_threshold if grey_threshold is None else grey_threshold
    peak = peak_attention(trace)
    head = trace.head
    tail = trace.prediction()
    keep = {v for v, (x, _) in peak.items() if x >= prune_threshold}
    keep |= {head, tail}
    n_steps = max(trace.n_steps, 1)

    def ent(v: int) -> str:
        return g.entity_name(v) if g is not None else str(v)

    def rel(r: int) -> str:
        return g.relation_name(r) if g is not None else f"r{r}"

    lines = [f"digraph {_quote(name)} {{", "  rankdir=LR;",
             '  node [shape=circle, style=filled, fontsize=10];']
    for v in sorted(keep):
        x, t = peak.get(v, (0.0, 0))
        label = _quote(ent(v))
        if v == head:
            attrs = f'label={label}, fillcolor="{_ramp(0.0)}", width=1.2, penwidth=3'
        elif v == tail:
            attrs = f'label={label}, fillcolor="{_ramp(1.0)}", width=1.2, penwidth=3'
        elif x < grey_threshold:
            attrs = f'label={label}, fillcolor="{_GREY}"'
        else:
            attrs = f'label={label}, fillcolor="{_ramp(t / n_steps)}"'
        lines.append(f"  n{v} [{attrs}, tooltip=\"{x:.6g}\"];")

    edges = set()
    for fr in trace.frontiers:
        for src, r, dst, _eid in fr.message_edges:
            if src != dst and src in keep and dst in keep:
                edges.add((src, dst, r))
    for src, dst, r in sorted(edges):
        lines.append(f"  n{src} -> n{dst} [label={_quote(rel(r))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
