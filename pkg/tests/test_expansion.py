from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpmpn.expansion import (Horizons, boundary, check_strategy_nesting, complete_bipartite,
                             degree_two_bound, expansion_bound, greedy_expansion, proposition_bound,
                             random_bounded_degree_graph, regular_tree, sample_neighbors, size_bound,
                             validate_proposition)
from dpmpn.graph import build_graph, mask_for_batch, triples_from_lists
from dpmpn.synthetic import random_kg


def test_boundary_chain(chain_graph):
    assert boundary(chain_graph, {0}) == {1}
    assert boundary(chain_graph, range(chain_graph.n_entities)) == set()


def test_boundary_brute_force():
    for seed in range(50):
        ts = random_kg(10, 2, 20, seed=seed)
        g = build_graph(ts)
        rng = np.random.default_rng(seed)
        nodes = set(rng.choice(10, size=int(rng.integers(1, 6)), replace=False).tolist())
        want = {int(g.dst[e]) for e in range(g.n_edges) if int(g.src[e]) in nodes} - nodes
        assert boundary(g, nodes) == want


def test_boundary_respects_mask():
    ts = triples_from_lists([("a", "r", "b"), ("a", "s", "c")])
    g = build_graph(ts)
    mask = mask_for_batch(g, [(0, 0, 1)], "remove_batch")
    assert boundary(g, {0}, mask) == {2}


def test_sample_saturation():
    ts = triples_from_lists([("a", "r", "b"), ("a", "r", "c")])
    g = build_graph(ts, add_inverse=False)
    se = sample_neighbors(g, [0], 5, None, np.random.default_rng(0))
    assert len(se) == 3


def test_sample_hub_exact_cap():
    rows = [("hub", "r", f"x{i}") for i in range(1000)]
    g = build_graph(triples_from_lists(rows), add_inverse=False)
    se = sample_neighbors(g, [0], 200, None, np.random.default_rng(0))
    assert len(se) == 200
    assert len(set(se.eid.tolist())) == 200
    # the self-loop is always kept
    assert g.self_loop_edge[0] in se.eid


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_sample_cap_and_mask(seed, cap):
    ts = random_kg(15, 3, 50, seed=seed)
    g = build_graph(ts)
    rng = np.random.default_rng(seed)
    from_nodes = rng.choice(15, size=4, replace=False)
    mask = mask_for_batch(g, ts.triples[:3], "cutoff_pairs")
    se = sample_neighbors(g, from_nodes, cap, mask, rng)
    assert len(se) <= len(from_nodes) * cap
    assert mask[se.eid].all()
    assert np.all(g.src[se.eid] == from_nodes[se.slot])
    assert np.all(np.bincount(se.slot, minlength=4) <= cap)
    for slot, v in enumerate(from_nodes):
        assert g.self_loop_edge[v] in se.eid[se.slot == slot]


def test_expansion_bound_examples():
    assert expansion_bound(Horizons(20, 200, 200, 6)) == 1201
    assert expansion_bound(Horizons(1, 1, 5, 3)) == 4


def test_horizons_positive():
    with pytest.raises(ValueError):
        Horizons(0, 1, 1, 1)


def test_proposition_examples():
    assert proposition_bound(3, 1)[0] == 4
    assert proposition_bound(4, 3)[0] == 53 == 1 + 4 + 12 + 36
    assert proposition_bound(3, 2)[1] == Fraction(4)
    with pytest.raises(ValueError):
        proposition_bound(2, 3)
    assert size_bound(3, 0) == 1
    assert degree_two_bound(3) == size_bound(2, 3) == 7


@pytest.mark.parametrize("d", [3, 4, 5, 6])
@pytest.mark.parametrize("t", [1, 2, 3, 4])
def test_bound_is_geometric_series(d, t):
    assert size_bound(d, t) == 1 + sum(d * (d - 1) ** (k - 1) for k in range(1, t + 1))


@pytest.mark.parametrize("d", [3, 4, 5])
@pytest.mark.parametrize("t", [1, 2, 3])
def test_regular_tree_meets_bound(d, t):
    adj = regular_tree(d, t)
    assert len(greedy_expansion(adj, 0, t)) == size_bound(d, t)
    assert max(len(a) for a in adj) <= d


@pytest.mark.parametrize("d", [3, 4, 5])
def test_complete_bipartite_no_violation(d):
    adj = complete_bipartite(d)
    for t in range(0, 5):
        assert len(greedy_expansion(adj, 0, t)) <= size_bound(d, t)


def test_random_graph_degree_cap():
    adj = random_bounded_degree_graph(50, 4, np.random.default_rng(0))
    assert max(len(a) for a in adj) <= 4
    assert all(u not in adj[u] for u in range(50))


def test_validate_small():
    rep = validate_proposition(3, 3, 200, np.random.default_rng(0))
    assert rep.violations == 0 and rep.max_size <= rep.bound
    assert rep.line().startswith("PASS")


def test_nesting_small():
    assert check_strategy_nesting(50, np.random.default_rng(0)) == 0
