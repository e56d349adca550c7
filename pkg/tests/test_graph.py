import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpmpn.graph import (DataError, MASK_MODES, build_graph, dataset_stats, load_splits, load_triples,
                         TripleSet, mask_for_batch, multi_edge_fraction, neighbors,
                         shortest_path_length,
                         triples_from_lists, undirected_adjacency)
from dpmpn.synthetic import random_kg

from conftest import write_triples


def test_load_counts(tmp_path):
    ts = load_triples(write_triples(tmp_path / "t.txt", [("a", "r", "b"), ("b", "r", "c")]))
    assert ts.n_entities == 3
    assert ts.n_relations == 1
    assert len(ts) == 2


def test_load_dedup(tmp_path, caplog):
    ts = load_triples(write_triples(tmp_path / "t.txt", [("a", "r", "b"), ("a", "r", "b")]))
    assert len(ts) == 1
    assert ts.n_duplicates == 1
    assert "duplicate" in caplog.text


def test_load_malformed_names_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("a\tr\tb\nonly two\tfields\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        load_triples(p)


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_triples(tmp_path / "nope.txt")


def test_splits_share_ids(tmp_path):
    tr = write_triples(tmp_path / "train.txt", [("a", "r", "b")])
    va = write_triples(tmp_path / "valid.txt", [("b", "s", "c")])
    train, valid, test = load_splits(tr, va)
    assert test is None
    assert train.entity_names == ["a", "b", "c"]
    assert valid.triples.tolist() == [[1, 1, 2]]


def test_edge_counts():
    ts = triples_from_lists([("a", "r", "b"), ("b", "r", "c")])
    assert build_graph(ts).n_edges == 7
    assert build_graph(ts, add_inverse=False).n_edges == 5


def test_inverse_edges_present():
    ts = random_kg(12, 3, 30, seed=2)
    g = build_graph(ts)
    for h, r, t in ts.triples.tolist():
        assert g.edge_id(t, r + ts.n_relations, h) is not None
        assert g.inverse_relation(r) == r + ts.n_relations


def test_csr_slices_sorted():
    g = build_graph(random_kg(15, 2, 40, seed=5))
    for v in range(g.n_entities):
        lo, hi = g.offsets[v], g.offsets[v + 1]
        assert np.all(g.src[lo:hi] == v)
        keys = list(zip(g.rel[lo:hi].tolist(), g.dst[lo:hi].tolist()))
        assert keys == sorted(keys)


def test_isolated_node_self_loop_only():
    ts = triples_from_lists([("a", "r", "b")])
    g = build_graph(ts, n_entities=3)
    assert neighbors(g, 2) == [(g.self_loop_rel, 2, int(g.self_loop_edge[2]))]


def test_neighbors_contains_tail():
    ts = triples_from_lists([("a", "r", "b")])
    g = build_graph(ts)
    assert (0, 1) in [(r, d) for r, d, _ in neighbors(g, 0)]


def test_neighbors_mask_keeps_self_loop():
    ts = triples_from_lists([("a", "r", "b")])
    g = build_graph(ts)
    mask = mask_for_batch(g, [(0, 0, 1)], "remove_batch")
    got = neighbors(g, 0, mask)
    assert (0, 1) not in [(r, d) for r, d, _ in got]
    assert (g.self_loop_rel, 0) in [(r, d) for r, d, _ in got]


def test_neighbors_out_of_range(chain_graph):
    with pytest.raises(IndexError):
        neighbors(chain_graph, 99)


def test_remove_batch_rule():
    ts = triples_from_lists([("a", "r", "b"), ("b", "s", "a"), ("b", "r", "c")])
    g = build_graph(ts)
    mask = mask_for_batch(g, [(0, 0, 1)], "remove_batch")
    off = {(int(g.src[e]), int(g.rel[e]), int(g.dst[e])) for e in np.flatnonzero(~mask)}
    assert off == {(0, 0, 1), (1, 0 + 2, 0)}


def test_cutoff_pairs_rule():
    ts = triples_from_lists([("a", "r", "b"), ("b", "s", "a"), ("b", "r", "c")])
    g = build_graph(ts, add_inverse=False)
    mask = mask_for_batch(g, [(0, 0, 1)], "cutoff_pairs")
    off = {(int(g.src[e]), int(g.rel[e]), int(g.dst[e])) for e in np.flatnonzero(~mask)}
    assert off == {(0, 0, 1), (1, 1, 0)}
    # with inverses, every edge between a and b goes
    g2 = build_graph(ts)
    m2 = mask_for_batch(g2, [(0, 0, 1)], "cutoff_pairs")
    assert int((~m2).sum()) == 4


@pytest.mark.parametrize("mode", MASK_MODES)
def test_empty_batch_identity(mode, chain_graph):
    assert mask_for_batch(chain_graph, np.zeros((0, 3), dtype=np.int64), mode).all()


def test_unknown_mask_mode(chain_graph):
    with pytest.raises(ValueError):
        mask_for_batch(chain_graph, [(0, 0, 1)], "bogus")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_masks_never_hide_self_loops_and_nest(seed):
    ts = random_kg(10, 3, 25, seed=seed)
    g = build_graph(ts)
    rng = np.random.default_rng(seed)
    batch = ts.triples[rng.choice(len(ts), size=3, replace=False)]
    rb = mask_for_batch(g, batch, "remove_batch")
    cp = mask_for_batch(g, batch, "cutoff_pairs")
    assert rb[g.is_self_loop].all() and cp[g.is_self_loop].all()
    # cutting whole pairs hides a superset of what remove_batch hides
    assert np.all(cp <= rb)


def test_pme_two_relations_same_pair():
    tr = np.array([[0, 0, 1], [0, 1, 1]])
    assert multi_edge_fraction(tr, None, 2) == 1.0


def test_pme_brute_force():
    for seed in range(20):
        ts = random_kg(8, 3, 15, seed=seed)
        tr = ts.triples
        q = random_kg(8, 3, 6, seed=seed + 100).triples
        want_tr = np.mean([any(j != i and {tr[j, 0], tr[j, 2]} == {tr[i, 0], tr[i, 2]}
                                for j in range(len(tr))) for i in range(len(tr))])
        want_q = np.mean([any(tuple(row) != tuple(q[i]) and {row[0], row[2]} == {q[i, 0], q[i, 2]}
                               for row in tr.tolist()) for i in range(len(q))])
        assert multi_edge_fraction(tr, None, 8) == pytest.approx(want_tr)
        assert multi_edge_fraction(tr, q, 8) == pytest.approx(want_q)


def test_path_length_direct_link():
    tr = triples_from_lists([("a", "r", "b"), ("b", "r", "c")])
    va = np.array([[0, 0, 1]])
    adj = undirected_adjacency(tr.triples, 3)
    assert shortest_path_length(adj, 0, 1) == 1
    assert shortest_path_length(adj, 2, 0) == 2
    st_ = dataset_stats(tr, TripleSet(va, tr.entity_names, tr.relation_names))
    assert st_.al_valid == 1.0


def test_path_length_disconnected():
    tr = np.array([[0, 0, 1], [2, 0, 3]])
    adj = undirected_adjacency(tr, 4)
    assert shortest_path_length(adj, 0, 3) is None


def test_path_length_matches_dict_bfs():
    for seed in range(10):
        ts = random_kg(20, 2, 25, seed=seed)
        adj = undirected_adjacency(ts.triples, 20)
        nbr = {v: set() for v in range(20)}
        for h, _, t in ts.triples.tolist():
            nbr[h].add(t)
            nbr[t].add(h)
        for s in range(0, 20, 4):
            dist = {s: 0}
            frontier = [s]
            while frontier:
                nxt = []
                for v in frontier:
                    for u in nbr[v]:
                        if u not in dist:
                            dist[u] = dist[v] + 1
                            nxt.append(u)
                frontier = nxt
            for t in range(20):
                assert shortest_path_length(adj, s, t) == dist.get(t)


def test_stats_lines():
    ts = triples_from_lists([("a", "r", "b"), ("a", "s", "b"), ("b", "r", "c")])
    st_ = dataset_stats(ts, None)
    lines = st_.to_lines()
    assert "n_entities=3" in lines and "n_relations=2" in lines and "n_train=3" in lines
    assert st_.pme_train == pytest.approx(2 / 3)
