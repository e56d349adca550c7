import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpmpn import ignn
from dpmpn.agnn import QueryContext, agnn_step, init_subgraph, run_agnn
from dpmpn.expansion import Horizons, expansion_bound
from dpmpn.graph import build_graph, mask_for_batch, triples_from_lists
from dpmpn.params import ModelParams
from dpmpn.synthetic import random_kg


def _params(g, D=6, A=3, seed=0, scale=0.5):
    return ModelParams.init(g.n_entities, g.n_relations, D, A, np.random.default_rng(seed),
                            init_scale=scale, dtype=np.float64)


def test_init_subgraph():
    g = build_graph(random_kg(8, 2, 15, seed=1))
    p = _params(g)
    H = ignn.run_ignn(g, p, 1, 100, np.random.default_rng(0)).states
    ctx = QueryContext.build(p, [3, 5], [0, 1])
    s = init_subgraph(ctx, H, g.n_entities, record=True)
    assert s.visited(0) == [3] and s.visited(1) == [5]
    assert np.array_equal(s.H.data[0], H.data[3])
    assert s.attention.data.tolist() == [1.0, 1.0]
    assert s.traces[0].frontiers == []


def test_query_out_of_range():
    g = build_graph(random_kg(8, 2, 15, seed=1))
    with pytest.raises(IndexError):
        QueryContext.build(_params(g), [99], [0])


def test_chain_one_step():
    g = build_graph(triples_from_lists([("h", "r", "x"), ("x", "r", "y")]), add_inverse=False)
    p = _params(g)
    s = run_agnn(g, p["ent_emb"], p, [0], [0], Horizons(1, 2, 2, 1), None, np.random.default_rng(0))
    assert s.visited(0) == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_growth_and_normalization(seed):
    rng = np.random.default_rng(seed)
    ts = random_kg(20, 3, 45, seed=seed)
    g = build_graph(ts)
    hz = Horizons(*(int(x) for x in rng.integers(1, 6, size=3)), int(rng.integers(1, 5)))
    p = _params(g, seed=seed)
    batch = ts.triples[:3]
    s = init_subgraph(QueryContext.build(p, batch[:, 0], batch[:, 1]), p["ent_emb"], g.n_entities)
    mask = mask_for_batch(g, batch, "remove_batch")
    prev = s.visited_counts()
    for _ in range(hz.n_steps):
        s = agnn_step(s, p["ent_emb"], p, g, hz, mask, rng)
        cnt = s.visited_counts()
        assert np.all(cnt - prev <= min(hz.n_from * hz.n_sample, hz.n_to))
        prev = cnt
        a = s.attention.data
        assert np.all(a >= 0)
        sums = np.bincount(s.row_query, weights=a, minlength=3)
        assert np.allclose(sums, 1, atol=1e-6)
    assert np.all(prev <= expansion_bound(hz))


def test_residual_identity_with_zero_update():
    ts = random_kg(10, 2, 20, seed=3)
    g = build_graph(ts)
    p = _params(g)
    for k in ("agnn.upd.w1", "agnn.upd.w2", "agnn.upd.b2"):
        p[k].data[:] = 0
    hz = Horizons(3, 4, 4, 1)
    s0 = init_subgraph(QueryContext.build(p, [0], [0]), p["ent_emb"], g.n_entities)
    s1 = agnn_step(s0, p["ent_emb"], p, g, hz, None, np.random.default_rng(0))
    assert np.array_equal(s1.H.data[0], s0.H.data[0])
    # new rows start from zero state and stay there
    assert np.all(s1.H.data[1:] == 0)


def test_deterministic_prediction():
    ts = random_kg(15, 3, 40, seed=8)
    g = build_graph(ts)
    p = _params(g)
    hz = Horizons(3, 5, 5, 3)
    runs = [run_agnn(g, p["ent_emb"], p, [0, 4], [0, 1], hz, None, np.random.default_rng(9))
            for _ in range(2)]
    for q in (0, 1):
        n1, a1 = runs[0].prediction_arrays(q)
        n2, a2 = runs[1].prediction_arrays(q)
        assert np.array_equal(n1, n2) and np.array_equal(a1, a2)


def test_batch_queries_independent():
    ts = random_kg(15, 3, 40, seed=4)
    g = build_graph(ts)
    p = _params(g)
    hz = Horizons(3, 50, 50, 3)  # no sampling randomness at these caps
    both = run_agnn(g, p["ent_emb"], p, [0, 4], [0, 1], hz, None, np.random.default_rng(0))
    alone = run_agnn(g, p["ent_emb"], p, [4], [1], hz, None, np.random.default_rng(0))
    n1, a1 = both.prediction_arrays(1)
    n2, a2 = alone.prediction_arrays(0)
    o1, o2 = np.argsort(n1), np.argsort(n2)
    assert np.array_equal(n1[o1], n2[o2])
    assert np.allclose(a1[o1], a2[o2], atol=1e-12)


def test_masked_edge_absent_from_trace():
    ts = random_kg(12, 2, 30, seed=6)
    g = build_graph(ts)
    p = _params(g)
    batch = ts.triples[:4]
    mask = mask_for_batch(g, batch, "remove_batch")
    hidden = set(np.flatnonzero(~mask).tolist())
    s = run_agnn(g, p["ent_emb"], p, batch[:, 0], batch[:, 1], Horizons(5, 10, 10, 4), mask,
                 np.random.default_rng(0), record=True)
    for tr in s.traces:
        for fr in tr.frontiers:
            assert not hidden & {e for *_, e in fr.sampled_edges}


def test_trace_consistency():
    ts = random_kg(12, 2, 30, seed=2)
    g = build_graph(ts)
    p = _params(g)
    s = run_agnn(g, p["ent_emb"], p, [0], [0], Horizons(3, 4, 4, 3), None, np.random.default_rng(0),
                 record=True)
    tr = s.traces[0]
    assert tr.n_steps == 3 and len(tr.attention) == 4
    assert sorted(tr.visited) == s.visited(0)
    for fr in tr.frontiers:
        assert len(fr.attending_from) <= 3
        assert len(fr.attending_to) <= 4
        assert set(d for *_, d, _ in fr.message_edges) <= set(fr.attending_to)
    assert tr.prediction() == max(tr.attention[-1], key=lambda v: (tr.attention[-1][v], -v))
