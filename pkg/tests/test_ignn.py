import numpy as np
import pytest

from dpmpn import autodiff as ad
from dpmpn import ignn
from dpmpn.graph import build_graph, mask_for_batch, triples_from_lists
from dpmpn.params import ModelParams
from dpmpn.synthetic import random_kg


def _leaky(x, s=0.2):
    return np.where(x > 0, x, s * x)


def _mlp2(x, p, prefix):
    h = _leaky(x @ p[f"{prefix}.w1"].data + p[f"{prefix}.b1"].data)
    return np.tanh(h @ p[f"{prefix}.w2"].data + p[f"{prefix}.b2"].data)


@pytest.fixture
def setup():
    ts = random_kg(12, 3, 30, seed=7)
    g = build_graph(ts)
    params = ModelParams.init(g.n_entities, g.n_relations, 6, 3, np.random.default_rng(0),
                              init_scale=0.5, dtype=np.float64)
    return g, params


def test_sample_saturates(setup):
    g, _ = setup
    assert ignn.sample_edge_set(g, g.n_edges + 5, np.random.default_rng(0)).tolist() == list(range(g.n_edges))


def test_sample_single_reproducible():
    g = build_graph(triples_from_lists([("a", "r", "b"), ("b", "r", "a")]), add_inverse=False,
                    add_self_loops=False)
    a = ignn.sample_edge_set(g, 1, np.random.default_rng(5))
    b = ignn.sample_edge_set(g, 1, np.random.default_rng(5))
    assert len(a) == 1 and a.tolist() == b.tolist()


def test_sample_uniform(setup):
    g, _ = setup
    rng = np.random.default_rng(11)
    trials, cap = 10_000, 5
    counts = np.zeros(g.n_edges)
    for _ in range(trials):
        e = ignn.sample_edge_set(g, cap, rng)
        assert len(np.unique(e)) == cap
        counts[e] += 1
    p = cap / g.n_edges
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(counts - trials * p) < 3.5 * sigma)


def test_sample_respects_mask(setup):
    g, _ = setup
    mask = np.zeros(g.n_edges, dtype=bool)
    mask[::3] = True
    e = ignn.sample_edge_set(g, 1000, np.random.default_rng(0), mask)
    assert mask[e].all() and len(e) == mask.sum()


def test_zero_weights_zero_messages(setup):
    g, params = setup
    for k in ("ignn.msg.w1", "ignn.msg.w2"):
        params[k].data[:] = 0
    m = ignn.compute_messages(params["ent_emb"], g, np.arange(g.n_edges), params)
    assert np.all(m.data == 0)


def test_single_message_oracle(setup):
    g, params = setup
    e = 4
    m = ignn.compute_messages(params["ent_emb"], g, np.array([e]), params).data[0]
    E = params["ent_emb"].data
    x = np.concatenate([E[g.src[e]], params["rel_emb"].data[g.rel[e]], E[g.dst[e]]])
    assert np.allclose(m, _mlp2(x[None], params, "ignn.msg")[0], atol=1e-6)


def test_messages_bounded(setup):
    g, params = setup
    m = ignn.compute_messages(params["ent_emb"], g, np.arange(g.n_edges), params).data
    assert np.all(np.abs(m) < 1)


def test_aggregate_examples():
    out = ignn.aggregate_scaled(ad.constant([[3.0]]), [1], 3).data
    assert out.tolist() == [[0.0], [3.0], [0.0]]
    out = ignn.aggregate_scaled(ad.constant([[2.0], [4.0]]), [0, 0], 1).data
    assert out[0, 0] == pytest.approx(6 / np.sqrt(2))


def test_update_residual_identity(setup):
    g, params = setup
    for k in ("ignn.upd.w1", "ignn.upd.w2", "ignn.upd.b2"):
        params[k].data[:] = 0
    H = params["ent_emb"]
    out = ignn.update_states(H, ad.constant(np.ones(H.shape)), params)
    assert np.array_equal(out.data, H.data)


def test_one_step_oracle(setup):
    g, params = setup
    edges = np.arange(g.n_edges)
    got = ignn.ignn_step(params["ent_emb"], g, params, edges).data
    E = params["ent_emb"].data
    R = params["rel_emb"].data
    x = np.concatenate([E[g.src], R[g.rel], E[g.dst]], axis=1)
    msgs = _mlp2(x, params, "ignn.msg")
    pooled = np.zeros_like(E)
    cnt = np.zeros(len(E))
    for i, v in enumerate(g.dst):
        pooled[v] += msgs[i]
        cnt[v] += 1
    pooled /= np.sqrt(np.maximum(cnt, 1))[:, None]
    want = E + _mlp2(np.concatenate([E, pooled, E], axis=1), params, "ignn.upd")
    assert np.allclose(got, want, atol=1e-6)


def test_update_touches_nodes_without_messages(setup):
    g, params = setup
    out = ignn.ignn_step(params["ent_emb"], g, params, np.array([0])).data
    changed = np.any(out != params["ent_emb"].data, axis=1)
    assert changed.sum() == g.n_entities


def test_zero_steps_is_embedding(setup):
    g, params = setup
    out = ignn.run_ignn(g, params, 0, 100, np.random.default_rng(0))
    assert np.array_equal(out.states.data, params["ent_emb"].data)


def test_run_deterministic(setup):
    g, params = setup
    a = ignn.run_ignn(g, params, 2, 10, np.random.default_rng(3)).states.data
    b = ignn.run_ignn(g, params, 2, 10, np.random.default_rng(3)).states.data
    assert np.array_equal(a, b)


def test_masked_edges_are_never_used(setup):
    g, params = setup
    batch = np.array([[int(g.src[0]), int(g.rel[0]), int(g.dst[0])]])
    mask = mask_for_batch(g, batch, "cutoff_pairs")
    dropped = np.flatnonzero(~mask)
    a = ignn.run_ignn(g, params, 2, 10_000, np.random.default_rng(0), mask).states.data
    # same result as passing over the unmasked edges only
    keep = np.flatnonzero(mask)
    H = params["ent_emb"]
    for _ in range(2):
        H = ignn.ignn_step(H, g, params, keep)
    assert np.allclose(a, H.data)
    assert len(dropped) > 0
