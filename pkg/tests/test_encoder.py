import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfm.encoder import attention_layer, build_inputs, embed_initial, encode_inputs, relation_slot
from tfm.graph import (
    EdgeAdd,
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    Relation,
    apply_events,
    empty_snapshot,
    make_state,
)
from tfm.numeric.nn import ParamView
from tfm.numeric.tensor import Tensor

from _util import random_events, small_model


def np_mlp(v, prefix, x):
    return v[f"{prefix}.w2"] @ np.maximum(v[f"{prefix}.w1"] @ x + v[f"{prefix}.b1"], 0) + v[f"{prefix}.b2"]


def np_phi(v, dt):
    w, b = v["enc.time.w"], v["enc.time.b"]
    return np.cos(w * dt + b) / math.sqrt(len(w))


def np_encode_one_layer(model, snapshot):
    """Direct evaluation of one attention layer for every node, from the stored parameters."""
    v = model.store.values()
    ids = snapshot.node_ids()
    kinds = np.array([int(snapshot.nodes[i].kind) for i in ids])
    s = model.normalize(np.array([snapshot.nodes[i].state for i in ids]), kinds)
    z0 = {i: np_mlp(v, "enc.embed", s[r]) + v["enc.kind_bias"][kinds[r]] for r, i in enumerate(ids)}
    dq = v["enc.l1.wq"].shape[0]
    out = {}
    for i in ids:
        hood = snapshot.neighborhood(i, model.config.encoder.k).neighbors
        q = v["enc.l1.wq"] @ np.concatenate([z0[i], np_phi(v, 0.0)])
        if hood:
            keys, vals = [], []
            for e in hood:
                kin = np.concatenate([z0[e.node], np_phi(v, snapshot.time - e.time)])
                keys.append(v["enc.l1.wk"] @ kin)
                vals.append(v["enc.l1.wv"] @ kin + v["enc.l1.rel"][relation_slot(e.rel, e.outgoing)])
            sc = np.array([q @ k for k in keys]) / math.sqrt(dq)
            a = np.exp(sc - sc.max())
            a /= a.sum()
            att = sum(ai * vi for ai, vi in zip(a, vals)) / len(hood)
        else:
            att = np.zeros_like(z0[i])
        out[i] = np_mlp(v, "enc.l1.mlp", np.concatenate([z0[i], att]))
    return out


def two_node_snapshot():
    veh, lane = NodeKind.VEHICLE, NodeKind.LANE
    events = [
        GraphEvent(0.0, 0, NodeAdd(3, veh, make_state(veh, [8.0, 0.5, 120.0]))),
        GraphEvent(0.0, 1, NodeAdd(9, lane, make_state(lane, [7.0, 25.0]))),
        GraphEvent(1.0, 0, EdgeAdd(InteractionEdge(3, 9, Relation.ON_LANE, 1.0))),
    ]
    s = apply_events(empty_snapshot(), events)
    return apply_events(apply_events(s, []), [])  # t_n = 3, edge age 2


# ---------------------------------------------------------------- embed_initial

def test_zero_params_give_zero_embedding():
    m = small_model()
    for p in m.store:
        p.value[...] = 0.0
    z = embed_initial(ParamView(m.store, "enc"), Tensor(np.zeros((2, 8))), np.array([0, 2]))
    assert np.all(z.data == 0.0)


def test_identical_nodes_identical_embeddings():
    m = small_model(seed=4)
    st_ = np.tile(np.array(make_state(NodeKind.VEHICLE, [3.0, 0.1, 9.0])), (2, 1))
    z = embed_initial(ParamView(m.store, "enc"), Tensor(st_), np.array([0, 0])).data
    np.testing.assert_array_equal(z[0], z[1])


def test_embedding_matches_direct_mlp():
    m = small_model(seed=2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 8))
    kinds = np.array([0, 1, 3])
    z = embed_initial(ParamView(m.store, "enc"), Tensor(x), kinds).data
    v = m.store.values()
    for r in range(3):
        np.testing.assert_allclose(z[r], np_mlp(v, "enc.embed", x[r]) + v["enc.kind_bias"][kinds[r]], rtol=1e-13)


# ---------------------------------------------------------------- attention_layer

def _single_attention(m, hood, nbr_z, center, mode, t_n):
    p = ParamView(m.store, "enc.l1")
    return attention_layer(p, Tensor(center), hood, Tensor(nbr_z), t_n, mode,
                           m.store.tensor("enc.time.w"), m.store.tensor("enc.time.b"))


def test_single_neighbor_mean_mode_is_value_projection():
    m = small_model(seed=1)
    m.store["enc.l1.rel"].value[...] = 0.0
    snap = two_node_snapshot()
    hood = snap.neighborhood(3, 4)
    rng = np.random.default_rng(1)
    center, nbr = rng.normal(size=6), rng.normal(size=(1, 6))
    out, alpha = _single_attention(m, hood, nbr, center, "mean", snap.time)
    v = m.store.values()
    expected = v["enc.l1.wv"] @ np.concatenate([nbr[0], np_phi(v, 2.0)])
    assert alpha.data.tolist() == [1.0]
    np.testing.assert_allclose(out.data, expected, rtol=1e-13)


def test_empty_neighborhood_gives_zero():
    m = small_model()
    snap = apply_events(empty_snapshot(), [GraphEvent(0.0, 0, NodeAdd(1, NodeKind.ROAD, make_state(NodeKind.ROAD, [5.0])))])
    out, alpha = _single_attention(m, snap.neighborhood(1, 4), np.zeros((0, 6)), np.ones(6), "mean", 0.0)
    assert np.all(out.data == 0.0) and alpha.data.size == 0


def test_three_neighbors_match_brute_force():
    m = small_model(seed=7)
    veh = NodeKind.VEHICLE
    events = [GraphEvent(0.0, i, NodeAdd(i, veh, make_state(veh, [i, 0, 0]))) for i in range(4)]
    events += [GraphEvent(float(t), 0, EdgeAdd(InteractionEdge(0, u, Relation.FOLLOWS, float(t))))
               for t, u in [(1, 1), (2, 2), (3, 3)]]
    snap = apply_events(empty_snapshot(), events)
    hood = snap.neighborhood(0, 4)
    rng = np.random.default_rng(9)
    center, nbr = rng.normal(size=6), rng.normal(size=(3, 6))
    v = m.store.values()
    q = v["enc.l1.wq"] @ np.concatenate([center, np_phi(v, 0.0)])
    for mode, div in [("mean", 3.0), ("standard", 1.0)]:
        out, alpha = _single_attention(m, hood, nbr, center, mode, snap.time)
        keys = [np.concatenate([nbr[j], np_phi(v, snap.time - e.time)]) for j, e in enumerate(hood.neighbors)]
        sc = np.array([q @ (v["enc.l1.wk"] @ k) for k in keys]) / math.sqrt(6)
        a = np.exp(sc) / np.exp(sc).sum()
        vals = [v["enc.l1.wv"] @ k + v["enc.l1.rel"][relation_slot(Relation.FOLLOWS, True)] for k in keys]
        assert abs(alpha.data.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(alpha.data, a, rtol=1e-12)
        np.testing.assert_allclose(out.data, sum(ai * vi for ai, vi in zip(a, vals)) / div, rtol=1e-12)


def test_unknown_attention_mode_rejected():
    m = small_model()
    snap = two_node_snapshot()
    with pytest.raises(ValueError):
        _single_attention(m, snap.neighborhood(3, 4), np.ones((1, 6)), np.ones(6), "bogus", snap.time)


# ---------------------------------------------------------------- encode

def test_isolated_node_encoding_is_reproducible():
    m = small_model(layers=2)
    snap = apply_events(empty_snapshot(), [GraphEvent(0.0, 0, NodeAdd(5, NodeKind.ROAD, make_state(NodeKind.ROAD, [900.0])))])
    a, b = m.encode(snap).z.data, m.encode(snap).z.data
    assert a.tobytes() == b.tobytes()
    v = m.store.values()
    z = np_mlp(v, "enc.embed", m.normalize(np.array([snap.nodes[5].state]), np.array([2]))[0]) + v["enc.kind_bias"][2]
    for layer in (1, 2):
        z = np_mlp(v, f"enc.l{layer}.mlp", np.concatenate([z, np.zeros_like(z)]))
    np.testing.assert_allclose(a[0], z, rtol=1e-12)


def test_two_node_single_layer_matches_manual_evaluation():
    m = small_model(seed=5, layers=1)
    snap = two_node_snapshot()
    z = m.encode(snap).z.data
    ref = np_encode_one_layer(m, snap)
    np.testing.assert_allclose(z[0], ref[3], rtol=1e-12)
    np.testing.assert_allclose(z[1], ref[9], rtol=1e-12)


@given(st.integers(0, 50_000))
def test_random_graph_single_layer_matches_manual_evaluation(seed):
    m = small_model(seed=seed % 7, layers=1, k=3)
    rng = np.random.default_rng(seed)
    snap = apply_events(empty_snapshot(), random_events(7, 12, rng, steps=4))
    z = m.encode(snap).z.data
    ref = np_encode_one_layer(m, snap)
    for r, i in enumerate(snap.node_ids()):
        np.testing.assert_allclose(z[r], ref[i], rtol=1e-10, atol=1e-12)


@given(st.integers(0, 50_000))
def test_insertion_order_does_not_change_embeddings(seed):
    rng = np.random.default_rng(seed)
    events = random_events(10, 20, rng, steps=3)
    adds = [e for e in events if isinstance(e.payload, NodeAdd)]
    rest = [e for e in events if not isinstance(e.payload, NodeAdd)]
    # edges at t=0 keep their ordinals after the adds, so shuffle only the adds' payloads
    order = rng.permutation(len(adds))
    shuffled = [GraphEvent(0.0, i, adds[j].payload) for i, j in enumerate(order)]
    m = small_model(seed=1, layers=2)
    a = m.encode(apply_events(empty_snapshot(), adds + rest))
    b = m.encode(apply_events(empty_snapshot(), shuffled + rest))
    assert a.inputs.ids.tolist() == b.inputs.ids.tolist()
    assert a.z.data.tobytes() == b.z.data.tobytes()


def test_inputs_keep_k_most_recent():
    veh = NodeKind.VEHICLE
    events = [GraphEvent(0.0, i, NodeAdd(i, veh, make_state(veh))) for i in range(5)]
    events += [GraphEvent(float(t), 0, EdgeAdd(InteractionEdge(t, 0, Relation.FOLLOWS, float(t)))) for t in range(1, 5)]
    snap = apply_events(empty_snapshot(), events)
    inputs = build_inputs(snap, 2)
    assert inputs.nbr_idx[0].tolist() == [4, 3]
    assert inputs.nbr_dt[0].tolist() == [0.0, 1.0]
    assert inputs.nbr_rel[0].tolist() == [relation_slot(Relation.FOLLOWS, False)] * 2
    assert inputs.counts.tolist() == [2, 1, 1, 1, 1]


def test_attention_weights_are_returned_per_layer():
    m = small_model(layers=2)
    snap = two_node_snapshot()
    inputs = m.inputs(snap)
    _, weights = encode_inputs(ParamView(m.store, "enc"), m.config.encoder, inputs,
                               Tensor(m.normalize(inputs.states, inputs.kinds)), return_attention=True)
    assert len(weights) == 2
    for w in weights:
        np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)
