import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfm.config import GeneratorConfig
from tfm.generator import (
    EventReferencesDeadNode,
    NoValidTarget,
    generate_step,
    next_event_distribution,
    teacher_forced_log_prob,
)
from tfm.graph import (
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    Relation,
    apply_events,
    empty_snapshot,
    make_state,
)
from tfm.graph.types import RELATION_KINDS
from tfm.numeric import tensor as T

from _oracles import NpChain, chain_probability
from _util import flatten_heads, random_snapshot, rig_stop, small_model


def working(model, snap, **kw):
    return model.working_graph(model.encode(snap), **kw)


def road(node, i=0):
    return GraphEvent(0.0, i, NodeAdd(node, NodeKind.ROAD, make_state(NodeKind.ROAD, [10.0 * (node + 1)])))


# ---------------------------------------------------------------- distributions

def test_empty_graph_only_stop():
    m = small_model()
    dist = next_event_distribution(working(m, empty_snapshot()))
    assert dist.empty and dist.source.tolist() == [1.0]


def test_single_node_has_no_target_and_stop_takes_all():
    m = small_model()
    w = working(m, apply_events(empty_snapshot(), [road(0)]))
    dist = next_event_distribution(w)
    assert dist.source.tolist() == [0.0, 1.0]
    assert dist.no_valid_target.tolist() == [True]
    with pytest.raises(NoValidTarget):
        w.target_log_probs(0)


@given(st.integers(0, 100_000))
def test_joint_mass_sums_to_one(seed):
    m = small_model(seed=seed % 5)
    dist = next_event_distribution(working(m, random_snapshot(8, 10, seed)))
    total = dist.stop + sum(dist.source[u] * dist.target(u).sum() for u in range(8))
    assert abs(total - 1.0) < 1e-9
    for u in range(8):
        assert dist.target(u)[u] == 0.0
        assert abs(dist.relation(u, (u + 1) % 8).sum() - 1.0) < 1e-12


def test_temperature_divides_logits():
    m = small_model(seed=3)
    snap = random_snapshot(5, 6, 3)
    w1, w2 = working(m, snap), working(m, snap, temperature=2.0)
    logits = np.append(w1.src.data.reshape(-1), w1.stop.data.reshape(-1))
    expected = T.log_softmax(T.Tensor(logits / 2.0)).data
    np.testing.assert_allclose(w2.source_log_probs().data, expected, atol=1e-14)


def test_kind_mask_restricts_targets_and_relations():
    m = small_model(seed=2)
    veh, lane = NodeKind.VEHICLE, NodeKind.LANE
    snap = apply_events(empty_snapshot(), [
        GraphEvent(0.0, 0, NodeAdd(0, veh, make_state(veh))),
        GraphEvent(0.0, 1, NodeAdd(1, lane, make_state(lane))),
        road(2, i=2),
    ])
    w = working(m, snap, kind_mask=True)
    # the road only pairs with a lane as the target of LaneOfRoad; the vehicle can target the lane
    assert np.exp(w.target_log_probs(0).data).tolist()[2] == 0.0
    rel = np.exp(w.relation_log_probs(0, 1).data)
    assert rel[Relation.ON_LANE] == pytest.approx(1.0, abs=1e-15)
    assert w.valid_source.tolist() == [True, True, False]


def test_unknown_node_row_lookup():
    m = small_model()
    w = working(m, random_snapshot(3, 2, 0))
    with pytest.raises(EventReferencesDeadNode):
        w.row(99)


# ---------------------------------------------------------------- generate_step

def test_dominant_stop_gives_empty_step():
    m = small_model(seed=1)
    rig_stop(m)
    res = generate_step(working(m, random_snapshot(5, 4, 1)), GeneratorConfig(), 1.0)
    assert res.edges == []
    assert res.proposals[0].is_stop
    assert res.log_prob == pytest.approx(0.0, abs=1e-12)


def test_greedy_is_deterministic():
    m = small_model(seed=4)
    snap = random_snapshot(6, 8, 4)
    a = generate_step(working(m, snap), GeneratorConfig(max_events=10), 1.0)
    b = generate_step(working(m, snap), GeneratorConfig(max_events=10), 1.0)
    assert a.edges == b.edges and a.log_prob == b.log_prob
    assert all(e.time == 1.0 for e in a.edges)


def test_event_limit_is_respected():
    m = small_model(seed=4)
    flatten_heads(m)
    res = generate_step(working(m, random_snapshot(6, 8, 4)), GeneratorConfig(max_events=3), 2.0)
    assert len(res.edges) <= 3
    assert GeneratorConfig().limit(7) == 28


def test_sampling_frequencies_match_chain_probabilities():
    m = small_model(seed=6)
    snap = random_snapshot(3, 3, 6)
    encoded = m.encode(snap)
    ch = NpChain(m, encoded)
    src = ch.source()
    expected = {"stop": src[-1]}
    for u in range(3):
        tgt = ch.target(u)
        for v in range(3):
            if v != u:
                expected[(u, v)] = src[u] * tgt[v]
    rng = np.random.default_rng(2024)
    runs = 10_000
    counts = Counter()
    cfg = GeneratorConfig(max_events=1, mode="sample")
    for _ in range(runs):
        res = generate_step(m.working_graph(encoded), cfg, 1.0, rng)
        first = res.proposals[0]
        counts["stop" if first.is_stop else (int(encoded.inputs.row(first.source)),
                                               int(encoded.inputs.row(first.target)))] += 1
    assert abs(sum(expected.values()) - 1.0) < 1e-12
    for key, p in expected.items():
        sigma = math.sqrt(runs * p * (1 - p))
        assert abs(counts[key] - runs * p) <= 3 * sigma + 1e-9, (key, counts[key], runs * p)


def test_sampling_needs_rng():
    m = small_model()
    with pytest.raises(ValueError):
        generate_step(working(m, random_snapshot(4, 3, 0)), GeneratorConfig(mode="sample"), 1.0)


@pytest.mark.parametrize("bad", [dict(max_events=-1), dict(temperature=0.0), dict(mode="beam")])
def test_generator_config_validation(bad):
    with pytest.raises(ValueError):
        GeneratorConfig(**bad).validate()


# ---------------------------------------------------------------- teacher forcing

def test_no_events_scores_stop_only():
    m = small_model(seed=8)
    snap = random_snapshot(4, 3, 8)
    lp = teacher_forced_log_prob(working(m, snap), []).item()
    assert lp == pytest.approx(math.log(next_event_distribution(working(m, snap)).stop), abs=1e-14)


def test_single_event_two_nodes_manual():
    m = small_model(seed=9)
    veh = NodeKind.VEHICLE
    snap = apply_events(empty_snapshot(), [
        GraphEvent(0.0, 0, NodeAdd(4, veh, make_state(veh, [5.0, 0.2, 10.0]))),
        GraphEvent(0.0, 1, NodeAdd(7, veh, make_state(veh, [6.0, -0.1, 30.0]))),
    ])
    encoded = m.encode(snap)
    ch = NpChain(m, encoded)
    p_u = ch.source()[0]
    assert ch.target(0)[1] == 1.0  # only one admissible target
    p_r = ch.relation(0, 1)[Relation.FOLLOWS]
    ch.advance(0, 1, int(Relation.FOLLOWS))
    p_stop = ch.source()[-1]
    edge = InteractionEdge(4, 7, Relation.FOLLOWS, 1.0)
    got = teacher_forced_log_prob(m.working_graph(encoded), [edge]).item()
    assert got == pytest.approx(math.log(p_u) + math.log(p_r) + math.log(p_stop), abs=1e-12)


@given(st.integers(0, 100_000), st.integers(2, 4), st.integers(0, 3), st.booleans())
def test_teacher_forcing_equals_chain_product(seed, n, m_events, relations):
    rng = np.random.default_rng(seed)
    m = small_model(seed=seed % 3, layers=1)
    snap = random_snapshot(n, 3, seed)
    encoded = m.encode(snap)
    events = []
    for _ in range(m_events):
        u, v = rng.choice(n, 2, replace=False)
        events.append((int(u), int(v), int(rng.integers(0, len(RELATION_KINDS)))))
    ids = encoded.inputs.ids
    edges = [InteractionEdge(int(ids[u]), int(ids[v]), Relation(r), 1.0) for u, v, r in events]
    got = teacher_forced_log_prob(m.working_graph(encoded), edges, relations).item()
    assert got == pytest.approx(math.log(chain_probability(m, encoded, events, relations)), abs=1e-9)


def test_self_loop_rejected_in_teacher_forcing():
    m = small_model()
    snap = random_snapshot(3, 2, 0)
    node = snap.node_ids()[0]
    with pytest.raises(ValueError):
        teacher_forced_log_prob(working(m, snap), [InteractionEdge(node, node, Relation.FOLLOWS, 1.0)])
