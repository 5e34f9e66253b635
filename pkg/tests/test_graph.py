import numpy as np
import pytest
from hypothesis import given, strategies as st

from tfm.graph import (
    DuplicateNodeAdd,
    EdgeAdd,
    EventLog,
    GraphEvent,
    InteractionEdge,
    InvalidState,
    LogFormatError,
    NodeAdd,
    NodeKind,
    NodeRemove,
    NonMonotoneTime,
    ReferentialViolation,
    Relation,
    StateUpdate,
    UnknownNode,
    apply_events,
    dumps_log,
    empty_snapshot,
    loads_log,
    make_state,
    replay,
    replay_steps,
    temporal_neighbors,
    validate_log,
)
from tfm.microworld import convert, ring_scenario

from _util import random_events

VEH = NodeKind.VEHICLE


def veh(node, t=0.0, i=0, speed=1.0):
    return GraphEvent(t, i, NodeAdd(node, VEH, make_state(VEH, [speed, 0.0, 0.0])))


def edge(u, v, t, i, rel=Relation.FOLLOWS):
    return GraphEvent(t, i, EdgeAdd(InteractionEdge(u, v, rel, t)))


def two_vehicles():
    return apply_events(empty_snapshot(), [veh(1, i=0), veh(2, i=1)])


def snapshot_key(s):
    return (s.step, dict(s.nodes), s.edges, {k: dict(v) for k, v in s.neighbors.items()}, s.retired, s.last_key)


@pytest.fixture(scope="module")
def ring_log():
    sc = ring_scenario(vehicles=20, steps=200)
    return convert(sc.run(), sc.network)[0]


# ---------------------------------------------------------------- apply_events

def test_empty_batch_is_a_clock_tick():
    s = two_vehicles()
    t = apply_events(s, [])
    assert t.step == s.step + 1
    assert t.nodes == s.nodes and t.edges == s.edges


def test_single_edge_between_two_nodes():
    s = apply_events(two_vehicles(), [edge(1, 2, 1.0, 0)])
    assert len(s.nodes) == 2 and len(s.edges) == 1
    assert s.edges[0] == InteractionEdge(1, 2, Relation.FOLLOWS, 1.0)
    assert s.step == 1


def test_replay_event_by_event_matches_batch(ring_log):
    one_call = replay(ring_log)
    snap = empty_snapshot(ring_log.step_duration)
    for ev in ring_log.events:
        snap = apply_events(snap, [ev])
    assert snapshot_key(snap) == snapshot_key(one_call)


@given(st.integers(0, 10_000), st.integers(1, 30))
def test_apply_is_compositional(seed, cut):
    rng = np.random.default_rng(seed)
    events = random_events(8, 25, rng, steps=4)
    cut = min(cut, len(events))
    a = apply_events(apply_events(empty_snapshot(), events[:cut]), events[cut:])
    b = apply_events(empty_snapshot(), events)
    if len(events) > cut:
        assert snapshot_key(a) == snapshot_key(b)


def test_removal_retires_node_and_drops_its_edges():
    s = apply_events(two_vehicles(), [edge(1, 2, 1.0, 0)])
    s = apply_events(s, [GraphEvent(2.0, 0, NodeRemove(2))])
    assert 2 not in s.nodes and 2 in s.retired
    assert s.edges == ()
    assert s.neighborhood(1, 5).neighbors == ()
    with pytest.raises(DuplicateNodeAdd):
        apply_events(s, [veh(2, t=3.0)])


def test_state_update_replaces_state():
    s = apply_events(two_vehicles(), [GraphEvent(1.0, 0, StateUpdate(1, make_state(VEH, [4.0, 1.0, 2.0])))])
    assert s.nodes[1].state[:3] == (4.0, 1.0, 2.0)


def test_window_prunes_old_edges_but_keeps_neighbor_index():
    s = apply_events(two_vehicles(), [edge(1, 2, 1.0, 0)])
    for _ in range(6):
        s = apply_events(s, [])
    assert s.step == 7 and s.edges == ()
    assert [e.node for e in s.neighborhood(1, 3).neighbors] == [2]


@pytest.mark.parametrize("bad, error", [
    ([veh(3, i=5), veh(4, i=5)], NonMonotoneTime),
    ([veh(1, i=5)], DuplicateNodeAdd),
    ([edge(1, 99, 1.0, 0)], ReferentialViolation),
    ([edge(1, 1, 1.0, 0)], ReferentialViolation),
    ([GraphEvent(1.0, 0, NodeRemove(42))], ReferentialViolation),
    ([GraphEvent(1.0, 0, StateUpdate(42, make_state(VEH)))], ReferentialViolation),
    ([GraphEvent(1.0, 0, EdgeAdd(InteractionEdge(1, 2, Relation.FOLLOWS, 0.5)))], ReferentialViolation),
    ([GraphEvent(1.0, 0, StateUpdate(1, make_state(NodeKind.LANE)))], InvalidState),
    ([GraphEvent(1.0, 0, StateUpdate(1, (float("nan"),) + make_state(VEH)[1:]))], InvalidState),
])
def test_integrity_errors(bad, error):
    with pytest.raises(error):
        apply_events(two_vehicles(), bad)


def test_make_state_layout():
    s = make_state(NodeKind.LANE, [3.0, 20.0])
    assert s == (3.0, 20.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    with pytest.raises(InvalidState):
        make_state(VEH, [1, 2, 3, 4, 5])


# ------------------------------------------------------------ temporal_neighbors

def test_isolated_node_has_empty_neighborhood():
    log = EventLog([veh(1), veh(2, i=1)])
    assert temporal_neighbors(log, 1, 0.0, 5).neighbors == ()


def test_most_recent_neighbor_wins():
    log = EventLog([veh(1), veh(2, i=1), veh(3, i=2), edge(1, 2, 1.0, 0), edge(3, 1, 2.0, 0)])
    hood = temporal_neighbors(log, 1, 2.0, 1)
    assert len(hood) == 1
    (e,) = hood.neighbors
    assert (e.node, e.time, e.rel, e.outgoing) == (3, 2.0, Relation.FOLLOWS, False)


def test_neighbors_require_positive_k_and_live_node():
    log = EventLog([veh(1)])
    with pytest.raises(ValueError):
        temporal_neighbors(log, 1, 0.0, 0)
    with pytest.raises(UnknownNode):
        temporal_neighbors(log, 7, 0.0, 3)


def brute_force_neighbors(events, node, t_n, k):
    """Latest interaction per live partner by a linear scan; sorted most recent first."""
    alive, latest = set(), {}
    for ev in events:
        if ev.time > t_n:
            break
        p = ev.payload
        if isinstance(p, NodeAdd):
            alive.add(p.node)
        elif isinstance(p, NodeRemove):
            alive.discard(p.node)
            latest.pop(p.node, None)
        elif isinstance(p, EdgeAdd) and node in (p.edge.source, p.edge.target):
            other = p.edge.target if p.edge.source == node else p.edge.source
            latest[other] = (ev.time, ev.ordinal, p.edge.rel, p.edge.source == node)
    rows = [(t, i, other, rel, out) for other, (t, i, rel, out) in latest.items() if other in alive]
    rows.sort(reverse=True)
    return [(other, t, i, rel, out) for t, i, other, rel, out in rows[:k]]


@given(st.integers(0, 100_000), st.integers(1, 8))
def test_neighbors_match_linear_scan(seed, k):
    rng = np.random.default_rng(seed)
    kinds = [NodeKind.VEHICLE] * 35 + [NodeKind.LANE] * 15
    events = random_events(50, 300, rng, steps=6, kinds=kinds)
    # retire a few vehicles at the end of step 2
    last = max(e.ordinal for e in events if e.time == 2.0) if any(e.time == 2.0 for e in events) else -1
    gone = [int(x) for x in rng.choice(35, 5, replace=False)]
    events = [e for e in events if e.time <= 2.0] + \
             [GraphEvent(2.0, last + 1 + j, NodeRemove(n)) for j, n in enumerate(gone)] + \
             [e for e in events if e.time > 2.0 and not (
                 isinstance(e.payload, EdgeAdd) and {e.payload.edge.source, e.payload.edge.target} & set(gone))]
    log = EventLog(events)
    t_n = 5.0
    for node in range(50):
        if node in gone:
            continue
        got = [(e.node, e.time, e.ordinal, e.rel, e.outgoing) for e in temporal_neighbors(log, node, t_n, k).neighbors]
        assert got == brute_force_neighbors(events, node, t_n, k)


# ---------------------------------------------------------------- validate_log

def test_empty_log_validates():
    assert validate_log(EventLog()).ok


def test_edge_to_unknown_node_is_reported_at_its_index():
    log = EventLog([veh(1), edge(1, 99, 1.0, 0), edge(99, 1, 1.0, 1)])
    rep = validate_log(log)
    assert [v.index for v in rep.violations] == [1, 2]
    assert rep.violations[0].error == "ReferentialViolation"
    assert "99" in str(rep)


def test_oracle_logs_validate(ring_log):
    assert validate_log(ring_log).ok


# ---------------------------------------------------------------- log I/O

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=6), st.integers(0, 4))
def test_jsonl_round_trip_is_exact(payloads, rel):
    events = [GraphEvent(0.0, i, NodeAdd(i, VEH, make_state(VEH, p))) for i, p in enumerate(payloads)]
    if len(payloads) > 1:
        events.append(GraphEvent(0.5, 0, EdgeAdd(InteractionEdge(0, 1, Relation(rel), 0.5))))
    events.append(GraphEvent(1.0, 0, NodeRemove(0)))
    log = EventLog(events)
    back = loads_log(dumps_log(log))
    assert back.events == log.events


def test_jsonl_line_format():
    text = dumps_log(EventLog([veh(17, speed=8.25), edge(17, 17, 0.0, 1)]))
    first, second = text.splitlines()
    assert first.startswith('{"t":0.0,"i":0,"ev":"node_add","node":17,"kind":"vehicle","s":[8.25,')
    assert second == '{"t":0.0,"i":1,"ev":"edge","rel":"follows","u":17,"v":17}'


@pytest.mark.parametrize("line, fragment", [
    ("not json", "invalid JSON"),
    ('{"t":0,"i":0,"ev":"teleport"}', "unknown event type"),
    ('{"t":0,"i":0,"ev":"edge","rel":"follows","u":1}', "missing key 'v'"),
    ('{"t":0,"i":0,"ev":"edge","rel":"orbits","u":1,"v":2}', "unknown relation"),
])
def test_malformed_lines_report_line_numbers(line, fragment):
    with pytest.raises(LogFormatError) as err:
        loads_log('{"t":0.0,"i":0,"ev":"node_remove","node":1}\n' + line + "\n")
    assert err.value.line == 2
    assert fragment in str(err.value)


def test_replay_steps_fills_missing_steps():
    log = EventLog([veh(1), veh(2, t=3.0)])
    snaps = replay_steps(log)
    assert [s.step for s in snaps] == [0, 1, 2, 3]
    assert [len(s.nodes) for s in snaps] == [1, 1, 1, 2]
