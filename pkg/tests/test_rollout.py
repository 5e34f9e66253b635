import numpy as np
import pytest

from tfm.config import GeneratorConfig
from tfm.generator import generate_step
from tfm.graph import (
    EdgeAdd,
    NodeAdd,
    NodeKind,
    NodeRemove,
    Relation,
    StateUpdate,
    make_state,
    replay,
    replay_steps,
    validate_log,
)
from tfm.microworld import convert, ring_scenario
from tfm.rollout import (
    Arrivals,
    NoDemand,
    ReferenceDemand,
    RolloutConfig,
    ScheduleDemand,
    preamble,
    simulate,
    step,
)

from _util import random_snapshot, small_model


@pytest.fixture(scope="module")
def ring_log():
    sc = ring_scenario(vehicles=4, steps=20, spacing=3.0, lights=1)
    return convert(sc.run(), sc.network)


def test_step_is_encode_decode_predict_commit():
    m = small_model(seed=1)
    snap = random_snapshot(6, 8, 1)
    out = step(snap, m, RolloutConfig(steps=1), np.random.default_rng(0))
    # independent composition of the public pieces
    enc = m.encode(snap)
    w = m.working_graph(enc)
    gen = generate_step(w, GeneratorConfig(), snap.time + 1.0)
    states = m.commit_states(m.predict_states(enc, w.h), enc.inputs.kinds)
    edges = [e.payload.edge for e in out.events if isinstance(e.payload, EdgeAdd)]
    assert edges == gen.edges and out.generated == len(gen.edges)
    got = {e.payload.node: e.payload.state for e in out.events if isinstance(e.payload, StateUpdate)}
    assert got == {int(i): tuple(float(x) for x in row) for i, row in zip(enc.inputs.ids, states)}
    assert out.log_prob == gen.log_prob
    assert all(e.time == snap.time + 1.0 for e in out.events)


def test_one_step_simulation_log_is_that_step():
    m = small_model(seed=2)
    snap = random_snapshot(5, 6, 2)
    res = simulate(snap, m, RolloutConfig(steps=1))
    out = step(snap, m, RolloutConfig(steps=1), np.random.default_rng(0))
    assert res.events == out.events and res.final == out.snapshot
    assert res.log.events == preamble(snap) + out.events


def test_multi_step_equals_iterated_steps_and_replays():
    m = small_model(seed=3)
    snap = random_snapshot(6, 7, 3)
    cfg = RolloutConfig(steps=4)
    res = simulate(snap, m, cfg)
    rng = np.random.default_rng(cfg.seed)
    cur = snap
    for _ in range(4):
        cur = step(cur, m, cfg, rng).snapshot
    assert res.final == cur
    assert replay(res.log, snap.window).nodes == cur.nodes
    assert validate_log(res.log).ok


@pytest.mark.parametrize("mode", ["greedy", "sample"])
def test_rollouts_are_deterministic(ring_log, mode):
    log, _ = ring_log
    m = small_model(seed=4)
    snaps = replay_steps(log, m.config.window)
    cfg = RolloutConfig(steps=6, seed=11, decoding=GeneratorConfig(mode=mode, max_events=20))
    a = simulate(snaps[3], m, cfg, ReferenceDemand(log), prefix=log.until(3.0))
    b = simulate(snaps[3], m, cfg, ReferenceDemand(log), prefix=log.until(3.0))
    assert a.log.events == b.log.events and a.log_prob == b.log_prob


def test_reference_demand_replays_arrivals_and_signals(ring_log):
    log, index = ring_log
    m = small_model(seed=5)
    snaps = replay_steps(log, m.config.window)
    res = simulate(snaps[0], m, RolloutConfig(steps=len(snaps) - 1), ReferenceDemand(log, signals=True),
                   prefix=log.until(0.0))
    assert validate_log(res.log).ok
    ref_vehicles = {e.payload.node for e in log.events if isinstance(e.payload, NodeAdd)}
    assert set(res.final.nodes) == ref_vehicles
    light = index.lights["tl0"]
    ref_light = [e.payload.state for e in log.events if isinstance(e.payload, StateUpdate) and e.payload.node == light]
    sim_light = [e.payload.state for e in res.log.events
                 if isinstance(e.payload, StateUpdate) and e.payload.node == light]
    assert sim_light == ref_light


def test_infrastructure_only_world_stays_valid():
    sc = ring_scenario(vehicles=0, steps=3, lights=1)
    log, _ = convert(sc.run(), sc.network)
    m = small_model(seed=6)
    snap = replay(log.until(0.0), m.config.window)
    res = simulate(snap, m, RolloutConfig(steps=5), NoDemand())
    assert validate_log(res.log).ok
    assert not any(k == NodeKind.VEHICLE for k in (r.kind for r in res.final.nodes.values()))


def test_record_states_off_keeps_structure_only():
    m = small_model(seed=7)
    snap = random_snapshot(5, 6, 7)
    full = simulate(snap, m, RolloutConfig(steps=3))
    lean = simulate(snap, m, RolloutConfig(steps=3, record_states=False))
    assert lean.final == full.final
    assert not any(isinstance(e.payload, StateUpdate) for e in lean.events)
    assert [e for e in full.events if not isinstance(e.payload, StateUpdate)] == lean.events


def test_schedule_demand_inserts_and_retires():
    snap = random_snapshot(2, 0, 0)
    dem = ScheduleDemand([(1.0, 0, 15.0), (0.0, 0, None)], first_node=1, step_duration=1.0)
    a0 = dem.arrivals(0, snap, {})
    # node 1 is taken, so the circulating vehicle departing at 0 s becomes node 2
    assert [n for n, _, _ in a0.additions] == [2] and a0.edges == [(2, 0, Relation.ON_LANE)]
    a1 = dem.arrivals(1, snap.__class__(nodes={**snap.nodes, 2: None}), {2: make_state(NodeKind.VEHICLE, [5.0])})
    assert [n for n, _, _ in a1.additions] == [3] and a1.removals == []
    live = {**snap.nodes, 2: None, 3: None}
    fast = make_state(NodeKind.VEHICLE, [10.0])
    a2 = dem.arrivals(2, snap.__class__(nodes=live), {2: fast, 3: fast})
    a3 = dem.arrivals(3, snap.__class__(nodes=live), {2: fast, 3: fast})
    assert a2.removals == [] and a3.removals == [3]  # 10 + 10 m >= 15 m


def test_removed_vehicles_lose_their_generated_edges():
    m = small_model(seed=8)
    snap = random_snapshot(5, 6, 8, steps=1)
    gone = snap.node_ids()[0]

    class Remove:
        def arrivals(self, n, s, states):
            return Arrivals(removals=[gone])

    out = step(snap, m, RolloutConfig(steps=1, decoding=GeneratorConfig(max_events=50)),
               np.random.default_rng(0), Remove())
    assert out.events[0].payload == NodeRemove(gone)
    for e in out.events:
        if isinstance(e.payload, EdgeAdd):
            assert gone not in (e.payload.edge.source, e.payload.edge.target)
    assert gone not in out.snapshot.nodes


def test_prefix_past_the_start_is_rejected(ring_log):
    log, _ = ring_log
    m = small_model()
    snaps = replay_steps(log, m.config.window)
    with pytest.raises(ValueError, match="prefix"):
        simulate(snaps[1], m, RolloutConfig(steps=1), prefix=log.until(5.0))


def test_config_validation():
    with pytest.raises(ValueError):
        RolloutConfig(steps=0).validate()
