"""Autoregressive simulation with the trained one-step model.

Each step consumes only the current snapshot and the model:

1. encode G_n,
2. decode the step's interaction edges (with embedding refresh),
3. predict every node's next state from the resulting messages and clamp it,
4. apply exogenous demand: vehicle removals and insertions (with their
   OnLane edge),
5. commit everything as one batch of events at t_{n+1}.

Vehicle arrivals and departures come from outside the model, either from a
reference log or from a demand schedule.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .config import GeneratorConfig
from .generator import generate_step
from .graph.snapshot import GraphSnapshot, apply_events
from .graph.types import (
    SPEED,
    EdgeAdd,
    EventLog,
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    NodeRemove,
    Relation,
    StateUpdate,
    make_state,
    step_of,
)
from .model import TFM
from .updater import NonFiniteState


@dataclass
class RolloutConfig:
    steps: int = 100
    decoding: GeneratorConfig = field(default_factory=GeneratorConfig)
    seed: int = 0
    record_states: bool = True

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        self.decoding.validate()


@dataclass
class Arrivals:
    """Exogenous changes for one step."""

    removals: list[int] = field(default_factory=list)
    additions: list[tuple[int, NodeKind, tuple[float, ...]]] = field(default_factory=list)
    edges: list[tuple[int, int, Relation]] = field(default_factory=list)  # edges of inserted nodes
    states: dict[int, tuple[float, ...]] = field(default_factory=dict)   # externally set states


class Demand(Protocol):
    def arrivals(self, step: int, snapshot: GraphSnapshot, states: dict[int, tuple[float, ...]]) -> Arrivals:
        """Changes applied while moving from ``snapshot`` (step n) to step ``step`` = n + 1."""


class NoDemand:
    def arrivals(self, step, snapshot, states) -> Arrivals:
        return Arrivals()


class ReferenceDemand:
    """Replays node arrivals and departures (and the arrivals' own edges) from a reference log.

    With ``signals=True`` traffic-light states are also taken from the log:
    a fixed-time signal plan is an input of the system, like its demand.
    """

    def __init__(self, log: EventLog, signals: bool = False):
        self.by_step: dict[int, Arrivals] = {}
        kinds: dict[int, NodeKind] = {}
        for n, events in log.by_step().items():
            arr = Arrivals()
            new: set[int] = set()
            for ev in events:
                p = ev.payload
                if isinstance(p, NodeAdd):
                    kinds[p.node] = p.kind
                    arr.additions.append((p.node, p.kind, p.state))
                    new.add(p.node)
                elif isinstance(p, NodeRemove):
                    arr.removals.append(p.node)
                elif isinstance(p, EdgeAdd) and (p.edge.source in new or p.edge.target in new):
                    arr.edges.append((p.edge.source, p.edge.target, p.edge.rel))
                elif (signals and isinstance(p, StateUpdate) and p.node not in new
                      and kinds.get(p.node) == NodeKind.TRAFFIC_LIGHT):
                    arr.states[p.node] = p.state
            self.by_step[n] = arr

    def arrivals(self, step, snapshot, states) -> Arrivals:
        arr = self.by_step.get(step, Arrivals())
        alive = set(snapshot.nodes)
        return Arrivals([n for n in arr.removals if n in alive],
                        [a for a in arr.additions if a[0] not in alive], list(arr.edges),
                        {n: s for n, s in arr.states.items() if n in alive})


class ScheduleDemand:
    """Inserts vehicles at their departure time and removes them once they have covered their route.

    ``entries`` are (departure time, origin lane node, route length in metres
    or None to circulate for ever). Distance travelled is integrated from the
    committed speeds.
    """

    def __init__(self, entries: Sequence[tuple[float, int, float | None]], first_node: int,
                 step_duration: float):
        self.entries = sorted(enumerate(entries), key=lambda x: (x[1][0], x[0]))
        self.next_node = first_node
        self.dt = step_duration
        self.pending = list(self.entries)
        self.odometer: dict[int, float] = {}
        self.route_len: dict[int, float | None] = {}

    def arrivals(self, step, snapshot, states) -> Arrivals:
        arr = Arrivals()
        for node, dist in list(self.odometer.items()):
            if node not in snapshot.nodes:
                self.odometer.pop(node)
                continue
            dist += states[node][SPEED] * self.dt if node in states else 0.0
            self.odometer[node] = dist
            limit = self.route_len[node]
            if limit is not None and dist >= limit:
                arr.removals.append(node)
                self.odometer.pop(node)
        t = step * self.dt
        while self.pending and self.pending[0][1][0] <= t + 1e-9:
            _, (_, lane, length) = self.pending.pop(0)
            node = self.next_node
            while node in snapshot.nodes or node in snapshot.retired:
                node += 1
            self.next_node = node + 1
            arr.additions.append((node, NodeKind.VEHICLE, make_state(NodeKind.VEHICLE, [0.0, 0.0, 0.0])))
            arr.edges.append((node, lane, Relation.ON_LANE))
            self.odometer[node] = 0.0
            self.route_len[node] = length
        return arr


@dataclass
class StepOutput:
    snapshot: GraphSnapshot
    events: list[GraphEvent]
    log_prob: float
    generated: int


def step(snapshot: GraphSnapshot, model: TFM, cfg: RolloutConfig, rng: np.random.Generator,
         demand: Demand | None = None) -> StepOutput:
    """Advance one macro step; returns the next snapshot and the events that produced it."""
    demand = demand or NoDemand()
    t_next = (snapshot.step + 1) * snapshot.step_duration
    encoded = model.encode(snapshot)
    working = model.working_graph(encoded, cfg.decoding.temperature, cfg.decoding.kind_mask)
    gen = generate_step(working, cfg.decoding, t_next, rng)
    ids = encoded.inputs.ids
    states: dict[int, tuple[float, ...]] = {}
    if len(ids):
        predicted = model.predict_states(encoded, working.h)
        try:
            committed = model.commit_states(predicted, encoded.inputs.kinds)
        except NonFiniteState as exc:
            raise NonFiniteState(f"step {snapshot.step + 1}: {exc}") from None
        states = {int(i): tuple(float(x) for x in row) for i, row in zip(ids, committed)}
    arr = demand.arrivals(snapshot.step + 1, snapshot, states)
    removed = set(arr.removals)
    states.update(arr.states)

    payloads: list = [NodeRemove(n) for n in arr.removals]
    payloads += [NodeAdd(n, k, s) for n, k, s in arr.additions]
    payloads += [EdgeAdd(InteractionEdge(u, v, r, t_next)) for u, v, r in arr.edges]
    # edges touching a vehicle that leaves in this step are dropped
    payloads += [EdgeAdd(e) for e in gen.edges if e.source not in removed and e.target not in removed]
    state_payloads = [StateUpdate(n, s) for n, s in states.items() if n not in removed]
    state_payloads += [StateUpdate(n, s) for n, _, s in arr.additions]
    batch = [GraphEvent(t_next, i, p) for i, p in enumerate(payloads + state_payloads)]
    nxt = apply_events(snapshot, batch)
    recorded = batch if cfg.record_states else batch[:len(payloads)]
    return StepOutput(nxt, recorded, gen.log_prob, len(gen.edges))


@dataclass
class SimulationResult:
    log: EventLog                 # prefix (or a node preamble) followed by the generated steps
    events: list[GraphEvent]      # generated steps only
    final: GraphSnapshot
    log_prob: float


def preamble(snapshot: GraphSnapshot) -> list[GraphEvent]:
    """node_add events recreating the snapshot's nodes at its own time."""
    t = snapshot.time
    return [GraphEvent(t, i, NodeAdd(n, snapshot.nodes[n].kind, snapshot.nodes[n].state))
            for i, n in enumerate(snapshot.node_ids())]


def simulate(initial: GraphSnapshot, model: TFM, cfg: RolloutConfig, demand: Demand | None = None,
             prefix: EventLog | None = None) -> SimulationResult:
    """Run ``cfg.steps`` steps from ``initial``.

    ``prefix`` is the log that produced ``initial``; it is copied to the front of
    the output so the result replays on its own. Without it, a node preamble
    is used instead.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    snap = initial
    events: list[GraphEvent] = []
    total = 0.0
    for _ in range(cfg.steps):
        out = step(snap, model, cfg, rng, demand)
        snap = out.snapshot
        events.extend(out.events)
        total += out.log_prob
    if prefix is not None:
        if prefix.events and step_of(prefix.events[-1].time, prefix.step_duration) > initial.step:
            raise ValueError("prefix extends past the initial snapshot")
        head = list(prefix.events)
    else:
        head = preamble(initial)
    return SimulationResult(EventLog(head + events, initial.step_duration), events, snap, total)


def manifest(model_hash: str, configs: dict, seed: int, extra: dict | None = None) -> dict:
    doc = {"checkpoint_sha256": model_hash, "configs": configs, "seed": seed}
    if extra:
        doc.update(extra)
    return doc


def log_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dumps_manifest(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
