"""Graph snapshots, event replay and temporal neighborhoods."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .types import (
    EdgeAdd,
    EventLog,
    GraphEvent,
    DuplicateNodeAdd,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    NodeRemove,
    NonMonotoneTime,
    ReferentialViolation,
    Relation,
    StateUpdate,
    UnknownNode,
    check_state,
    step_of,
)

DEFAULT_WINDOW = 5


class NodeRecord(NamedTuple):
    kind: NodeKind
    state: tuple[float, ...]


class NeighborEntry(NamedTuple):
    node: int
    time: float
    ordinal: int
    rel: Relation
    outgoing: bool  # True when the center is the edge source


@dataclass(frozen=True)
class TemporalNeighborhood:
    center: int
    neighbors: tuple[NeighborEntry, ...]

    def __len__(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True)
class GraphSnapshot:
    """System state G_n.

    Besides the node set and the windowed edge list, a snapshot carries the
    latest interaction with every live neighbor of every node. That index is
    what the encoder attends over, so a snapshot alone is sufficient to step
    the model forward. Snapshots are never mutated after construction.
    """

    step: int = 0
    nodes: Mapping[int, NodeRecord] = field(default_factory=dict)
    edges: tuple[InteractionEdge, ...] = ()
    neighbors: Mapping[int, Mapping[int, NeighborEntry]] = field(default_factory=dict)
    retired: frozenset[int] = frozenset()
    last_key: tuple[float, int] | None = None
    step_duration: float = 1.0
    window: int = DEFAULT_WINDOW

    @property
    def time(self) -> float:
        """Clock time t_n of this snapshot."""
        return self.step * self.step_duration

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def kind_of(self, node: int) -> NodeKind:
        return self.nodes[node].kind

    def state_matrix(self, ids: Sequence[int] | None = None) -> np.ndarray:
        ids = self.node_ids() if ids is None else ids
        if not ids:
            return np.zeros((0, 0))
        return np.array([self.nodes[i].state for i in ids], dtype=np.float64)

    def neighborhood(self, node: int, k: int) -> TemporalNeighborhood:
        if node not in self.nodes:
            raise UnknownNode(f"node {node} is not alive at step {self.step}")
        entries = self.neighbors.get(node, {})
        ranked = sorted(entries.values(), key=lambda e: (e.time, e.ordinal), reverse=True)
        return TemporalNeighborhood(node, tuple(ranked[:k]))

    def with_states(self, states: Mapping[int, tuple[float, ...]]) -> "GraphSnapshot":
        nodes = dict(self.nodes)
        for node, s in states.items():
            nodes[node] = NodeRecord(nodes[node].kind, s)
        return replace(self, nodes=nodes)


def apply_events(snapshot: GraphSnapshot, events: Iterable[GraphEvent]) -> GraphSnapshot:
    """Apply a time-ordered batch of events and return the next snapshot.

    An empty batch is a pure clock tick (step + 1). Otherwise the step becomes
    the macro step of the latest applied event, which makes replay
    compositional: applying ``a`` then ``b`` equals applying ``a + b``.
    """
    nodes = dict(snapshot.nodes)
    nbrs: dict[int, Mapping[int, NeighborEntry]] = dict(snapshot.neighbors)
    owned: set[int] = set()  # inner neighbor dicts already copied in this call
    edges = list(snapshot.edges)
    retired = snapshot.retired
    last = snapshot.last_key
    dt = snapshot.step_duration
    applied = 0

    def own(node: int) -> dict[int, NeighborEntry]:
        if node not in owned:
            nbrs[node] = dict(nbrs.get(node, {}))
            owned.add(node)
        return nbrs[node]  # type: ignore[return-value]

    for ev in events:
        key = (ev.time, ev.ordinal)
        if last is not None and key <= last:
            raise NonMonotoneTime(f"event at (t={ev.time}, i={ev.ordinal}) does not follow {last}")
        p = ev.payload
        if isinstance(p, NodeAdd):
            if p.node in nodes or p.node in retired:
                raise DuplicateNodeAdd(f"node {p.node} added twice")
            check_state(p.kind, p.state)
            nodes[p.node] = NodeRecord(p.kind, tuple(p.state))
            own(p.node)
        elif isinstance(p, NodeRemove):
            if p.node not in nodes:
                raise ReferentialViolation(f"removal of unknown node {p.node}")
            del nodes[p.node]
            for other in nbrs.get(p.node, {}):
                own(other).pop(p.node, None)
            nbrs.pop(p.node, None)
            owned.discard(p.node)
            retired = retired | {p.node}
        elif isinstance(p, EdgeAdd):
            e = p.edge
            if e.source not in nodes or e.target not in nodes:
                raise ReferentialViolation(f"edge {e.source}->{e.target} references a dead node")
            if e.source == e.target:
                raise ReferentialViolation(f"self-loop on node {e.source}")
            if e.time != ev.time:
                raise ReferentialViolation("edge time differs from its event timestamp")
            edges.append(e)
            own(e.source)[e.target] = NeighborEntry(e.target, e.time, ev.ordinal, e.rel, True)
            own(e.target)[e.source] = NeighborEntry(e.source, e.time, ev.ordinal, e.rel, False)
        elif isinstance(p, StateUpdate):
            if p.node not in nodes:
                raise ReferentialViolation(f"state update for unknown node {p.node}")
            kind = nodes[p.node].kind
            check_state(kind, p.state)
            nodes[p.node] = NodeRecord(kind, tuple(p.state))
        else:  # pragma: no cover
            raise TypeError(f"unknown payload {p!r}")
        last = key
        applied += 1

    if applied == 0:
        step = snapshot.step + 1
    else:
        step = max(snapshot.step, step_of(last[0], dt))  # type: ignore[index]
    horizon = step - snapshot.window
    edges = [
        e for e in edges
        if e.source in nodes and e.target in nodes and step_of(e.time, dt) > horizon
    ]
    return GraphSnapshot(
        step=step,
        nodes=nodes,
        edges=tuple(edges),
        neighbors=nbrs,
        retired=retired,
        last_key=last,
        step_duration=dt,
        window=snapshot.window,
    )


def empty_snapshot(step_duration: float = 1.0, window: int = DEFAULT_WINDOW) -> GraphSnapshot:
    return GraphSnapshot(step=0, step_duration=step_duration, window=window)


def replay(log: EventLog, window: int = DEFAULT_WINDOW) -> GraphSnapshot:
    return apply_events(empty_snapshot(log.step_duration, window), log.events)


def replay_steps(log: EventLog, window: int = DEFAULT_WINDOW) -> list[GraphSnapshot]:
    """Snapshot after each macro step, indexed by step (missing steps are clock ticks)."""
    groups = log.by_step()
    if not groups:
        return []
    snaps = []
    snap = empty_snapshot(log.step_duration, window)
    for n in range(max(groups) + 1):
        events = groups.get(n, [])
        if events:
            snap = apply_events(snap, events)
        elif n > 0:
            snap = apply_events(snap, [])
        snaps.append(snap)
    return snaps


def temporal_neighbors(log: EventLog, node: int, t_n: float, k: int,
                       window: int = DEFAULT_WINDOW) -> TemporalNeighborhood:
    """The ``k`` most recent distinct live neighbors of ``node`` up to time ``t_n``.

    Ties on timestamp are broken by ordinal (higher is later).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    snap = replay(log.until(t_n), window)
    return snap.neighborhood(node, k)
