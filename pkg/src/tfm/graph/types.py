"""Core data model of the dynamic transportation graph."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

STATE_DIM = 8
PAYLOAD_SLOTS = 4
KIND_SLOT = PAYLOAD_SLOTS  # one-hot occupies slots 4..7

# vehicle payload
SPEED, ACCEL, POSITION = 0, 1, 2
# lane payload
LANE_MEAN_SPEED, LANE_OCCUPANCY = 0, 1
# road payload
ROAD_FLOW = 0
# traffic light payload
LIGHT_GREEN, LIGHT_RED, LIGHT_TIME_IN_PHASE = 0, 1, 2


class GraphError(Exception):
    """Base class for graph integrity errors."""


class ReferentialViolation(GraphError):
    pass


class DuplicateNodeAdd(GraphError):
    pass


class NonMonotoneTime(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class InvalidState(GraphError):
    pass


class NodeKind(enum.IntEnum):
    VEHICLE = 0
    LANE = 1
    ROAD = 2
    TRAFFIC_LIGHT = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, label: str) -> "NodeKind":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown node kind {label!r}") from None


class Relation(enum.IntEnum):
    FOLLOWS = 0
    ON_LANE = 1
    LANE_OF_ROAD = 2
    CONTROLS = 3
    ADJACENT_LANE = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, label: str) -> "Relation":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown relation {label!r}") from None


NUM_KINDS = len(NodeKind)
NUM_RELATIONS = len(Relation)

# (source kind, target kind) pairs each relation may connect
RELATION_KINDS = {
    Relation.FOLLOWS: (NodeKind.VEHICLE, NodeKind.VEHICLE),
    Relation.ON_LANE: (NodeKind.VEHICLE, NodeKind.LANE),
    Relation.LANE_OF_ROAD: (NodeKind.LANE, NodeKind.ROAD),
    Relation.CONTROLS: (NodeKind.TRAFFIC_LIGHT, NodeKind.LANE),
    Relation.ADJACENT_LANE: (NodeKind.LANE, NodeKind.LANE),
}


def make_state(kind: NodeKind, payload: Sequence[float] = ()) -> tuple[float, ...]:
    """Build a state vector: payload in slots 0..3, kind one-hot in slots 4..7."""
    if len(payload) > PAYLOAD_SLOTS:
        raise InvalidState(f"payload of length {len(payload)} exceeds {PAYLOAD_SLOTS} slots")
    values = [0.0] * STATE_DIM
    for i, x in enumerate(payload):
        values[i] = float(x)
    values[KIND_SLOT + int(kind)] = 1.0
    return tuple(values)


def check_state(kind: NodeKind, state: Sequence[float]) -> None:
    if len(state) != STATE_DIM:
        raise InvalidState(f"state has length {len(state)}, expected {STATE_DIM}")
    if not all(math.isfinite(x) for x in state):
        raise InvalidState("state has non-finite entries")
    onehot = state[KIND_SLOT:KIND_SLOT + NUM_KINDS]
    expected = [1.0 if k == int(kind) else 0.0 for k in range(NUM_KINDS)]
    if list(onehot) != expected:
        raise InvalidState(f"kind one-hot {list(onehot)} inconsistent with {kind.label}")


@dataclass(frozen=True)
class InteractionEdge:
    source: int
    target: int
    rel: Relation
    time: float


@dataclass(frozen=True)
class NodeAdd:
    node: int
    kind: NodeKind
    state: tuple[float, ...]


@dataclass(frozen=True)
class NodeRemove:
    node: int


@dataclass(frozen=True)
class EdgeAdd:
    edge: InteractionEdge


@dataclass(frozen=True)
class StateUpdate:
    node: int
    state: tuple[float, ...]


Payload = Union[NodeAdd, NodeRemove, EdgeAdd, StateUpdate]


@dataclass(frozen=True)
class GraphEvent:
    time: float
    ordinal: int
    payload: Payload

    @property
    def key(self) -> tuple[float, int]:
        return (self.time, self.ordinal)


def step_of(time: float, step_duration: float) -> int:
    """Macro-step index containing a timestamp."""
    return int(math.floor(time / step_duration + 1e-9))


@dataclass
class EventLog:
    """Time-ordered event stream; the canonical dataset and simulation output."""

    events: list[GraphEvent] = field(default_factory=list)
    step_duration: float = 1.0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[GraphEvent]:
        return iter(self.events)

    def step_of(self, time: float) -> int:
        return step_of(time, self.step_duration)

    def by_step(self) -> dict[int, list[GraphEvent]]:
        groups: dict[int, list[GraphEvent]] = {}
        for ev in self.events:
            groups.setdefault(self.step_of(ev.time), []).append(ev)
        return groups

    def until(self, time: float) -> "EventLog":
        """Prefix of events with timestamp <= time."""
        return EventLog([e for e in self.events if e.time <= time + 1e-12], self.step_duration)


def state_array(state: Sequence[float]) -> np.ndarray:
    return np.asarray(state, dtype=np.float64)
