"""Dynamic transportation graph: data model, replay, neighborhoods, log I/O."""
from .io import LogFormatError, dumps_log, loads_log, read_log, write_log
from .snapshot import (
    DEFAULT_WINDOW,
    GraphSnapshot,
    NeighborEntry,
    NodeRecord,
    TemporalNeighborhood,
    apply_events,
    empty_snapshot,
    replay,
    replay_steps,
    temporal_neighbors,
)
from .types import (
    ACCEL,
    KIND_SLOT,
    NUM_KINDS,
    NUM_RELATIONS,
    POSITION,
    RELATION_KINDS,
    SPEED,
    STATE_DIM,
    DuplicateNodeAdd,
    EdgeAdd,
    EventLog,
    GraphError,
    GraphEvent,
    InteractionEdge,
    InvalidState,
    NodeAdd,
    NodeKind,
    NodeRemove,
    NonMonotoneTime,
    ReferentialViolation,
    Relation,
    StateUpdate,
    UnknownNode,
    check_state,
    make_state,
    step_of,
)
from .validate import ValidationReport, Violation, validate_log
