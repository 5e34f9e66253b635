"""A six-node, two-step world small enough for exhaustive numeric checks."""
from __future__ import annotations

from .config import EncoderConfig, ModelConfig
from .graph.types import (
    EdgeAdd,
    EventLog,
    GraphEvent,
    InteractionEdge,
    NodeAdd,
    NodeKind,
    Relation,
    StateUpdate,
    make_state,
)
from .model import TFM
from .numeric.params import ParamStore
from .numeric.tensor import Tensor
from .training import Transition, build_transitions, transition_loss

ROAD, LANE, LIGHT, V1, V2, V3 = range(6)


def toy_log() -> EventLog:
    """Road, lane, signal and three vehicles; step 0 sets them up, step 1 moves them."""
    veh = NodeKind.VEHICLE
    setup = [
        NodeAdd(ROAD, NodeKind.ROAD, make_state(NodeKind.ROAD, [620.0])),
        NodeAdd(LANE, NodeKind.LANE, make_state(NodeKind.LANE, [8.5, 30.0])),
        NodeAdd(LIGHT, NodeKind.TRAFFIC_LIGHT, make_state(NodeKind.TRAFFIC_LIGHT, [1.0, 0.0, 4.0])),
        NodeAdd(V1, veh, make_state(veh, [9.0, 0.3, 40.0])),
        NodeAdd(V2, veh, make_state(veh, [7.5, -0.6, 62.0])),
        NodeAdd(V3, veh, make_state(veh, [11.0, 0.1, 90.0])),
        EdgeAdd(InteractionEdge(LANE, ROAD, Relation.LANE_OF_ROAD, 0.0)),
        EdgeAdd(InteractionEdge(LIGHT, LANE, Relation.CONTROLS, 0.0)),
        EdgeAdd(InteractionEdge(V1, LANE, Relation.ON_LANE, 0.0)),
        EdgeAdd(InteractionEdge(V2, LANE, Relation.ON_LANE, 0.0)),
        EdgeAdd(InteractionEdge(V1, V2, Relation.FOLLOWS, 0.0)),
    ]
    step1 = [
        EdgeAdd(InteractionEdge(V3, LANE, Relation.ON_LANE, 1.0)),
        EdgeAdd(InteractionEdge(V1, V2, Relation.FOLLOWS, 1.0)),
        EdgeAdd(InteractionEdge(V2, V3, Relation.FOLLOWS, 1.0)),
        StateUpdate(V1, make_state(veh, [9.2, 0.1, 49.1])),
        StateUpdate(V2, make_state(veh, [7.0, -0.4, 69.3])),
        StateUpdate(V3, make_state(veh, [11.1, 0.0, 101.0])),
        StateUpdate(LANE, make_state(NodeKind.LANE, [9.1, 30.0])),
        StateUpdate(ROAD, make_state(NodeKind.ROAD, [982.8])),
        StateUpdate(LIGHT, make_state(NodeKind.TRAFFIC_LIGHT, [1.0, 0.0, 5.0])),
    ]
    events = [GraphEvent(0.0, i, p) for i, p in enumerate(setup)]
    events += [GraphEvent(1.0, i, p) for i, p in enumerate(step1)]
    return EventLog(events, 1.0)


def toy_config(d_model: int = 8, layers: int = 2, k: int = 4) -> ModelConfig:
    return ModelConfig(encoder=EncoderConfig(layers=layers, d_model=d_model, d_w=4, d_q=d_model, k=k))


def toy_problem(seed: int = 0, d_model: int = 8, layers: int = 2, k: int = 4) -> tuple[TFM, Transition]:
    model = TFM.init(toy_config(d_model, layers, k), seed)
    (tr,) = build_transitions(toy_log(), model)
    return model, tr


def toy_loss(model: TFM, tr: Transition, lambda_state: float = 1.0):
    """``store -> total loss`` closure for :func:`tfm.numeric.gradcheck.grad_check`."""

    def fn(store: ParamStore) -> Tensor:
        return transition_loss(model, tr, lambda_state)[0]

    return fn
