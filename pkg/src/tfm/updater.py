"""State updater: message passing over new interactions and a time-aware GRU.

Per node ``h`` starts at the node's (normalized) state. Each new edge
``(u, v, r)`` sends two messages computed from the current ``h`` values::

    m_to_v = MLP_msg([h_u || h_v || E[2r]])
    m_to_u = MLP_msg([h_v || h_u || E[2r + 1]])

and a node that has received messages holds their running mean. Edges are
folded in order, so a later edge sees ``h`` values already shifted by earlier
ones; this is how neighbors of an endpoint are influenced indirectly within
a step. Every node then goes through

    h' = GRU([h || phi(dt)], z)
    s  = W_o h' + W_s s_hat + b

where ``s_hat`` is the current normalized state.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import ModelConfig
from .graph.types import KIND_SLOT, NUM_KINDS, NUM_RELATIONS, STATE_DIM, NodeKind
from .numeric import tensor as T
from .numeric.nn import ParamView, gru_cell, init_gru, init_mlp, init_time_encoding, mlp, time_encode
from .numeric.params import ParamStore
from .numeric.tensor import Tensor

# payload slots that carry meaning for each kind; the rest is zero padding
PAYLOAD_WIDTH = {
    NodeKind.VEHICLE: 3,
    NodeKind.LANE: 2,
    NodeKind.ROAD: 1,
    NodeKind.TRAFFIC_LIGHT: 3,
}


class NonFiniteState(FloatingPointError):
    pass


def init_updater(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d, dw = cfg.encoder.d_model, cfg.encoder.d_w
    init_mlp(store, "upd.msg", 3 * STATE_DIM, cfg.d_msg, STATE_DIM, rng)
    store.glorot("upd.rel", (2 * NUM_RELATIONS, STATE_DIM), rng)
    init_time_encoding(store, "upd.time", dw, rng)
    init_gru(store, "upd.gru", STATE_DIM + dw, d, rng)
    store.glorot("upd.head.wo", (STATE_DIM, d), rng)
    store.glorot("upd.head.ws", (STATE_DIM, STATE_DIM), rng)
    store.zeros("upd.head.b", (STATE_DIM,))


class MessageState:
    """Running message means ``h`` for every row of a node table."""

    def __init__(self, states: Tensor):
        n = states.shape[0]
        self.h = _owned(states)
        self.sums = Tensor(np.zeros(states.shape, dtype=states.dtype))
        self.counts = np.zeros(n, dtype=np.int64)

    def step(self, p: ParamView, u: int, v: int, rel: int) -> np.ndarray:
        """Fold one edge u -> v into ``h``; returns the rows that changed."""
        if u == v:
            raise ValueError("self-loop edges carry no message")
        rows = np.array([v, u])
        # row 0 is the message to v, row 1 the message to u
        sender = T.gather(self.h, np.array([u, v]))
        receiver = T.gather(self.h, rows)
        emb = T.gather(p["rel"], np.array([2 * rel, 2 * rel + 1]))
        msgs = mlp(p.sub("msg"), T.concat([sender, receiver, emb]))
        new_sums = T.add(T.gather(self.sums, rows), msgs)
        self.sums = T.row_update(self.sums, rows, new_sums)
        self.counts[rows] += 1
        inv = (1.0 / self.counts[rows]).astype(msgs.dtype)[:, None]
        self.h = T.row_update(self.h, rows, T.mul(new_sums, T.Tensor(inv)))
        return rows


def _owned(t: Tensor) -> Tensor:
    """``t`` itself when a tape records it, else a private copy safe to update in place."""
    tape = T.active_tape()
    if tape is not None and t.requires_grad:
        return t
    return Tensor(t.data.copy())


def message_pass(p: ParamView, states: Tensor, edges: Sequence[tuple[int, int, int]]) -> Tensor:
    """``h`` for every row after folding ``edges`` (row-index triples) in order."""
    ms = MessageState(states)
    for u, v, rel in edges:
        ms.step(p, int(u), int(v), int(rel))
    return ms.h


def refresh_embeddings(p: ParamView, h_rows: Tensor, z_rows: Tensor, delta_t: float) -> Tensor:
    """GRU refresh of embeddings for rows that just received messages."""
    phi = time_encode(np.full(h_rows.shape[0], delta_t), p["time.w"], p["time.b"])
    return gru_cell(p.sub("gru"), T.concat([h_rows, phi]), z_rows)


def update_states(p: ParamView, h: Tensor, z: Tensor, states: Tensor, delta_t: float) -> Tensor:
    """Predicted next normalized states for every row (before clamping)."""
    if not (h.shape[0] == z.shape[0] == states.shape[0]):
        raise T.ShapeMismatch(f"h {h.shape}, z {z.shape} and states {states.shape} disagree")
    hidden = refresh_embeddings(p, h, z, delta_t)
    head = p.sub("head")
    return T.add(T.linear(hidden, head["wo"], head["b"]), T.linear(states, head["ws"]))


def clamp_states(states: np.ndarray, kinds: np.ndarray, v_max: float, a_max: float) -> np.ndarray:
    """Physical bounds on raw states, plus the kind one-hot and zero padding restored."""
    if not np.all(np.isfinite(states)):
        raise NonFiniteState("predicted states contain non-finite values")
    out = np.array(states, dtype=np.float64)
    kinds = np.asarray(kinds)
    out[:, KIND_SLOT:KIND_SLOT + NUM_KINDS] = np.eye(NUM_KINDS)[kinds]
    for kind, width in PAYLOAD_WIDTH.items():
        rows = kinds == int(kind)
        out[np.ix_(rows, np.arange(width, KIND_SLOT))] = 0.0
    veh = kinds == int(NodeKind.VEHICLE)
    out[veh, 0] = np.clip(out[veh, 0], 0.0, v_max)
    out[veh, 1] = np.clip(out[veh, 1], -a_max, a_max)
    lane = kinds == int(NodeKind.LANE)
    out[lane, 0] = np.clip(out[lane, 0], 0.0, v_max)
    out[lane, 1] = np.maximum(out[lane, 1], 0.0)
    road = kinds == int(NodeKind.ROAD)
    out[road, 0] = np.maximum(out[road, 0], 0.0)
    light = kinds == int(NodeKind.TRAFFIC_LIGHT)
    out[light, 0:2] = np.clip(out[light, 0:2], 0.0, 1.0)
    out[light, 2] = np.maximum(out[light, 2], 0.0)
    return out
