"""Temporal graph attention encoder producing node embeddings Z_n.

Each node starts from ``z0 = MLP(state) + kind_bias`` and is refined over
``layers`` rounds of attention over its temporal neighborhood::

    q   = [z_v || Phi(0)]
    k_u = v_u = [z_u || Phi(t_n - t_u)]
    a   = softmax_u((W_Q q) . (W_K k_u) / sqrt(d_q))
    z~  = (1/|N|) sum_u a_u (W_V v_u + rel_u)       # mode "mean"
    z~  =         sum_u a_u (W_V v_u + rel_u)       # mode "standard"
    z   = MLP([z || z~])

An empty neighborhood gives z~ = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import EncoderConfig
from .graph.snapshot import GraphSnapshot, TemporalNeighborhood
from .graph.types import NUM_KINDS, NUM_RELATIONS, STATE_DIM
from .numeric import tensor as T
from .numeric.nn import ParamView, init_mlp, init_time_encoding, mlp, time_encode
from .numeric.params import ParamStore
from .numeric.tensor import Tensor


@dataclass
class EncoderInputs:
    """Dense view of a snapshot: node rows in ascending id order plus padded neighbor tables."""

    ids: np.ndarray          # (N,) node ids
    kinds: np.ndarray        # (N,) NodeKind values
    states: np.ndarray       # (N, D) raw states
    nbr_idx: np.ndarray      # (N, K) row index of each neighbor (0 where padded)
    nbr_dt: np.ndarray       # (N, K) t_n - t of the last interaction
    nbr_rel: np.ndarray      # (N, K) 2 * relation + (1 if the node was the edge source)
    nbr_mask: np.ndarray     # (N, K) True for real neighbors
    t_n: float

    @property
    def n(self) -> int:
        return len(self.ids)

    def row(self, node: int) -> int:
        pos = int(np.searchsorted(self.ids, node))
        if pos >= len(self.ids) or self.ids[pos] != node:
            raise KeyError(node)
        return pos

    @property
    def counts(self) -> np.ndarray:
        return self.nbr_mask.sum(axis=1)


def relation_slot(rel: int, outgoing: bool) -> int:
    return 2 * int(rel) + (1 if outgoing else 0)


def build_inputs(snapshot: GraphSnapshot, k: int) -> EncoderInputs:
    ids = np.array(snapshot.node_ids(), dtype=np.int64)
    n = len(ids)
    row = {int(i): r for r, i in enumerate(ids)}
    kinds = np.array([int(snapshot.nodes[i].kind) for i in ids], dtype=np.int64)
    states = snapshot.state_matrix(list(ids)) if n else np.zeros((0, STATE_DIM))
    hoods = [snapshot.neighborhood(int(i), k) for i in ids]
    width = max([len(h) for h in hoods] + [1])
    nbr_idx = np.zeros((n, width), dtype=np.int64)
    nbr_dt = np.zeros((n, width))
    nbr_rel = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    t_n = snapshot.time
    for r, hood in enumerate(hoods):
        for j, e in enumerate(hood.neighbors):
            nbr_idx[r, j] = row[e.node]
            nbr_dt[r, j] = t_n - e.time
            nbr_rel[r, j] = relation_slot(e.rel, e.outgoing)
            mask[r, j] = True
    return EncoderInputs(ids, kinds, states, nbr_idx, nbr_dt, nbr_rel, mask, t_n)


def init_encoder(store: ParamStore, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    d, dw, dq = cfg.d_model, cfg.d_w, cfg.d_q
    init_time_encoding(store, "enc.time", dw, rng)
    init_mlp(store, "enc.embed", STATE_DIM, d, d, rng)
    store.glorot("enc.kind_bias", (NUM_KINDS, d), rng)
    for layer in range(1, cfg.layers + 1):
        pre = f"enc.l{layer}"
        store.glorot(f"{pre}.wq", (dq, d + dw), rng)
        store.glorot(f"{pre}.wk", (dq, d + dw), rng)
        store.glorot(f"{pre}.wv", (d, d + dw), rng)
        store.glorot(f"{pre}.rel", (2 * NUM_RELATIONS, d), rng)
        init_mlp(store, f"{pre}.mlp", 2 * d, d, d, rng)


def embed_initial(p: ParamView, states: Tensor, kinds: np.ndarray) -> Tensor:
    """Layer-0 embeddings: MLP of the (normalized) state plus a per-kind bias."""
    return T.add(mlp(p.sub("embed"), states), T.gather(p["kind_bias"], kinds))


def attention(p: ParamView, z_query: Tensor, z_all: Tensor, nbr_idx: np.ndarray,
              nbr_dt: np.ndarray, nbr_rel: np.ndarray, nbr_mask: np.ndarray, mode: str,
              phi_w: Tensor, phi_b: Tensor) -> tuple[Tensor, Tensor]:
    """Attended vectors z~ for each query row and the attention weights (n, K).

    ``nbr_idx`` indexes rows of ``z_all``; padded slots are masked out.
    """
    n, k = nbr_idx.shape
    dq = p["wq"].shape[0]
    phi0 = time_encode(np.zeros(n), phi_w, phi_b)
    query = T.linear(T.concat([z_query, phi0]), p["wq"])
    keys_in = T.concat([T.gather(z_all, nbr_idx), time_encode(nbr_dt, phi_w, phi_b)])
    keys = T.linear(keys_in, p["wk"])
    values = T.add(T.linear(keys_in, p["wv"]), T.gather(p["rel"], nbr_rel))
    scores = T.mul(T.tensor_sum(T.mul(T.reshape(query, (n, 1, dq)), keys), axis=-1),
                   1.0 / math.sqrt(dq))
    alpha = T.softmax(scores, axis=-1, mask=nbr_mask)
    attended = T.tensor_sum(T.mul(T.reshape(alpha, (n, k, 1)), values), axis=1)
    if mode == "mean":
        counts = nbr_mask.sum(axis=1)
        inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0).astype(z_query.dtype)
        attended = T.mul(attended, T.Tensor(inv[:, None]))
    elif mode != "standard":
        raise ValueError(f"unknown attention mode {mode!r}")
    return attended, alpha


def encode_inputs(p: ParamView, cfg: EncoderConfig, inputs: EncoderInputs, states: Tensor,
                  return_attention: bool = False):
    """Z_n for the rows of ``inputs``; ``states`` are the model-normalized states."""
    z = embed_initial(p, states, inputs.kinds)
    phi_w, phi_b = p["time.w"], p["time.b"]
    weights = []
    for layer in range(1, cfg.layers + 1):
        lp = p.sub(f"l{layer}")
        attended, alpha = attention(lp, z, z, inputs.nbr_idx, inputs.nbr_dt, inputs.nbr_rel,
                                    inputs.nbr_mask, cfg.attn_mode, phi_w, phi_b)
        weights.append(alpha)
        z = mlp(lp.sub("mlp"), T.concat([z, attended]))
    return (z, weights) if return_attention else z


def attention_layer(p: ParamView, center: Tensor, neighborhood: TemporalNeighborhood,
                    neighbor_embeddings: Tensor | None, t_n: float, mode: str,
                    phi_w: Tensor, phi_b: Tensor) -> tuple[Tensor, Tensor]:
    """Attention for one node.

    ``center`` is z_v with shape (d,); row j of ``neighbor_embeddings`` belongs to
    ``neighborhood.neighbors[j]``. Returns z~_v (d,) and the weights (K,).
    """
    k = len(neighborhood)
    if k == 0:
        return T.Tensor(np.zeros(center.shape, dtype=center.dtype)), T.Tensor(np.zeros(0))
    attended, alpha = attention(
        p,
        T.reshape(center, (1, -1)),
        neighbor_embeddings,
        np.arange(k)[None, :],
        np.array([[t_n - e.time for e in neighborhood.neighbors]]),
        np.array([[relation_slot(e.rel, e.outgoing) for e in neighborhood.neighbors]]),
        np.ones((1, k), dtype=bool),
        mode, phi_w, phi_b,
    )
    return T.reshape(attended, (-1,)), T.reshape(alpha, (-1,))
