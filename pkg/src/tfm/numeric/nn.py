"""Neural building blocks on top of the tape ops."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .params import ParamStore
from .tensor import Tensor


class ParamView:
    """Tensors for the parameters under one name prefix, cached per forward pass."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix
        self._cache: dict[str, Tensor] = {}

    def __getitem__(self, key: str) -> Tensor:
        t = self._cache.get(key)
        if t is None:
            t = self._cache[key] = self.store.tensor(f"{self.prefix}.{key}")
        return t

    def sub(self, prefix: str) -> "ParamView":
        return ParamView(self.store, f"{self.prefix}.{prefix}")


def init_mlp(store: ParamStore, prefix: str, d_in: int, d_hidden: int, d_out: int,
             rng: np.random.Generator) -> None:
    store.glorot(f"{prefix}.w1", (d_hidden, d_in), rng)
    store.zeros(f"{prefix}.b1", (d_hidden,))
    store.glorot(f"{prefix}.w2", (d_out, d_hidden), rng)
    store.zeros(f"{prefix}.b2", (d_out,))


def mlp(p: ParamView, x: Tensor) -> Tensor:
    """Two affine layers with a ReLU between them."""
    return T.linear(T.relu(T.linear(x, p["w1"], p["b1"])), p["w2"], p["b2"])


def init_gru(store: ParamStore, prefix: str, d_in: int, d_hidden: int,
             rng: np.random.Generator) -> None:
    for gate in ("z", "r", "h"):
        store.glorot(f"{prefix}.w{gate}", (d_hidden, d_in + d_hidden), rng)
        store.zeros(f"{prefix}.b{gate}", (d_hidden,))


def gru_cell(p: ParamView, x: Tensor, h: Tensor) -> Tensor:
    """Gated recurrent update of hidden ``h`` (rows) given input ``x`` (rows).

    z = sigmoid(Wz [x||h] + bz), r = sigmoid(Wr [x||h] + br),
    h~ = tanh(Wh [x||r*h] + bh), h' = (1 - z) * h + z * h~
    """
    if x.shape[:-1] != h.shape[:-1]:
        raise T.ShapeMismatch(f"gru_cell: input {x.shape} vs hidden {h.shape}")
    xh = T.concat([x, h])
    z = T.sigmoid(T.linear(xh, p["wz"], p["bz"]))
    r = T.sigmoid(T.linear(xh, p["wr"], p["br"]))
    cand = T.tanh(T.linear(T.concat([x, T.mul(r, h)]), p["wh"], p["bh"]))
    return T.add(h, T.mul(z, T.sub(cand, h)))


def init_time_encoding(store: ParamStore, prefix: str, d_w: int, rng: np.random.Generator) -> None:
    store.glorot(f"{prefix}.w", (d_w,), rng)
    store.glorot(f"{prefix}.b", (d_w,), rng)


def time_encode(delta_t, w: Tensor, b: Tensor) -> Tensor:
    """(1/sqrt(d_w)) * cos(w * delta_t + b), broadcast over any shape of ``delta_t``."""
    d_w = w.shape[0]
    dt = np.asarray(delta_t, dtype=w.dtype)[..., None]
    return T.mul(T.cos(T.add(T.mul(T.Tensor(dt), w), b)), 1.0 / math.sqrt(d_w))


def softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    return T.softmax(logits, axis=-1, mask=mask)
