"""Autoregressive interaction generator.

An edge is drawn as a chain ``p(u) * p(v | u) * p(r | u, v)``::

    p(u)       = softmax over live nodes plus STOP of MLP_u(z_u) / tau
    p(v | u)   = softmax over live v != u of MLP_v([z_u || z_v]) / tau
    p(r | u,v) = softmax of MLP_r([z_u || z_v]) / tau

STOP is a learned vector ``e_stop`` scored by the same head as nodes,
MLP_u(e_stop). After each edge the two endpoints receive messages and their
embeddings are refreshed by the updater's GRU, so the next draw conditions
on everything generated so far in the step.

The first layer of MLP_v is split as ``W_u z_u + W_v z_v + b``; the ``W_v z_v``
part is kept for every node and only the two refreshed rows are recomputed,
which makes one draw cost O(N d) instead of O(N d^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import GeneratorConfig
from .graph.types import NUM_KINDS, NUM_RELATIONS, RELATION_KINDS, InteractionEdge, Relation
from .numeric import tensor as T
from .numeric.nn import ParamView, init_mlp, mlp
from .numeric.params import ParamStore
from .numeric.tensor import Tensor
from .updater import MessageState, _owned, refresh_embeddings


class EmptyGraph(ValueError):
    pass


class NoValidTarget(ValueError):
    pass


class EventReferencesDeadNode(KeyError):
    pass


def init_generator(store: ParamStore, d: int, rng: np.random.Generator) -> None:
    init_mlp(store, "gen.src", d, d, 1, rng)
    store.glorot("gen.stop", (d,), rng)
    limit = math.sqrt(6.0 / (3 * d))  # Glorot bound of the unsplit (d, 2d) matrix
    w1 = rng.uniform(-limit, limit, size=(d, 2 * d))
    store.add("gen.dst.w1u", w1[:, :d])
    store.add("gen.dst.w1v", w1[:, d:])
    store.zeros("gen.dst.b1", (d,))
    store.glorot("gen.dst.w2", (1, d), rng)
    store.zeros("gen.dst.b2", (1,))
    init_mlp(store, "gen.rel", 2 * d, d, NUM_RELATIONS, rng)


def _compat() -> np.ndarray:
    table = np.zeros((NUM_KINDS, NUM_KINDS, NUM_RELATIONS), dtype=bool)
    for rel, (a, b) in RELATION_KINDS.items():
        table[int(a), int(b), int(rel)] = True
    return table


REL_COMPAT = _compat()
PAIR_COMPAT = REL_COMPAT.any(axis=2)


class WorkingGraph:
    """The within-step graph: base rows, edges generated so far and refreshed embeddings.

    Rows follow ``ids`` (ascending node id). ``z`` and ``states`` are row tables
    aligned with ``ids``; ``states`` are model-normalized.
    """

    def __init__(self, store: ParamStore, ids: np.ndarray, kinds: np.ndarray, z: Tensor,
                 states: Tensor, delta_t: float, temperature: float = 1.0, kind_mask: bool = False):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.kinds = np.asarray(kinds, dtype=np.int64)
        self.n = len(self.ids)
        self.delta_t = float(delta_t)
        self.inv_tau = 1.0 / float(temperature)
        self.kind_mask = kind_mask
        self.gp = ParamView(store, "gen")
        self.up = ParamView(store, "upd")
        self.edges: list[tuple[int, int, int]] = []
        self.messages = MessageState(states)
        d = self.gp["stop"].shape[0]
        if self.n:
            self.z = _owned(z)
            self.src = mlp(self.gp.sub("src"), self.z)
            self.pb = T.linear(self.z, self.gp["dst.w1v"])
        else:
            self.z = Tensor(np.zeros((0, d)))
        self.stop = mlp(self.gp.sub("src"), T.reshape(self.gp["stop"], (1, d)))
        self._row = {int(i): r for r, i in enumerate(self.ids)}
        if kind_mask:
            present = np.bincount(self.kinds, minlength=NUM_KINDS)
            ok = PAIR_COMPAT[self.kinds]  # (n, kinds)
            same = np.diag(PAIR_COMPAT)[self.kinds]
            # a node needs a compatible partner other than itself
            counts = ok.astype(np.int64) @ present - same.astype(np.int64)
            self.valid_source = counts > 0
        else:
            self.valid_source = np.full(self.n, self.n >= 2)
        self.source_mask = np.append(self.valid_source, True)

    # ------------------------------------------------------------------ lookups

    def row(self, node: int) -> int:
        try:
            return self._row[int(node)]
        except KeyError:
            raise EventReferencesDeadNode(f"node {node} is not alive in this step") from None

    @property
    def h(self) -> Tensor:
        return self.messages.h

    # ------------------------------------------------------------ distributions

    def source_log_probs(self) -> Tensor:
        """Log-probabilities over rows plus STOP (last entry)."""
        if self.n:
            logits = T.concat([T.reshape(self.src, (self.n,)), T.reshape(self.stop, (1,))])
        else:
            logits = T.reshape(self.stop, (1,))
        if self.inv_tau != 1.0:
            logits = T.mul(logits, self.inv_tau)
        return T.log_softmax(logits, mask=self.source_mask)

    def target_mask(self, u: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[u] = False
        if self.kind_mask:
            mask &= PAIR_COMPAT[self.kinds[u], self.kinds]
        return mask

    def target_log_probs(self, u: int) -> Tensor:
        mask = self.target_mask(u)
        if not mask.any():
            raise NoValidTarget(f"node {self.ids[u]} has no admissible target")
        p = self.gp.sub("dst")
        offset = T.linear(T.gather(self.z, u), p["w1u"], p["b1"])
        w2 = T.reshape(p["w2"], (p["w2"].shape[1],))
        scores = T.pair_scores(self.pb, offset, w2, p["b2"])
        if self.inv_tau != 1.0:
            scores = T.mul(scores, self.inv_tau)
        return T.log_softmax(scores, mask=mask)

    def relation_log_probs(self, u: int, v: int) -> Tensor:
        logits = mlp(self.gp.sub("rel"), T.concat([T.gather(self.z, u), T.gather(self.z, v)]))
        if self.inv_tau != 1.0:
            logits = T.mul(logits, self.inv_tau)
        mask = REL_COMPAT[self.kinds[u], self.kinds[v]] if self.kind_mask else None
        return T.log_softmax(logits, mask=mask)

    # ------------------------------------------------------------------ refresh

    def advance(self, u: int, v: int, rel: int) -> None:
        """Add edge (u, v, rel) by row index and refresh the two endpoint rows."""
        rows = self.messages.step(self.up, u, v, rel)
        new_z = refresh_embeddings(self.up, T.gather(self.messages.h, rows),
                                   T.gather(self.z, rows), self.delta_t)
        self.z = T.row_update(self.z, rows, new_z)
        self.src = T.row_update(self.src, rows, mlp(self.gp.sub("src"), new_z))
        self.pb = T.row_update(self.pb, rows, T.linear(new_z, self.gp["dst.w1v"]))
        self.edges.append((u, v, rel))


@dataclass
class EventDistribution:
    """Probabilities of the next event. ``source[-1]`` is STOP."""

    source: np.ndarray
    no_valid_target: np.ndarray  # rows masked out because no target is admissible
    working: WorkingGraph = field(repr=False)

    @property
    def stop(self) -> float:
        return float(self.source[-1])

    @property
    def empty(self) -> bool:
        return self.working.n == 0

    def target(self, u: int) -> np.ndarray:
        return np.exp(self.working.target_log_probs(u).data)

    def relation(self, u: int, v: int) -> np.ndarray:
        return np.exp(self.working.relation_log_probs(u, v).data)


def next_event_distribution(working: WorkingGraph) -> EventDistribution:
    return EventDistribution(np.exp(working.source_log_probs().data), ~working.valid_source, working)


@dataclass
class EventProposal:
    """One decoded event; ``source is None`` marks STOP."""

    source: int | None
    target: int | None
    rel: Relation | None
    log_prob: float

    @property
    def is_stop(self) -> bool:
        return self.source is None


@dataclass
class StepResult:
    edges: list[InteractionEdge]
    log_prob: float
    proposals: list[EventProposal]


def _choose(logp: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if mode == "greedy":
        return int(np.argmax(logp))
    if rng is None:
        raise ValueError("sampling needs a random generator")
    p = np.exp(logp - np.max(logp))
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(p) - 1)


def generate_step(working: WorkingGraph, cfg: GeneratorConfig, time: float,
                  rng: np.random.Generator | None = None) -> StepResult:
    """Decode edges until STOP or the event limit; edges are stamped with ``time``."""
    limit = cfg.limit(working.n)
    edges: list[InteractionEdge] = []
    proposals: list[EventProposal] = []
    total = 0.0
    for _ in range(limit):
        ls = working.source_log_probs().data
        u = _choose(ls, cfg.mode, rng)
        if u == working.n:
            proposals.append(EventProposal(None, None, None, float(ls[u])))
            total += float(ls[u])
            break
        lt = working.target_log_probs(u).data
        v = _choose(lt, cfg.mode, rng)
        lr = working.relation_log_probs(u, v).data
        r = _choose(lr, cfg.mode, rng)
        lp = float(ls[u] + lt[v] + lr[r])
        total += lp
        su, sv = int(working.ids[u]), int(working.ids[v])
        proposals.append(EventProposal(su, sv, Relation(r), lp))
        edges.append(InteractionEdge(su, sv, Relation(r), time))
        working.advance(u, v, r)
    return StepResult(edges, total, proposals)


def teacher_forced_log_prob(working: WorkingGraph, events: Sequence[InteractionEdge],
                            relations: bool = True) -> Tensor:
    """log p of the forced edge sequence followed by STOP, refreshing as in generation.

    With ``relations=False`` only the source/target chain is scored.
    """
    triples = [(working.row(e.source), working.row(e.target), int(e.rel)) for e in events]
    return teacher_forced_rows(working, triples, relations)


def teacher_forced_rows(working: WorkingGraph, triples: Sequence[tuple[int, int, int]],
                        relations: bool = True) -> Tensor:
    terms = []
    for u, v, r in triples:
        if u == v:
            raise ValueError(f"self-loop on node {working.ids[u]}")
        terms.append(T.pick(working.source_log_probs(), u))
        terms.append(T.pick(working.target_log_probs(u), v))
        if relations:
            terms.append(T.pick(working.relation_log_probs(u, v), r))
        working.advance(u, v, r)
    terms.append(T.pick(working.source_log_probs(), working.n))
    if len(terms) == 1:
        return terms[0]
    return T.tensor_sum(T.concat([T.reshape(t, (1,)) for t in terms]))
