"""Losses and the maximum-likelihood training loop over logged transitions.

One transition is G_n -> G_{n+1}. Its loss is

    total = struct + lambda * state
    struct = -log p(edges of step n+1, then STOP | G_n)    (teacher forced)
    state  = sum over v in V_n and V_{n+1} of ||s_v - s_hat_v||^2

Edges of step n+1 touching a node that is not in V_n (a vehicle inserted in
that step) are exogenous and not scored. States are compared in the model's
normalized coordinates so that slots measured in different units weigh alike.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .encoder import EncoderInputs
from .generator import teacher_forced_rows
from .graph.snapshot import GraphSnapshot, replay_steps
from .graph.types import EdgeAdd, EventLog
from .model import TFM
from .numeric import tensor as T
from .numeric.params import adam_step
from .numeric.tensor import Tape, Tensor, backward


class InsufficientData(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class LossBreakdown:
    struct_loss: float
    state_loss: float
    total: float
    lambda_state: float = 1.0
    state_warning: bool = False  # no node survived into the next step


@dataclass
class Transition:
    step: int
    inputs: EncoderInputs
    edges: list[tuple[int, int, int]]   # (source row, target row, relation) in log order
    target_rows: np.ndarray             # rows of V_n that are also in V_{n+1}
    target_states: np.ndarray           # their raw states at n+1
    skipped_edges: int = 0              # exogenous edges left out of the likelihood


def state_loss(true: Mapping[int, Sequence[float]], predicted: Mapping[int, Sequence[float]]
               ) -> tuple[float, bool]:
    """Sum of squared errors over the nodes present in both maps; (0, True) when none are."""
    common = sorted(set(true) & set(predicted))
    if not common:
        return 0.0, True
    a = np.array([true[k] for k in common], dtype=np.float64)
    b = np.array([predicted[k] for k in common], dtype=np.float64)
    return float(np.sum((a - b) ** 2)), False


def build_transitions(log: EventLog, model: TFM, snapshots: Sequence[GraphSnapshot] | None = None
                      ) -> list[Transition]:
    snaps = list(snapshots) if snapshots is not None else replay_steps(log, model.config.window)
    by_step = log.by_step()
    out = []
    for n in range(len(snaps) - 1):
        cur, nxt = snaps[n], snaps[n + 1]
        inputs = model.inputs(cur)
        row = {int(i): r for r, i in enumerate(inputs.ids)}
        edges, skipped = [], 0
        for ev in by_step.get(n + 1, []):
            if isinstance(ev.payload, EdgeAdd):
                e = ev.payload.edge
                if e.source in row and e.target in row:
                    edges.append((row[e.source], row[e.target], int(e.rel)))
                else:
                    skipped += 1
        keep = [r for r, i in enumerate(inputs.ids) if int(i) in nxt.nodes]
        target = (np.array([nxt.nodes[int(inputs.ids[r])].state for r in keep])
                  if keep else np.zeros((0, inputs.states.shape[1] if inputs.n else 0)))
        out.append(Transition(n, inputs, edges, np.array(keep, dtype=np.int64), target, skipped))
    return out


def structure_loss(model: TFM, inputs: EncoderInputs, edges: Sequence[tuple[int, int, int]],
                   relations: bool = True) -> Tensor:
    encoded = model.encode_inputs(inputs)
    return T.mul(teacher_forced_rows(model.working_graph(encoded), edges, relations), -1.0)


def transition_loss(model: TFM, tr: Transition, lambda_state: float = 1.0,
                    relations: bool = True) -> tuple[Tensor, Tensor, Optional[Tensor]]:
    """(total, struct, state) tensors for one transition; state is None when lambda is 0."""
    encoded = model.encode_inputs(tr.inputs)
    working = model.working_graph(encoded)
    struct = T.mul(teacher_forced_rows(working, tr.edges, relations), -1.0)
    if lambda_state == 0 or len(tr.target_rows) == 0:
        return struct, struct, None
    pred = model.predict_states(encoded, working.h)
    kinds = tr.inputs.kinds[tr.target_rows]
    target = model.normalize(tr.target_states, kinds)
    diff = T.sub(T.gather(pred, tr.target_rows), T.Tensor(target))
    state = T.tensor_sum(T.square(diff))
    total = T.add(struct, T.mul(state, lambda_state))
    return total, struct, state


def evaluate(model: TFM, transitions: Sequence[Transition], lambda_state: float = 1.0) -> LossBreakdown:
    if not transitions:
        return LossBreakdown(math.nan, math.nan, math.nan, lambda_state)
    s_sum = st_sum = 0.0
    warn = False
    for tr in transitions:
        _, struct, state = transition_loss(model, tr, lambda_state)
        s_sum += struct.item()
        st_sum += state.item() if state is not None else 0.0
        warn |= len(tr.target_rows) == 0
    n = len(transitions)
    return LossBreakdown(s_sum / n, st_sum / n, s_sum / n + lambda_state * st_sum / n, lambda_state, warn)


@dataclass
class EpochRecord:
    epoch: int
    struct_loss: float
    state_loss: float
    total: float
    val_total: float
    seconds: float


@dataclass
class TrainResult:
    model: TFM
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0
    train_size: int = 0
    val_size: int = 0


def split_transitions(transitions: Sequence[Transition], split: float) -> tuple[list, list]:
    """Temporal prefix for training, the remainder for validation."""
    n_train = max(1, int(math.floor(split * len(transitions))))
    return list(transitions[:n_train]), list(transitions[n_train:])


def train(log: EventLog, model: TFM, cfg: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None,
          transitions: Sequence[Transition] | None = None) -> TrainResult:
    """Teacher-forced maximum-likelihood training; the model ends at its best-validation parameters."""
    cfg.validate()
    trs = list(transitions) if transitions is not None else build_transitions(log, model)
    if len(trs) < 1:
        raise InsufficientData("training needs a log spanning at least two macro steps")
    train_set, val_set = split_transitions(trs, cfg.split)
    rng = np.random.default_rng(cfg.seed)
    store = model.store
    result = TrainResult(model, train_size=len(train_set), val_size=len(val_set))
    best_score = math.inf
    best_values = store.copy_values()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        sums = np.zeros(3)
        for idx in rng.permutation(len(train_set)):
            tr = train_set[idx]
            store.zero_grad()
            with Tape() as tape:
                total, struct, state = transition_loss(model, tr, cfg.lambda_state)
            value = total.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch}, transition at step {tr.step}: loss is {value}")
            backward(tape, total, store)
            grad_norm = store.clip_grad_norm(cfg.clip_norm)
            if not math.isfinite(grad_norm):
                raise NonFiniteLoss(f"epoch {epoch}, transition at step {tr.step}: gradient norm {grad_norm}")
            step += 1
            adam_step(store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, step)
            sums += (struct.item(), state.item() if state is not None else 0.0, value)
        means = sums / len(train_set)
        val = evaluate(model, val_set, cfg.lambda_state).total if val_set else float(means[2])
        rec = EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]), float(val),
                          time.perf_counter() - started)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if val < best_score:
            best_score = val
            best_values = store.copy_values()
            result.best_epoch = epoch
    store.load_values(best_values)
    result.steps = step
    return result


HISTORY_FIELDS = ("epoch", "struct_loss", "state_loss", "total", "val_total")


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.struct_loss), repr(r.state_loss), repr(r.total), repr(r.val_total)])
