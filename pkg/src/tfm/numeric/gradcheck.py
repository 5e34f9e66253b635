"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .params import ParamStore
from .tensor import Tape, Tensor, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    coords: int


@dataclass
class GradCheckReport:
    params: dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.params.values()), default=0.0)

    def failures(self, tol: float) -> list[ParamCheck]:
        return [c for c in self.params.values() if c.max_rel_error >= tol]

    def lines(self) -> list[str]:
        return [
            f"{c.name:40s} coords={c.coords:6d} max_rel_err={c.max_rel_error:.3e} "
            f"(analytic={c.analytic:+.6e} fd={c.numeric:+.6e} at {c.worst_index})"
            for c in self.params.values()
        ]


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(fn: Callable[[ParamStore], Tensor], store: ParamStore, h: float = 1e-5,
               names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn`` against central differences, coordinate by coordinate.

    ``fn`` must be deterministic for fixed parameter values.
    """
    store.zero_grad()
    with Tape() as tape:
        loss = fn(store)
    backward(tape, loss, store)
    analytic = {p.name: p.grad.copy() for p in store}

    report = GradCheckReport()
    for name in (names if names is not None else store.names()):
        p = store[name]
        fd = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        out = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn(store).item()
            flat[i] = orig - h
            f_minus = fn(store).item()
            flat[i] = orig
            out[i] = (f_plus - f_minus) / (2.0 * h)
        err = rel_error(analytic[name], fd)
        worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        report.params[name] = ParamCheck(
            name=name,
            max_rel_error=float(err.max()) if err.size else 0.0,
            worst_index=tuple(int(i) for i in worst),
            analytic=float(analytic[name][worst]) if err.size else 0.0,
            numeric=float(fd[worst]) if err.size else 0.0,
            coords=int(p.value.size),
        )
    store.zero_grad()
    return report
