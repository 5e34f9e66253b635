"""Named parameter storage, initialization and the Adam optimizer."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor


class Param:
    __slots__ = ("name", "value", "grad", "m", "v")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)


class ParamStore:
    """Ordered map name -> (value, gradient, Adam moments)."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Param] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def size(self) -> int:
        return sum(p.value.size for p in self)

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        p = Param(name, np.array(value, dtype=self.dtype))
        self._params[name] = p
        return p

    def glorot(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Param:
        """Uniform on +-sqrt(6 / (fan_in + fan_out)); 1-d shapes use fan_in = 1."""
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], 1)
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Param:
        return self.add(name, np.zeros(shape))

    def tensor(self, name: str) -> Tensor:
        p = self._params[name]
        return Tensor(p.value, requires_grad=True, param=p)

    def zero_grad(self) -> None:
        for p in self:
            p.grad.fill(0.0)

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm > 0 and norm > max_norm:
            scale = max_norm / norm
            for p in self:
                p.grad *= scale
        return norm

    def values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self}

    def copy_values(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self._params[name]
            if p.value.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.value.shape}")
            p.value[...] = arr

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for p in self:
            out.add(p.name, p.value)
        return out


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1) -> None:
    """One bias-corrected Adam update, in place."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in store:
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
