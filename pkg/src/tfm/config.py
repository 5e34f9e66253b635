"""Configuration records shared by the model, training, rollout and CLI.

Every config is a dataclass; ``from_dict`` fills defaults and rejects unknown
keys with the dotted path of the offender.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

from .graph.types import NUM_KINDS, STATE_DIM


class SchemaViolation(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise SchemaViolation(path, f"expected an object, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise SchemaViolation(path, "expected a list")
        (inner,) = get_args(tp)[:1] or (Any,)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(path, f"expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaViolation(path, f"expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise SchemaViolation(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict[str, Any], path: str = ""):
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise SchemaViolation(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{path}.{f.name}" if path else f.name)
    obj = cls(**kwargs)
    check = getattr(obj, "validate", None)
    if check is not None:
        try:
            check()
        except ValueError as exc:
            if isinstance(exc, SchemaViolation):
                raise
            raise SchemaViolation(path, str(exc)) from None
    return obj


def to_dict(obj) -> dict[str, Any]:
    return dataclasses.asdict(obj)


# per-kind scale of each state slot; the model works on state / scale
DEFAULT_STATE_SCALE = [
    [2.0, 1.0, 1000.0, 1.0, 1.0, 1.0, 1.0, 1.0],    # vehicle: speed, accel, position
    [2.0, 100.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],     # lane: mean speed, occupancy (veh/km)
    [1000.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],    # road: flow (veh/h)
    [1.0, 1.0, 30.0, 1.0, 1.0, 1.0, 1.0, 1.0],      # light: green, red, time in phase
]


@dataclass
class EncoderConfig:
    layers: int = 2
    d_model: int = 64
    d_w: int = 16
    d_q: int = 64
    k: int = 20
    attn_mode: str = "mean"

    def validate(self) -> None:
        for name in ("layers", "d_model", "d_w", "d_q", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.attn_mode not in ("mean", "standard"):
            raise ValueError(f"attn_mode must be 'mean' or 'standard', got {self.attn_mode!r}")


@dataclass
class UpdaterConfig:
    d_msg: Optional[int] = None  # message MLP hidden width; None means d_model

    def validate(self) -> None:
        if self.d_msg is not None and self.d_msg < 1:
            raise ValueError("d_msg must be >= 1")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    updater: UpdaterConfig = field(default_factory=UpdaterConfig)
    step_duration: float = 1.0
    window: int = 5
    state_scale: list[list[float]] = field(default_factory=lambda: [list(r) for r in DEFAULT_STATE_SCALE])
    v_max: float = 50.0
    a_max: float = 10.0
    precision: str = "double"

    def validate(self) -> None:
        if self.step_duration <= 0:
            raise ValueError("step_duration must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if len(self.state_scale) != NUM_KINDS or any(len(r) != STATE_DIM for r in self.state_scale):
            raise ValueError(f"state_scale must be {NUM_KINDS}x{STATE_DIM}")
        if any(x <= 0 for r in self.state_scale for x in r):
            raise ValueError("state_scale entries must be positive")
        if self.precision not in ("double", "single"):
            raise ValueError("precision must be 'double' or 'single'")

    @property
    def d_msg(self) -> int:
        return self.updater.d_msg or self.encoder.d_model


@dataclass
class GeneratorConfig:
    max_events: Optional[int] = None  # None means 4 x live nodes
    temperature: float = 1.0
    mode: str = "greedy"
    kind_mask: bool = False

    def validate(self) -> None:
        if self.max_events is not None and self.max_events < 0:
            raise ValueError("max_events must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.mode not in ("greedy", "sample"):
            raise ValueError(f"mode must be 'greedy' or 'sample', got {self.mode!r}")

    def limit(self, n_nodes: int) -> int:
        return 4 * n_nodes if self.max_events is None else self.max_events


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_state: float = 1.0
    seed: int = 0
    clip_norm: float = 5.0
    split: float = 0.8

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lambda_state < 0:
            raise ValueError("lambda_state must be >= 0")
        if not 0 < self.split <= 1:
            raise ValueError("split must be in (0, 1]")
