"""The full model: parameters, state normalization, one-step forward pieces and persistence."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import encoder as enc
from .config import ModelConfig, from_dict, to_dict
from .generator import WorkingGraph, init_generator
from .graph.snapshot import GraphSnapshot
from .numeric import checkpoint as ckpt
from .numeric.nn import ParamView
from .numeric.params import ParamStore
from .numeric.tensor import Tensor
from .updater import clamp_states, init_updater, update_states


@dataclass
class Encoded:
    inputs: enc.EncoderInputs
    states: Tensor  # normalized
    z: Tensor


class TFM:
    """Encoder, generator and updater sharing one parameter store."""

    def __init__(self, config: ModelConfig, store: ParamStore, seed: int = 0):
        self.config = config
        self.store = store
        self.seed = seed
        self.scale = np.asarray(config.state_scale, dtype=np.float64)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "TFM":
        config.validate()
        rng = np.random.default_rng(seed)
        store = ParamStore(np.float64)
        enc.init_encoder(store, config.encoder, rng)
        init_generator(store, config.encoder.d_model, rng)
        init_updater(store, config, rng)
        if config.precision == "single":
            store = store.astype(np.float32)
        return cls(config, store, seed)

    @property
    def dtype(self):
        return self.store.dtype

    # ------------------------------------------------------------ normalization

    def normalize(self, states: np.ndarray, kinds: np.ndarray) -> np.ndarray:
        return (np.asarray(states) / self.scale[kinds]).astype(self.dtype)

    def denormalize(self, states: np.ndarray, kinds: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.float64) * self.scale[kinds]

    # ----------------------------------------------------------------- forward

    def inputs(self, snapshot: GraphSnapshot) -> enc.EncoderInputs:
        return enc.build_inputs(snapshot, self.config.encoder.k)

    def encode_inputs(self, inputs: enc.EncoderInputs) -> Encoded:
        states = Tensor(self.normalize(inputs.states, inputs.kinds))
        if inputs.n == 0:
            z = Tensor(np.zeros((0, self.config.encoder.d_model), dtype=self.dtype))
        else:
            z = enc.encode_inputs(ParamView(self.store, "enc"), self.config.encoder, inputs, states)
        return Encoded(inputs, states, z)

    def encode(self, snapshot: GraphSnapshot) -> Encoded:
        return self.encode_inputs(self.inputs(snapshot))

    def working_graph(self, encoded: Encoded, temperature: float = 1.0,
                      kind_mask: bool = False) -> WorkingGraph:
        return WorkingGraph(self.store, encoded.inputs.ids, encoded.inputs.kinds, encoded.z,
                            encoded.states, self.config.step_duration, temperature, kind_mask)

    def predict_states(self, encoded: Encoded, h: Tensor) -> Tensor:
        """Normalized next states for every row, unclamped."""
        return update_states(ParamView(self.store, "upd"), h, encoded.z, encoded.states,
                             self.config.step_duration)

    def commit_states(self, predicted: Tensor, kinds: np.ndarray) -> np.ndarray:
        """Raw, clamped states ready to be written into the next snapshot."""
        raw = self.denormalize(predicted.data, kinds)
        return clamp_states(raw, kinds, self.config.v_max, self.config.a_max)

    # ------------------------------------------------------------- persistence

    def config_dict(self) -> dict[str, Any]:
        return to_dict(self.config)

    def to_bytes(self, step: int = 0, extra: dict[str, Any] | None = None) -> bytes:
        config = {"model": self.config_dict()}
        if extra:
            config.update(extra)
        return ckpt.encode(self.store.values(), config, self.seed, step)

    def save(self, path: str | Path, step: int = 0, extra: dict[str, Any] | None = None) -> str:
        blob = self.to_bytes(step, extra)
        ckpt.write(path, blob)
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["TFM", dict[str, Any]]:
        header, params = ckpt.decode(blob)
        try:
            config = from_dict(ModelConfig, header["config"]["model"])
        except (KeyError, TypeError) as exc:
            raise ckpt.CorruptCheckpoint(f"header has no usable model config: {exc}") from None
        model = cls.init(config, int(header.get("seed", 0)))
        expected = {p.name: (p.value.shape, p.value.dtype) for p in model.store}
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ckpt.VersionMismatch(f"parameter set differs: missing {missing}, unexpected {extra}")
        for name, arr in params.items():
            shape, dtype = expected[name]
            if arr.shape != shape:
                raise ckpt.VersionMismatch(f"{name}: checkpoint shape {arr.shape}, model expects {shape}")
            if arr.dtype != dtype:
                raise ckpt.VersionMismatch(f"{name}: checkpoint dtype {arr.dtype}, model expects {dtype}")
        model.store.load_values(params)
        return model, header

    @classmethod
    def load(cls, path: str | Path) -> tuple["TFM", dict[str, Any]]:
        return cls.from_bytes(Path(path).read_bytes())
