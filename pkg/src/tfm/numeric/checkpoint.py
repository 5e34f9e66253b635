"""Checkpoint container: JSON header followed by raw little-endian buffers.

Layout::

    b"TFMCKPT\\0"            8-byte magic
    uint64 (little-endian)  header length in bytes
    header                  UTF-8 JSON, keys sorted
    buffers                 each parameter's values, IEEE-754 little-endian,
                            concatenated in header order

The header lists ``format_version``, the model ``config``, the ``seed``, the
training ``step`` and ``params`` as ``[{"name", "shape", "dtype"}]``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"TFMCKPT\x00"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4"}


class CorruptCheckpoint(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def encode(params: dict[str, np.ndarray], config: dict[str, Any], seed: int, step: int) -> bytes:
    manifest = []
    buffers = []
    for name, value in params.items():
        dtype = np.dtype(value.dtype).name
        if dtype not in _DTYPES:
            raise TypeError(f"{name}: unsupported dtype {dtype}")
        manifest.append({"name": name, "shape": list(value.shape), "dtype": dtype})
        buffers.append(np.ascontiguousarray(value, dtype=_DTYPES[dtype]).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "seed": seed,
        "step": step,
        "params": manifest,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(buffers)


def decode(blob: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint (bad magic or truncated)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version!r}, this build reads {FORMAT_VERSION}")
    try:
        manifest = header["params"]
        offset = 16 + hlen
        params: dict[str, np.ndarray] = {}
        for entry in manifest:
            dt = np.dtype(_DTYPES[entry["dtype"]])
            shape = tuple(int(s) for s in entry["shape"])
            if any(s < 0 for s in shape):
                raise CorruptCheckpoint(f"{entry['name']}: negative dimension")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if offset + nbytes > len(blob):
                raise CorruptCheckpoint(f"truncated buffer for {entry['name']}")
            arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=offset)
            params[entry["name"]] = arr.reshape(shape).astype(np.dtype(entry["dtype"]))
            offset += nbytes
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"malformed parameter manifest: {exc}") from None
    if offset != len(blob):
        raise CorruptCheckpoint(f"{len(blob) - offset} trailing bytes after the last buffer")
    return header, params


def write(path: str | Path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
