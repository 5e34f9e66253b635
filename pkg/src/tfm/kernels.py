"""Hot kernels: compiled extension when built, numpy otherwise.

``BACKEND`` names the implementation in use. Set ``TFM_PURE_PYTHON=1`` to
force the numpy versions. Both are exposed as ``compiled_*``/``numpy_*`` so
the benchmark and the tests can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np


def numpy_pair_scores(base: np.ndarray, offset: np.ndarray, w2: np.ndarray, b2: float) -> np.ndarray:
    return np.maximum(base + offset, 0.0) @ w2 + b2


def numpy_idm_accel(v, v0, gap, dv, has_leader, a, b, s0, T, delta):
    free = 1.0 - (v / v0) ** delta
    s_star = s0 + np.maximum(0.0, v * T + v * dv / (2.0 * np.sqrt(a * b)))
    g = np.maximum(gap, 0.1)
    return np.where(has_leader.astype(bool), a * (free - (s_star / g) ** 2), a * free)


try:
    if os.environ.get("TFM_PURE_PYTHON") == "1":
        raise ImportError("compiled kernels disabled by TFM_PURE_PYTHON")
    from . import _kernels as _ext
except ImportError:
    _ext = None

BACKEND = "compiled" if _ext is not None else "numpy"


def _same_float(*arrays):
    dtype = np.result_type(*arrays)
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    return [np.ascontiguousarray(a, dtype=dtype) for a in arrays]


if _ext is not None:
    def compiled_pair_scores(base, offset, w2, b2):
        base, offset, w2 = _same_float(base, offset, w2)
        return _ext.pair_scores(base, offset, w2, float(b2))

    def compiled_idm_accel(v, v0, gap, dv, has_leader, a, b, s0, T, delta):
        f = lambda x: np.ascontiguousarray(x, dtype=np.float64)
        return _ext.idm_accel(f(v), f(v0), f(gap), f(dv),
                              np.ascontiguousarray(has_leader, dtype=np.uint8),
                              float(a), float(b), float(s0), float(T), float(delta))

    pair_scores = compiled_pair_scores
    idm_accel = compiled_idm_accel
else:
    compiled_pair_scores = compiled_idm_accel = None
    pair_scores = numpy_pair_scores
    idm_accel = numpy_idm_accel
