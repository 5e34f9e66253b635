# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics are mirrored by the numpy versions in kernels.py."""
import numpy as np
from cython cimport floating
from libc.math cimport pow, sqrt


def pair_scores(const floating[:, ::1] base, const floating[::1] offset,
                const floating[::1] w2, double b2):
    cdef Py_ssize_t n = base.shape[0], h = base.shape[1], i, j
    cdef double acc
    if floating is double:
        out = np.empty(n, dtype=np.float64)
    else:
        out = np.empty(n, dtype=np.float32)
    cdef floating[::1] o = out
    cdef floating x, zero = 0
    for i in range(n):
        acc = 0.0
        for j in range(h):
            x = base[i, j] + offset[j]
            acc += (x if x > zero else zero) * w2[j]  # compiles to a branchless max
        o[i] = <floating>(acc + b2)
    return out


def idm_accel(const double[::1] v, const double[::1] v0, const double[::1] gap,
              const double[::1] dv, const unsigned char[::1] has_leader,
              double a, double b, double s0, double T, double delta):
    cdef Py_ssize_t n = v.shape[0], i
    cdef double free, r, s_star, g, lead, root = 2.0 * sqrt(a * b)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        r = v[i] / v0[i]
        free = 1.0 - pow(r, delta)  # numpy's vectorized ** may differ from this in the last bit
        s_star = v[i] * T + v[i] * dv[i] / root
        s_star = (s_star if s_star > 0.0 else 0.0) + s0
        g = gap[i] if gap[i] > 0.1 else 0.1
        lead = 1.0 if has_leader[i] else 0.0
        o[i] = a * (free - lead * (s_star / g) * (s_star / g))
    return out
