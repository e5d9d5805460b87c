# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-pass kernels for the per-round hot path.

Semantics match gdsec._kernels_py exactly; see that module for the contract.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def select_above_threshold(const double[::1] values, const double[::1] limits):
    cdef Py_ssize_t n = values.shape[0]
    if limits.shape[0] != n:
        raise ValueError("length mismatch")
    idx_arr = np.empty(n, dtype=np.int64)
    val_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] val = val_arr
    cdef Py_ssize_t i, k = 0
    cdef double a
    for i in range(n):
        a = -values[i] if values[i] < 0.0 else values[i]
        if a > limits[i]:
            idx[k] = i
            val[k] = values[i]
            k += 1
    return idx_arr[:k].copy(), val_arr[:k].copy()


def gdsec_worker_update(
    const double[::1] delta,
    const double[::1] limits,
    double[::1] h,
    double[::1] e,
    double[::1] dsum,
    double beta,
    bint error_correction,
):
    """Fused per-worker round: select survivors of the threshold test, fold
    them into the state vector and the server-bound sum, and store the
    suppressed remainder as the error memory. Returns (idx, val)."""
    cdef Py_ssize_t n = delta.shape[0]
    if limits.shape[0] != n or h.shape[0] != n or e.shape[0] != n or dsum.shape[0] != n:
        raise ValueError("length mismatch")
    idx_arr = np.empty(n, dtype=np.int64)
    val_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] val = val_arr
    cdef Py_ssize_t i, k = 0
    cdef double a, x
    for i in range(n):
        x = delta[i]
        a = -x if x < 0.0 else x
        if a > limits[i]:
            idx[k] = i
            val[k] = x
            k += 1
            h[i] += beta * x
            dsum[i] += x
            if error_correction:
                e[i] = 0.0
        elif error_correction:
            e[i] = x
    return idx_arr[:k].copy(), val_arr[:k].copy()


def varint_gap_bits(indices) -> int:
    cdef const cnp.int64_t[::1] ind = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ind.shape[0]
    cdef long long total = 0
    cdef long long run, prev = -1
    cdef Py_ssize_t i
    for i in range(n):
        run = ind[i] - prev - 1
        prev = ind[i]
        total += 8
        run >>= 7
        while run > 0:
            total += 8
            run >>= 7
    return total
