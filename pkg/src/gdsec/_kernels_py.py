"""Pure numpy implementations of the per-round hot kernels.

These are the fallback used when the compiled extension is unavailable.
Both implementations must agree bit-for-bit: the selection kernel performs
only comparisons and copies, and the gap-encoding kernel is exact integer
arithmetic, so parity is testable with strict equality.
"""

from __future__ import annotations

import numpy as np


def select_above_threshold(values: np.ndarray, limits: np.ndarray):
    """Indices and entries of ``values`` whose magnitude strictly exceeds the
    matching entry of ``limits``.

    Returns ``(idx, val)`` with ``idx`` int64 ascending and ``val`` the
    corresponding (unmodified) entries.
    """
    if values.shape != limits.shape:
        raise ValueError("length mismatch")
    keep = np.abs(values) > limits
    idx = np.nonzero(keep)[0].astype(np.int64)
    return idx, values[idx]


def gdsec_worker_update(
    delta: np.ndarray,
    limits: np.ndarray,
    h: np.ndarray,
    e: np.ndarray,
    dsum: np.ndarray,
    beta: float,
    error_correction: bool,
):
    """Fused per-worker round: select survivors of the threshold test, fold
    them into the state vector and the server-bound sum, and store the
    suppressed remainder as the error memory. Returns (idx, val)."""
    if not (delta.shape == limits.shape == h.shape == e.shape == dsum.shape):
        raise ValueError("length mismatch")
    idx, val = select_above_threshold(delta, limits)
    h[idx] += beta * val
    dsum[idx] += val
    if error_correction:
        e[:] = delta
        e[idx] = 0.0
    return idx, val


def varint_gap_bits(indices: np.ndarray) -> int:
    """Total LEB128 bits for the gap encoding of a sorted index list.

    Gap t carries the count of zeros between consecutive nonzeros (the first
    gap equals the first index); each gap costs 8 bits per started 7-bit
    group.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return 0
    runs = np.empty(indices.size, dtype=np.int64)
    runs[0] = indices[0]
    if indices.size > 1:
        np.subtract(indices[1:], indices[:-1], out=runs[1:])
        runs[1:] -= 1
    nbytes = np.ones_like(runs)
    rest = runs >> 7
    while np.any(rest > 0):
        nbytes += rest > 0
        rest >>= 7
    return int(8 * nbytes.sum())
