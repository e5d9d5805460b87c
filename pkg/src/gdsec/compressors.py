"""Worker-side message generation: the sparsified-difference rule with error
correction, plus the baseline compressors (top-j with error feedback,
whole-vector censoring, unbiased quantization, nonuniform worker selection).

Each round function takes the worker's state and fresh gradient and returns
``(message, state)``. States are owned by a single logical worker; the round
functions update the state arrays in place and return the same object, so
rounds for different workers can safely run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from gdsec import kernels
from gdsec.core import DimensionMismatch, HyperParams, SparseDelta

KIND_SPARSE = "sparse_delta"
KIND_DENSE = "dense_gradient"
KIND_QUANTIZED = "quantized_gradient"
KIND_NONE = "none"


@dataclass(frozen=True)
class QuantizedVector:
    """Random-rounded magnitude levels on a uniform grid of ``s`` bins,
    scaled by the stored norm. ``value_i = norm * sign_i * level_i / s``."""

    norm: float
    signs: np.ndarray  # int8, entries +-1
    levels: np.ndarray  # int64, 0..s
    s: int

    def __post_init__(self):
        signs = np.ascontiguousarray(self.signs, dtype=np.int8)
        levels = np.ascontiguousarray(self.levels, dtype=np.int64)
        if self.s < 1:
            raise ValueError("need at least one quantization bin")
        if self.norm < 0:
            raise ValueError("norm must be nonnegative")
        if signs.shape != levels.shape or signs.ndim != 1:
            raise ValueError("signs and levels must be 1-D of equal length")
        if np.any(np.abs(signs) != 1):
            raise ValueError("signs must be +-1")
        if np.any(levels < 0) or np.any(levels > self.s):
            raise ValueError("levels must lie in 0..s")
        if self.norm == 0 and np.any(levels != 0):
            raise ValueError("zero norm implies all-zero levels")
        signs.flags.writeable = False
        levels.flags.writeable = False
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "levels", levels)

    @property
    def dim(self) -> int:
        return int(self.levels.size)


Payload = Union[SparseDelta, np.ndarray, QuantizedVector, None]


@dataclass(frozen=True)
class WireMessage:
    kind: str
    payload: Payload = None

    def __post_init__(self):
        if self.kind == KIND_NONE:
            if self.payload is not None:
                raise ValueError("an empty message carries no payload")
        elif self.kind == KIND_SPARSE:
            if not isinstance(self.payload, SparseDelta):
                raise ValueError("sparse message needs a SparseDelta payload")
        elif self.kind == KIND_DENSE:
            if not isinstance(self.payload, np.ndarray):
                raise ValueError("dense message needs an ndarray payload")
        elif self.kind == KIND_QUANTIZED:
            if not isinstance(self.payload, QuantizedVector):
                raise ValueError("quantized message needs a QuantizedVector")
        else:
            raise ValueError(f"unknown message kind {self.kind!r}")


NOTHING = WireMessage(KIND_NONE)


@dataclass
class WorkerState:
    """Mutable per-worker memory shared by the compressor strategies.

    ``h`` is the smoothed accumulation of transmitted updates, ``e`` the
    sparsification error carried into the next round. ``last_sent_grad`` is
    the censoring baseline, ``ef_memory`` the top-j error-feedback residual.
    """

    h: np.ndarray
    e: np.ndarray
    last_sent_grad: Optional[np.ndarray] = None
    ef_memory: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.ef_memory is None:
            self.ef_memory = np.zeros_like(self.h)
        dims = {self.h.shape[0], self.e.shape[0], self.ef_memory.shape[0]}
        if self.last_sent_grad is not None:
            dims.add(self.last_sent_grad.shape[0])
        if len(dims) != 1:
            raise DimensionMismatch("worker state vectors disagree on dimension")

    @classmethod
    def fresh(cls, dim: int) -> "WorkerState":
        return cls(h=np.zeros(dim), e=np.zeros(dim))


def _sparse_message(idx: np.ndarray, val: np.ndarray, dim: int) -> WireMessage:
    if idx.size == 0:
        return NOTHING
    return WireMessage(KIND_SPARSE, SparseDelta(idx, val, dim))


def gdsec_worker_round(
    state: WorkerState,
    grad: np.ndarray,
    theta_k: np.ndarray,
    theta_km1: np.ndarray,
    hp: HyperParams,
    *,
    error_correction: bool = True,
    quantize_s: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[WireMessage, WorkerState]:
    """One sparsified-difference round for a single worker.

    The candidate update is ``delta = grad - h (+ e)``; component i is
    suppressed when ``|delta_i| <= (xi_i / M) * |theta_k_i - theta_km1_i|``.
    Survivors form the message (nothing is sent when all are suppressed).
    Afterwards ``h <- h + beta * sent`` and ``e <- delta - sent``, where
    ``sent`` is what the server will actually apply (for the quantized
    variant, the dequantized values, so the error term also absorbs the
    quantization error).

    With ``error_correction=False`` the error memory is pinned at zero.
    """
    d = grad.shape[0]
    if not (theta_k.shape[0] == theta_km1.shape[0] == state.h.shape[0] == d):
        raise DimensionMismatch("gradient, iterates, and state must share d")
    if hp.xi.shape[0] != d:
        raise DimensionMismatch("need one threshold per coordinate")

    delta = grad - state.h
    if error_correction:
        delta += state.e
    limits = (hp.xi / hp.n_workers) * np.abs(theta_k - theta_km1)
    idx, val = kernels.select_above_threshold(delta, limits)

    if quantize_s is None:
        msg = _sparse_message(idx, val, d)
        sent_idx, sent_val = idx, val
    else:
        sent = np.zeros(d)
        sent[idx] = val
        if idx.size == 0:
            msg = NOTHING
        else:
            q = quantize(sent, quantize_s, rng)
            msg = WireMessage(KIND_QUANTIZED, q)
            sent = dequantize(q)
        state.h += hp.beta * sent
        if error_correction:
            state.e = delta - sent
        else:
            state.e[:] = 0.0
        return msg, state

    state.h[sent_idx] += hp.beta * sent_val
    if error_correction:
        state.e = delta
        state.e[sent_idx] = 0.0
    else:
        state.e[:] = 0.0
    return msg, state


def state_recursion_closed_form(
    h_1: np.ndarray, grads: list[np.ndarray], beta: float
) -> np.ndarray:
    """Closed form of the state recursion under full transmission.

    After k rounds with gradients g_1..g_k and no suppression,
    ``h = (1-beta)^k h_1 + sum_j (1-beta)^(k-j) beta g_j``. Used as a test
    oracle against the iterated round function with zero thresholds.
    """
    k = len(grads)
    h = (1.0 - beta) ** k * np.array(h_1, dtype=np.float64)
    for j, g in enumerate(grads, start=1):
        h += (1.0 - beta) ** (k - j) * beta * np.asarray(g, dtype=np.float64)
    return h


def topj_worker_round(
    state: WorkerState, grad: np.ndarray, j: int
) -> tuple[WireMessage, WorkerState]:
    """Transmit the j entries of grad + residual that are largest in absolute
    value (ties broken toward the lower index); keep the rest as residual."""
    d = grad.shape[0]
    if not 1 <= j <= d:
        raise ValueError(f"j must lie in 1..{d}")
    v = grad + state.ef_memory
    # Stable sort on -|v| keeps the original order within ties.
    order = np.argsort(-np.abs(v), kind="stable")[:j]
    order = np.sort(order)
    vals = v[order]
    keep = vals != 0.0  # zero entries are never worth transmitting
    idx = order[keep].astype(np.int64)
    msg = _sparse_message(idx, vals[keep], d)
    state.ef_memory = v
    state.ef_memory[idx] = 0.0
    return msg, state


def cgd_worker_round(
    state: WorkerState,
    grad: np.ndarray,
    theta_k: np.ndarray,
    theta_km1: np.ndarray,
    xi_tilde: float,
    n_workers: int,
) -> tuple[WireMessage, WorkerState]:
    """Whole-vector censoring: transmit the gradient only when it moved more
    than ``(xi_tilde / M) * ||theta_k - theta_km1||`` since the last
    transmission. The first round always transmits. Transmitted gradients go
    out as their nonzero entries (gap-encoded on the wire)."""
    if grad.shape[0] != theta_k.shape[0] or theta_k.shape[0] != theta_km1.shape[0]:
        raise DimensionMismatch("gradient and iterates must share d")
    send = state.last_sent_grad is None or (
        float(np.linalg.norm(grad - state.last_sent_grad))
        > (xi_tilde / n_workers) * float(np.linalg.norm(theta_k - theta_km1))
    )
    if not send:
        return NOTHING, state
    state.last_sent_grad = grad.copy()
    return _sparse_message(*_nonzero_entries(grad), grad.shape[0]), state


def _nonzero_entries(v: np.ndarray):
    idx = np.nonzero(v)[0].astype(np.int64)
    return idx, v[idx]


def quantize(
    v: np.ndarray, s: int, rng: np.random.Generator | None
) -> QuantizedVector:
    """Unbiased random quantization of ``v`` onto ``s`` magnitude bins.

    Component i with relative magnitude ``r = |v_i| * s / ||v||`` in bin
    ``[l, l+1]`` rounds up with probability ``r - l``, so the dequantized
    expectation equals ``v``. A zero vector short-circuits to norm 0.
    """
    if s < 1:
        raise ValueError("need at least one quantization bin")
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    signs = np.where(v < 0, -1, 1).astype(np.int8)
    if norm == 0.0:
        return QuantizedVector(0.0, signs, np.zeros(v.size, dtype=np.int64), s)
    r = np.abs(v) * (s / norm)
    lo = np.floor(r)
    p = r - lo
    if rng is None:
        rng = np.random.default_rng()
    up = rng.random(v.size) < p
    levels = (lo + up).astype(np.int64)
    return QuantizedVector(norm, signs, levels, s)


def dequantize(q: QuantizedVector) -> np.ndarray:
    return q.norm * q.signs.astype(np.float64) * q.levels / q.s


def iag_selection_weights(L_worker) -> np.ndarray:
    """Selection probabilities proportional to the per-worker smoothness."""
    L = np.asarray(L_worker, dtype=np.float64)
    if np.any(L <= 0):
        raise ValueError("per-worker smoothness constants must be positive")
    return L / L.sum()
