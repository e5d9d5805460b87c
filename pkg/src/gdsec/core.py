"""Dimension-checked vector primitives, hyperparameters, and bit-ledger bookkeeping.

Dense vectors are plain 1-D float64 numpy arrays throughout the package;
:func:`vector` validates shape and finiteness at construction points. Sparse
payloads, hyperparameters, and the transmitted-bit ledger are small frozen
dataclasses whose array fields are marked read-only, so instances can be
shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    """Operands disagree on the model dimension d."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf entered the computation; the run must abort."""


def vector(values, dim: int | None = None) -> np.ndarray:
    """Validated dense float64 vector.

    Rejects anything that is not 1-D, contains NaN/Inf, or (when ``dim`` is
    given) has the wrong length.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {v.shape[0]}")
    check_finite(v)
    return v


def check_finite(v: np.ndarray, what: str = "vector") -> None:
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite entry in {what}")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SparseDelta:
    """Sorted (index, value) pairs over dimension ``dim``; the on-wire payload.

    Invariants: indices strictly increasing and inside ``[0, dim)``, no stored
    zero values.
    """

    idx: np.ndarray
    val: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.idx, dtype=np.int64)
        val = np.ascontiguousarray(self.val, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.shape != val.shape:
            raise ValueError("idx and val must be 1-D arrays of equal length")
        if self.dim < 0:
            raise ValueError("dim must be nonnegative")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        check_finite(val, "sparse values")
        if np.any(val == 0.0):
            raise ValueError("zero values may not be stored explicitly")
        object.__setattr__(self, "idx", _freeze(idx))
        object.__setattr__(self, "val", _freeze(val))

    @property
    def nnz(self) -> int:
        return int(self.idx.size)

    @classmethod
    def trusted(cls, idx: np.ndarray, val: np.ndarray, dim: int) -> "SparseDelta":
        """Skip validation; the caller guarantees the invariants.

        For hot paths whose construction already enforces sorted indices and
        nonzero values (the selection kernel scans in index order and keeps
        only strict threshold exceedances).
        """
        obj = object.__new__(cls)
        object.__setattr__(obj, "idx", idx)
        object.__setattr__(obj, "val", val)
        object.__setattr__(obj, "dim", dim)
        return obj

    @classmethod
    def from_pairs(cls, pairs, dim: int) -> "SparseDelta":
        pairs = sorted(pairs)
        idx = np.array([i for i, _ in pairs], dtype=np.int64)
        val = np.array([x for _, x in pairs], dtype=np.float64)
        return cls(idx, val, dim)

    @classmethod
    def from_dense(cls, v) -> "SparseDelta":
        """Drop exactly the zero entries of ``v``, preserving all nonzeros."""
        v = vector(v)
        idx = np.nonzero(v)[0].astype(np.int64)
        return cls(idx, v[idx], v.shape[0])

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.idx] = self.val
        return out


def empty_delta(dim: int) -> SparseDelta:
    return SparseDelta(np.empty(0, dtype=np.int64), np.empty(0), dim)


def densify(delta: SparseDelta) -> np.ndarray:
    """Dense vector with the listed entries placed and zeros elsewhere."""
    return delta.densify()


def apply_sparse(v: np.ndarray, delta: SparseDelta) -> np.ndarray:
    """Return ``v`` with ``delta`` added at its listed indices."""
    if v.shape[0] != delta.dim:
        raise DimensionMismatch(
            f"vector has dimension {v.shape[0]}, delta has {delta.dim}"
        )
    out = np.array(v, dtype=np.float64)
    out[delta.idx] += delta.val
    return out


@dataclass(frozen=True)
class HyperParams:
    """Run hyperparameters: step size, state smoothing, suppression thresholds.

    ``xi`` holds one nonnegative threshold per coordinate; workers suppress
    component i of their update when its magnitude is at most
    ``xi[i] / n_workers`` times the latest per-coordinate iterate movement.
    """

    alpha: float
    beta: float
    xi: np.ndarray
    n_workers: int
    n_rounds: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("step size alpha must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("state smoothing beta must lie in (0, 1]")
        xi = np.ascontiguousarray(self.xi, dtype=np.float64)
        if xi.ndim != 1:
            raise ValueError("xi must be a 1-D threshold vector")
        if np.any(xi < 0) or not np.all(np.isfinite(xi)):
            raise ValueError("thresholds must be finite and nonnegative")
        if self.n_workers < 1 or self.n_rounds < 1:
            raise ValueError("n_workers and n_rounds must be positive")
        object.__setattr__(self, "xi", _freeze(xi))

    @classmethod
    def uniform(cls, alpha, beta, xi, dim, n_workers, n_rounds) -> "HyperParams":
        return cls(alpha, beta, np.full(dim, float(xi)), n_workers, n_rounds)


@dataclass(frozen=True)
class BitLedger:
    """Cumulative transmitted bits and nonempty-message counts per worker."""

    per_worker_bits: np.ndarray
    transmissions: np.ndarray

    def __post_init__(self):
        pw = np.ascontiguousarray(self.per_worker_bits, dtype=np.int64)
        tx = np.ascontiguousarray(self.transmissions, dtype=np.int64)
        if pw.shape != tx.shape or pw.ndim != 1:
            raise ValueError("per-worker arrays must be 1-D and equal length")
        if np.any(pw < 0) or np.any(tx < 0):
            raise ValueError("counters cannot be negative")
        object.__setattr__(self, "per_worker_bits", _freeze(pw))
        object.__setattr__(self, "transmissions", _freeze(tx))

    @classmethod
    def zeros(cls, n_workers: int) -> "BitLedger":
        z = np.zeros(n_workers, dtype=np.int64)
        return cls(z, z.copy())

    @property
    def total_bits(self) -> int:
        return int(self.per_worker_bits.sum())

    @property
    def total_transmissions(self) -> int:
        return int(self.transmissions.sum())

    def charged(self, worker: int, nbits: int) -> "BitLedger":
        """New ledger with ``nbits`` charged to ``worker``.

        A positive charge also counts as one transmission; zero-bit rounds
        (nothing sent) leave both counters unchanged.
        """
        if nbits < 0:
            raise ValueError("cannot charge negative bits")
        pw = self.per_worker_bits.copy()
        tx = self.transmissions.copy()
        pw[worker] += nbits
        if nbits > 0:
            tx[worker] += 1
        return BitLedger(pw, tx)
