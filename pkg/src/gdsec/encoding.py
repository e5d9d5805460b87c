"""Bit-exact message costing and byte serialization.

The ledger convention ("wire" scheme) counts exactly what the accounting
model prescribes: 32 bits per transmitted value, gap-encoded indices for
sparse messages, 8+1 bits per component plus a 32-bit norm for quantized
messages, and zero for an empty message. Gap lengths are LEB128 varints
(8 bits per started 7-bit group); the gap width is a convention of this
package, chosen so that bit counts are reproducible.

The byte layout (used for round-trip serialization, one byte kind tag first):

* none       ``[0x00]``
* dense      ``[0x01][d:varint][d x f32le]``
* sparse     ``[0x02][d:varint][nnz:varint][nnz x varint gaps][nnz x f32le]``
* quantized  ``[0x03][d:varint][s:varint][norm:f32le][ceil(d/8) sign bytes,
             LSB-first, bit=1 for +][d x varint levels]``

Values travel as 32-bit floats (the wire convention), so serialization is
lossless exactly for float32-representable values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gdsec import kernels
from gdsec.compressors import (
    KIND_DENSE,
    KIND_NONE,
    KIND_QUANTIZED,
    KIND_SPARSE,
    QuantizedVector,
    WireMessage,
)
from gdsec.core import SparseDelta

VALUE_BITS = 32
QUANT_VALUE_BITS = 8
QUANT_SIGN_BITS = 1

_KIND_TAGS = {KIND_NONE: 0, KIND_DENSE: 1, KIND_SPARSE: 2, KIND_QUANTIZED: 3}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class DecodeError(ValueError):
    """Malformed byte stream; ``offset`` points at the failing position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class EncodedMessage:
    bit_count: int
    data: Optional[bytes] = None

    def __post_init__(self):
        if self.bit_count < 0:
            raise ValueError("bit count cannot be negative")
        if self.data is not None and 8 * len(self.data) < self.bit_count:
            raise ValueError("serialized form cannot be shorter than the ledger count")


def varint_bits(value: int) -> int:
    """LEB128 cost of one nonnegative integer."""
    if value < 0:
        raise ValueError("varints encode nonnegative integers")
    return 8 * max(1, -(-value.bit_length() // 7))


def rle_encode_indices(indices, dim: int):
    """Gap runs for a strictly increasing index list, plus their bit cost.

    ``runs[0]`` is the first index (zeros before it); ``runs[t]`` counts the
    zeros between consecutive nonzeros. Decoding the runs reproduces the
    indices exactly.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= dim):
        raise ValueError("index out of range")
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError("indices must be strictly increasing")
    if idx.size == 0:
        return np.empty(0, dtype=np.int64), 0
    runs = np.empty(idx.size, dtype=np.int64)
    runs[0] = idx[0]
    runs[1:] = np.diff(idx) - 1
    return runs, int(kernels.varint_gap_bits(idx))


def rle_decode_runs(runs, dim: int) -> np.ndarray:
    """Inverse of :func:`rle_encode_indices`."""
    runs = np.asarray(runs, dtype=np.int64)
    if np.any(runs < 0):
        raise ValueError("runs must be nonnegative")
    idx = np.cumsum(runs + 1) - 1
    if idx.size and idx[-1] >= dim:
        raise ValueError("decoded index exceeds dimension")
    return idx


def message_bits(msg: WireMessage, scheme: str = "wire") -> int:
    """Transmitted bits charged for ``msg`` under the given accounting scheme.

    ``"wire"`` is the ledger convention documented above; ``"serialized"``
    counts the actual bytes of :func:`serialize` times eight.
    """
    if scheme == "serialized":
        return 8 * len(serialize(msg))
    if scheme != "wire":
        raise ValueError(f"unknown accounting scheme {scheme!r}")
    if msg.kind == KIND_NONE:
        return 0
    if msg.kind == KIND_DENSE:
        return VALUE_BITS * int(msg.payload.shape[0])
    if msg.kind == KIND_SPARSE:
        delta: SparseDelta = msg.payload
        return VALUE_BITS * delta.nnz + int(kernels.varint_gap_bits(delta.idx))
    q: QuantizedVector = msg.payload
    if q.norm == 0.0:
        return 0
    return (QUANT_VALUE_BITS + QUANT_SIGN_BITS) * q.dim + VALUE_BITS


def _put_varint(buf: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varints encode nonnegative integers")
    while True:
        byte = value & 0x7F
        value >>= 7
        buf.append(byte | (0x80 if value else 0))
        if not value:
            return


def _get_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise DecodeError("truncated varint", start)
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise DecodeError("varint too long", start)


def _f32_bytes(values) -> bytes:
    return np.asarray(values, dtype="<f4").tobytes()


def _read_f32(data: bytes, pos: int, count: int) -> tuple[np.ndarray, int]:
    end = pos + 4 * count
    if end > len(data):
        raise DecodeError("truncated float block", pos)
    return np.frombuffer(data[pos:end], dtype="<f4").astype(np.float64), end


def serialize(msg: WireMessage) -> bytes:
    buf = bytearray([_KIND_TAGS[msg.kind]])
    if msg.kind == KIND_NONE:
        return bytes(buf)
    if msg.kind == KIND_DENSE:
        v = msg.payload
        _put_varint(buf, v.shape[0])
        buf += _f32_bytes(v)
    elif msg.kind == KIND_SPARSE:
        delta: SparseDelta = msg.payload
        _put_varint(buf, delta.dim)
        _put_varint(buf, delta.nnz)
        runs, _ = rle_encode_indices(delta.idx, delta.dim)
        for r in runs:
            _put_varint(buf, int(r))
        buf += _f32_bytes(delta.val)
    else:
        q: QuantizedVector = msg.payload
        _put_varint(buf, q.dim)
        _put_varint(buf, q.s)
        buf += _f32_bytes([q.norm])
        buf += np.packbits(q.signs > 0, bitorder="little").tobytes()
        for lv in q.levels:
            _put_varint(buf, int(lv))
    return bytes(buf)


def deserialize(data: bytes) -> WireMessage:
    if not data:
        raise DecodeError("empty stream", 0)
    tag = data[0]
    if tag not in _TAG_KINDS:
        raise DecodeError(f"unknown kind tag {tag}", 0)
    kind = _TAG_KINDS[tag]
    pos = 1
    if kind == KIND_NONE:
        msg = WireMessage(KIND_NONE)
    elif kind == KIND_DENSE:
        d, pos = _get_varint(data, pos)
        values, pos = _read_f32(data, pos, d)
        msg = WireMessage(KIND_DENSE, values)
    elif kind == KIND_SPARSE:
        d, pos = _get_varint(data, pos)
        nnz, pos = _get_varint(data, pos)
        runs = np.empty(nnz, dtype=np.int64)
        for t in range(nnz):
            runs[t], pos = _get_varint(data, pos)
        try:
            idx = rle_decode_runs(runs, d)
        except ValueError as err:
            raise DecodeError(str(err), pos) from err
        values, pos = _read_f32(data, pos, nnz)
        try:
            msg = WireMessage(KIND_SPARSE, SparseDelta(idx, values, d))
        except ValueError as err:
            raise DecodeError(str(err), pos) from err
    else:
        d, pos = _get_varint(data, pos)
        s, pos = _get_varint(data, pos)
        norm_arr, pos = _read_f32(data, pos, 1)
        nsign = -(-d // 8)
        if pos + nsign > len(data):
            raise DecodeError("truncated sign block", pos)
        bits = np.unpackbits(
            np.frombuffer(data[pos : pos + nsign], dtype=np.uint8),
            bitorder="little",
        )[:d]
        pos += nsign
        signs = np.where(bits > 0, 1, -1).astype(np.int8)
        levels = np.empty(d, dtype=np.int64)
        for i in range(d):
            levels[i], pos = _get_varint(data, pos)
        try:
            msg = WireMessage(
                KIND_QUANTIZED, QuantizedVector(float(norm_arr[0]), signs, levels, s)
            )
        except ValueError as err:
            raise DecodeError(str(err), pos) from err
    if pos != len(data):
        raise DecodeError("trailing bytes after message", pos)
    return msg


def encode_message(msg: WireMessage, with_bytes: bool = False) -> EncodedMessage:
    data = serialize(msg) if with_bytes else None
    return EncodedMessage(message_bits(msg), data)
