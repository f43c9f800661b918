"""
Stream encodings for the columnar format.

- LEB128 varints for lengths; ids are zigzag-mapped first so negative ids
  stay short.
- Presence bitmaps are byte-aligned, least significant bit first.
- Floats are little-endian fixed width.
- Codecs: identity or deflate (zlib).

Encoders and decoders are vectorized over numpy arrays.
"""

from __future__ import annotations

import zlib

import numpy as np

from lib.core.errors import FormatError
from lib.storage.format import Codec

_SEVEN = np.uint64(7)
_LOW7 = np.uint64(0x7F)


def zigzag_encode(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return ((v << np.int64(1)) ^ (v >> np.int64(63))).view(np.uint64)


def zigzag_decode(values: np.ndarray) -> np.ndarray:
    u = np.asarray(values, dtype=np.uint64)
    half = (u >> np.uint64(1)).astype(np.int64)
    sign = -((u & np.uint64(1)).astype(np.int64))
    return half ^ sign


def encode_uvarints(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbytes = np.ones(v.shape, dtype=np.int64)
    rest = v >> _SEVEN
    while np.any(rest):
        nbytes += rest > 0
        rest = rest >> _SEVEN
    starts = np.cumsum(nbytes) - nbytes
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for k in range(int(nbytes.max())):
        mask = nbytes > k
        chunk = (v[mask] >> np.uint64(7 * k)) & _LOW7
        more = (nbytes[mask] - 1 > k).astype(np.uint64) << _SEVEN
        out[starts[mask] + k] = (chunk | more).astype(np.uint8)
    return out.tobytes()


def decode_uvarints(data: bytes, count: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    if count == 0:
        if buf.size:
            raise FormatError("trailing bytes after varint stream")
        return np.zeros(0, dtype=np.uint64)
    ends = np.flatnonzero((buf & 0x80) == 0)
    if ends.size != count or ends[-1] != buf.size - 1:
        raise FormatError(f"varint stream holds {ends.size} values, expected {count}")
    starts = np.empty_like(ends)
    starts[0] = 0
    starts[1:] = ends[:-1] + 1
    lengths = ends - starts + 1
    if lengths.max() > 10:
        raise FormatError("varint longer than 10 bytes")
    out = np.zeros(count, dtype=np.uint64)
    for k in range(int(lengths.max())):
        mask = lengths > k
        out[mask] |= (buf[starts[mask] + k] & 0x7F).astype(np.uint64) << np.uint64(7 * k)
    return out


def encode_ids(values: np.ndarray) -> bytes:
    return encode_uvarints(zigzag_encode(values))


def decode_ids(data: bytes, count: int) -> np.ndarray:
    return zigzag_decode(decode_uvarints(data, count))


def encode_bitmap(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=bool), bitorder="little").tobytes()


def decode_bitmap(data: bytes, count: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    if buf.size != (count + 7) // 8:
        raise FormatError(f"bitmap of {buf.size} bytes cannot hold {count} rows")
    return np.unpackbits(buf, count=count, bitorder="little").astype(bool)


def encode_f64(values) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def decode_f64(data: bytes) -> np.ndarray:
    if len(data) % 8:
        raise FormatError("float64 stream length not a multiple of 8")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def encode_f32(values) -> bytes:
    return np.asarray(values, dtype="<f4").tobytes()


def decode_f32(data: bytes) -> np.ndarray:
    if len(data) % 4:
        raise FormatError("float32 stream length not a multiple of 4")
    return np.frombuffer(data, dtype="<f4").astype(np.float32)


def compress(data: bytes, codec: Codec) -> bytes:
    if codec == Codec.DEFLATE:
        return zlib.compress(data, 6)
    return data


def decompress(data: bytes, codec: Codec, raw_length: int) -> bytes:
    if codec == Codec.DEFLATE:
        try:
            data = zlib.decompress(data)
        except zlib.error as exc:
            raise FormatError(f"deflate stream corrupt: {exc}") from exc
    if len(data) != raw_length:
        raise FormatError(f"stream decodes to {len(data)} bytes, expected {raw_length}")
    return data
