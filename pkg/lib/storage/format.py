"""
On-disk layout of a columnar table file (bit-exact description in docs/format.md).

    [magic "MDSI"][version u16][stripe data ...][stripe footers ...]
    [file footer][footer length u32][magic "MDSI"]

All integers are little-endian. Every stream carries its own checksum, every
stripe footer is checksummed in the stripe index, and the file footer carries a
checksum over its own bytes, so any corruption of a byte that is read is
detected.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from lib.core.errors import ChecksumError, FormatError
from lib.core.model import TableSchema

MAGIC = b"MDSI"
VERSION = 1
HEADER = struct.Struct("<4sH")
TRAILER = struct.Struct("<I4s")
LABEL_FEATURE = 0xFFFFFFFF

_STREAM = struct.Struct("<IBBQQQQ")
_STRIPE_HEAD = struct.Struct("<II")
_STRIPE_INDEX = struct.Struct("<QQIIQ")
_POPULARITY = struct.Struct("<Id")


class StreamKind(enum.IntEnum):
    PRESENCE = 0
    LENGTHS = 1
    VALUES = 2
    SCORES = 3
    LABELS = 4


class Codec(enum.IntEnum):
    IDENTITY = 0
    DEFLATE = 1


def checksum64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class StreamDescriptor:
    feature_id: int
    kind: StreamKind
    offset: int
    length: int
    raw_length: int
    codec: Codec = Codec.IDENTITY
    checksum: int = 0

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class StripeFooter:
    row_count: int
    streams: Tuple[StreamDescriptor, ...]
    absent: frozenset = frozenset()

    def by_feature(self) -> Dict[int, List[StreamDescriptor]]:
        out: Dict[int, List[StreamDescriptor]] = {}
        for desc in self.streams:
            out.setdefault(desc.feature_id, []).append(desc)
        return out

    def span(self) -> Tuple[int, int]:
        """Byte range of this stripe's stream data."""
        if not self.streams:
            return (0, 0)
        return (self.streams[0].offset, self.streams[-1].end)

    def encode(self) -> bytes:
        parts = [_STRIPE_HEAD.pack(self.row_count, len(self.streams))]
        for d in self.streams:
            parts.append(
                _STREAM.pack(d.feature_id, int(d.kind), int(d.codec), d.offset,
                             d.length, d.raw_length, d.checksum)
            )
        absent = sorted(self.absent)
        parts.append(struct.pack(f"<I{len(absent)}I", len(absent), *absent))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "StripeFooter":
        try:
            rows, n = _STRIPE_HEAD.unpack_from(data, 0)
            pos = _STRIPE_HEAD.size
            streams = []
            for _ in range(n):
                fid, kind, codec, off, length, raw, chk = _STREAM.unpack_from(data, pos)
                pos += _STREAM.size
                streams.append(StreamDescriptor(fid, StreamKind(kind), off, length, raw,
                                                Codec(codec), chk))
            (n_absent,) = struct.unpack_from("<I", data, pos)
            pos += 4
            absent = struct.unpack_from(f"<{n_absent}I", data, pos)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"bad stripe footer: {exc}") from exc
        return cls(rows, tuple(streams), frozenset(absent))


@dataclass(frozen=True)
class StripeInfo:
    offset: int
    footer_offset: int
    footer_length: int
    row_count: int
    footer_checksum: int


@dataclass(frozen=True)
class FileFooter:
    schema: TableSchema
    stripes: Tuple[StripeInfo, ...]
    layout_order: Tuple[int, ...]
    popularity: Tuple[Tuple[int, float], ...] = ()
    version: int = VERSION
    checksum: int = 0

    @property
    def row_count(self) -> int:
        return sum(s.row_count for s in self.stripes)

    def stripe_row_bases(self) -> List[int]:
        """First file-local row index of every stripe."""
        bases, total = [], 0
        for info in self.stripes:
            bases.append(total)
            total += info.row_count
        return bases

    def _body(self) -> bytes:
        schema = json.dumps(self.schema.to_dict(), sort_keys=True).encode("utf-8")
        parts = [
            struct.pack("<H", self.version),
            struct.pack("<I", len(schema)),
            schema,
            struct.pack("<I", len(self.stripes)),
        ]
        for s in self.stripes:
            parts.append(_STRIPE_INDEX.pack(s.offset, s.footer_offset, s.footer_length,
                                            s.row_count, s.footer_checksum))
        parts.append(struct.pack(f"<I{len(self.layout_order)}I", len(self.layout_order),
                                 *self.layout_order))
        parts.append(struct.pack("<I", len(self.popularity)))
        for fid, weight in self.popularity:
            parts.append(_POPULARITY.pack(fid, float(weight)))
        return b"".join(parts)

    def encode(self) -> Tuple[bytes, "FileFooter"]:
        """Serialize; returns the bytes and the footer with its checksum filled in."""
        body = self._body()
        chk = checksum64(body)
        sealed = FileFooter(self.schema, self.stripes, self.layout_order,
                            self.popularity, self.version, chk)
        return body + struct.pack("<Q", chk), sealed

    @classmethod
    def decode(cls, data: bytes) -> "FileFooter":
        if len(data) < 8:
            raise FormatError("file footer truncated")
        body, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
        if checksum64(body) != stored:
            raise ChecksumError("file footer checksum mismatch")
        try:
            (version,) = struct.unpack_from("<H", body, 0)
            (schema_len,) = struct.unpack_from("<I", body, 2)
            pos = 6
            schema = TableSchema.from_dict(json.loads(body[pos:pos + schema_len]))
            pos += schema_len
            (n_stripes,) = struct.unpack_from("<I", body, pos)
            pos += 4
            stripes = []
            for _ in range(n_stripes):
                stripes.append(StripeInfo(*_STRIPE_INDEX.unpack_from(body, pos)))
                pos += _STRIPE_INDEX.size
            (n_layout,) = struct.unpack_from("<I", body, pos)
            pos += 4
            layout = struct.unpack_from(f"<{n_layout}I", body, pos)
            pos += 4 * n_layout
            (n_pop,) = struct.unpack_from("<I", body, pos)
            pos += 4
            popularity = []
            for _ in range(n_pop):
                popularity.append(_POPULARITY.unpack_from(body, pos))
                pos += _POPULARITY.size
        except (struct.error, ValueError, KeyError) as exc:
            raise FormatError(f"bad file footer: {exc}") from exc
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        return cls(schema, tuple(stripes), tuple(layout),
                   tuple((int(f), float(w)) for f, w in popularity), version, stored)


@dataclass
class FileLayoutStats:
    """Byte accounting of one file (payload vs directory/footers)."""
    file_bytes: int = 0
    payload_bytes: int = 0
    per_feature: Dict[int, int] = field(default_factory=dict)

    @property
    def metadata_bytes(self) -> int:
        return self.file_bytes - self.payload_bytes

    @property
    def overhead(self) -> float:
        return self.metadata_bytes / self.payload_bytes if self.payload_bytes else 0.0
