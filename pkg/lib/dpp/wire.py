"""
Framed binary wire protocol shared by master, workers and clients.

Frame: [length u32 LE][type u8][payload]; length counts type + payload.
Payload layouts are listed in docs/wire.md. Strings are [u32 length][utf-8].
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from lib.core.errors import WireError
from lib.core.model import Split, TensorBatch, WorkerStats

MAX_FRAME = 1 << 30
_LEN = struct.Struct("<I")


class MsgType(enum.IntEnum):
    REGISTER_WORKER = 1
    NEXT_SPLIT = 2
    SPLIT_ASSIGN = 3
    COMPLETE_SPLIT = 4
    HEARTBEAT = 5
    DRAIN = 6
    GET_BATCH = 7
    BATCH = 8
    END_OF_DATA = 9
    # Not sent on sockets; checkpoint files reuse the framing.
    CHECKPOINT = 32


class Directive(enum.IntEnum):
    CONTINUE = 0
    DRAIN = 1


class Role(enum.IntEnum):
    WORKER = 0
    CLIENT = 1


class Signal(enum.Enum):
    """Non-data outcomes of next_split / get_batch / next_batch."""
    END_OF_DATA = "end_of_data"
    PENDING = "pending"


_READY = 0
_NOT_READY = 1


class PayloadWriter:
    def __init__(self):
        self._parts: List[bytes] = []

    def u8(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack("<B", v))
        return self

    def u32(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack("<I", v))
        return self

    def u64(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack("<Q", v))
        return self

    def i64(self, v: int) -> "PayloadWriter":
        self._parts.append(struct.pack("<q", v))
        return self

    def f32(self, v: float) -> "PayloadWriter":
        self._parts.append(struct.pack("<f", v))
        return self

    def string(self, s: str) -> "PayloadWriter":
        data = s.encode("utf-8")
        self.u32(len(data))
        self._parts.append(data)
        return self

    def array(self, arr: np.ndarray, dtype: str) -> "PayloadWriter":
        self._parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class PayloadReader:
    def __init__(self, data: bytes):
        self._view = memoryview(data)
        self._pos = 0

    def _take(self, n: int) -> memoryview:
        if self._pos + n > len(self._view):
            raise WireError(f"payload truncated: need {n} bytes at {self._pos} of {len(self._view)}")
        chunk = self._view[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def string(self) -> str:
        return bytes(self._take(self.u32())).decode("utf-8")

    def array(self, count: int, dtype: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        return np.frombuffer(bytes(self._take(size)), dtype=dtype).copy()

    def done(self) -> None:
        if self._pos != len(self._view):
            raise WireError(f"{len(self._view) - self._pos} trailing payload bytes")


# ---------------------------------------------------------------------------
# Framing
# ---------------------------------------------------------------------------

def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    return _LEN.pack(len(payload) + 1) + bytes([int(msg_type)]) + payload


def decode_frame(data: bytes) -> Tuple[int, bytes, int]:
    """(type, payload, bytes consumed) of the first frame in data."""
    if len(data) < _LEN.size + 1:
        raise WireError("frame truncated")
    (length,) = _LEN.unpack_from(data)
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    end = _LEN.size + length
    if len(data) < end:
        raise WireError("frame truncated")
    return data[_LEN.size], bytes(data[_LEN.size + 1:end]), end


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, msg_type: int, payload: bytes = b"") -> None:
    sock.sendall(encode_frame(msg_type, payload))


def recv_frame(sock: socket.socket) -> Optional[Tuple[int, bytes]]:
    """Next (type, payload); None on a clean close between frames."""
    header = _recv_exact(sock, _LEN.size)
    if header is None:
        return None
    (length,) = _LEN.unpack(header)
    if length < 1 or length > MAX_FRAME:
        raise WireError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    if body is None:
        raise WireError("connection closed mid-frame")
    return body[0], body[1:]


def call(sock: socket.socket, msg_type: int, payload: bytes = b"") -> Tuple[int, bytes]:
    send_frame(sock, msg_type, payload)
    reply = recv_frame(sock)
    if reply is None:
        raise WireError("connection closed before reply")
    return reply


def expect(frame: Tuple[int, bytes], *types: int) -> bytes:
    msg_type, payload = frame
    if msg_type not in types:
        raise WireError(f"unexpected message type {msg_type}, wanted {list(types)}")
    return payload


# ---------------------------------------------------------------------------
# Message payloads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Registration:
    worker_id: str
    address: str = ""


def encode_register(reg: Registration) -> bytes:
    return PayloadWriter().string(reg.worker_id).string(reg.address).getvalue()


def decode_register(payload: bytes) -> Registration:
    r = PayloadReader(payload)
    reg = Registration(r.string(), r.string())
    r.done()
    return reg


def encode_session(session: dict) -> bytes:
    """Register reply: the session description as UTF-8 JSON."""
    return PayloadWriter().string(json.dumps(session, sort_keys=True)).getvalue()


def decode_session(payload: bytes) -> dict:
    r = PayloadReader(payload)
    out = json.loads(r.string())
    r.done()
    return out


def encode_worker_id(worker_id: str) -> bytes:
    return PayloadWriter().string(worker_id).getvalue()


def decode_worker_id(payload: bytes) -> str:
    r = PayloadReader(payload)
    out = r.string()
    r.done()
    return out


def encode_split(split: Optional[Split]) -> bytes:
    w = PayloadWriter()
    if split is None:
        return w.u8(_NOT_READY).getvalue()
    return (w.u8(_READY).u64(split.split_id).string(split.path)
            .u32(split.stripe_first).u32(split.stripe_last)
            .u64(split.row_first).u64(split.row_last).u64(split.file_row_base).getvalue())


def decode_split(payload: bytes) -> Optional[Split]:
    r = PayloadReader(payload)
    if r.u8() == _NOT_READY:
        r.done()
        return None
    split = Split(split_id=r.u64(), path=r.string(), stripe_first=r.u32(), stripe_last=r.u32(),
                  row_first=r.u64(), row_last=r.u64(), file_row_base=r.u64())
    r.done()
    return split


def encode_complete(worker_id: str, split_id: int) -> bytes:
    return PayloadWriter().string(worker_id).u64(split_id).getvalue()


def decode_complete(payload: bytes) -> Tuple[str, int]:
    r = PayloadReader(payload)
    out = (r.string(), r.u64())
    r.done()
    return out


def encode_worker_heartbeat(worker_id: str, stats: WorkerStats) -> bytes:
    return (PayloadWriter().u8(Role.WORKER).string(worker_id)
            .f32(stats.cpu).f32(stats.memory).f32(stats.network)
            .u32(stats.buffered_batches).u64(stats.splits_completed).getvalue())


def encode_client_heartbeat(client_id: str, buffered: int, stalls: int) -> bytes:
    return PayloadWriter().u8(Role.CLIENT).string(client_id).u32(buffered).u32(stalls).getvalue()


def decode_heartbeat(payload: bytes):
    """(Role.WORKER, id, WorkerStats) or (Role.CLIENT, id, (buffered, stalls))."""
    r = PayloadReader(payload)
    role = Role(r.u8())
    ident = r.string()
    if role == Role.WORKER:
        cpu, mem, net = r.f32(), r.f32(), r.f32()
        stats = WorkerStats(cpu=min(1.0, max(0.0, cpu)), memory=min(1.0, max(0.0, mem)),
                            network=min(1.0, max(0.0, net)),
                            buffered_batches=r.u32(), splits_completed=r.u64())
        r.done()
        return role, ident, stats
    body = (r.u32(), r.u32())
    r.done()
    return role, ident, body


def encode_batch(batch: Optional[TensorBatch]) -> bytes:
    w = PayloadWriter()
    if batch is None:
        return w.u8(_NOT_READY).getvalue()
    rows = batch.row_count
    w.u8(_READY).u64(batch.batch_id).u32(rows)
    w.array(batch.labels, "<f4").array(batch.row_ids, "<i8")
    w.u32(len(batch.dense))
    for fid in sorted(batch.dense):
        width = batch.dense_width.get(fid, 1)
        w.u32(fid).u32(width).array(batch.dense[fid], "<f4")
    w.u32(len(batch.sparse))
    for fid in sorted(batch.sparse):
        values, offsets = batch.sparse[fid]
        scored = fid in batch.scores
        w.u32(fid).u8(1 if scored else 0).u32(len(values))
        w.array(offsets, "<i4").array(values, "<i8")
        if scored:
            w.array(batch.scores[fid], "<f4")
    return w.getvalue()


def decode_batch(payload: bytes) -> Optional[TensorBatch]:
    r = PayloadReader(payload)
    if r.u8() == _NOT_READY:
        r.done()
        return None
    batch_id, rows = r.u64(), r.u32()
    batch = TensorBatch(batch_id=batch_id, row_count=rows,
                        labels=r.array(rows, "<f4"), row_ids=r.array(rows, "<i8"))
    for _ in range(r.u32()):
        fid, width = r.u32(), r.u32()
        batch.dense[fid] = r.array(rows * width, "<f4")
        batch.dense_width[fid] = width
    for _ in range(r.u32()):
        fid, scored, count = r.u32(), r.u8(), r.u32()
        offsets = r.array(rows + 1, "<i4")
        values = r.array(count, "<i8")
        batch.sparse[fid] = (values, offsets)
        if scored:
            batch.scores[fid] = r.array(count, "<f4")
    r.done()
    problems = batch.problems()
    if problems:
        raise WireError(f"batch {batch_id} is malformed: {'; '.join(problems)}")
    return batch
