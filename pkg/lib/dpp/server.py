"""
TCP front-ends and stubs for the master and workers.

Servers run one thread per connection and answer one frame with one frame.
Stubs expose the same methods as the in-process objects, so a Worker or
Client does not care which side of a socket its peer lives on.

A master that does not know the caller answers RegisterWorker with an
empty payload; the stub turns that into UnknownWorkerError.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from typing import Optional, Tuple, Union

from lib.core.errors import DsiError, UnknownWorkerError, WireError
from lib.core.model import Split, TensorBatch, WorkerStats
from lib.dpp import wire
from lib.dpp.wire import Directive, MsgType, Role, Signal

logger = logging.getLogger(__name__)


def parse_address(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = wire.recv_frame(sock)
            except (WireError, OSError) as exc:
                logger.debug("connection from %s dropped: %s", self.client_address, exc)
                return
            if frame is None:
                return
            try:
                reply_type, payload = self.server.dispatch(*frame)
            except UnknownWorkerError:
                reply_type, payload = MsgType.REGISTER_WORKER, b""
            except DsiError as exc:
                logger.warning("closing connection after error: %s", exc)
                return
            try:
                wire.send_frame(sock, reply_type, payload)
            except OSError:
                return


class _Background:
    def __init__(self, server: _Server):
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class MasterServer(_Background):
    def __init__(self, master, listen: str = "127.0.0.1:0"):
        server = _Server(parse_address(listen), _FrameHandler)
        server.dispatch = self.dispatch
        super().__init__(server)
        self.master = master

    def dispatch(self, msg_type: int, payload: bytes):
        master = self.master
        if msg_type == MsgType.REGISTER_WORKER:
            reg = wire.decode_register(payload)
            return MsgType.REGISTER_WORKER, wire.encode_session(master.register_worker(reg.worker_id, reg.address))
        if msg_type == MsgType.NEXT_SPLIT:
            result = master.next_split(wire.decode_worker_id(payload))
            if result is Signal.END_OF_DATA:
                return MsgType.END_OF_DATA, b""
            return MsgType.SPLIT_ASSIGN, wire.encode_split(result)
        if msg_type == MsgType.COMPLETE_SPLIT:
            duplicate = master.complete_split(*wire.decode_complete(payload))
            return MsgType.COMPLETE_SPLIT, bytes([1 if duplicate else 0])
        if msg_type == MsgType.HEARTBEAT:
            role, ident, body = wire.decode_heartbeat(payload)
            if role == Role.CLIENT:
                master.report_client_stats(ident, *body)
                return MsgType.HEARTBEAT, bytes([Directive.CONTINUE])
            if master.heartbeat(ident, body) == Directive.DRAIN:
                return MsgType.DRAIN, b""
            return MsgType.HEARTBEAT, bytes([Directive.CONTINUE])
        raise WireError(f"master cannot handle message type {msg_type}")


class WorkerServer(_Background):
    def __init__(self, worker, listen: str = "127.0.0.1:0"):
        server = _Server(parse_address(listen), _FrameHandler)
        server.dispatch = self.dispatch
        super().__init__(server)
        self.worker = worker

    def dispatch(self, msg_type: int, payload: bytes):
        if msg_type != MsgType.GET_BATCH:
            raise WireError(f"worker cannot handle message type {msg_type}")
        result = self.worker.serve_batch(wire.decode_worker_id(payload))
        if result is Signal.END_OF_DATA:
            return MsgType.END_OF_DATA, b""
        return MsgType.BATCH, wire.encode_batch(None if result is Signal.PENDING else result)


class _Stub:
    def __init__(self, address: str, timeout: float = 30.0):
        self.address = address
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def _call(self, msg_type: int, payload: bytes) -> Tuple[int, bytes]:
        with self._lock:
            if self._sock is None:
                self._sock = socket.create_connection(parse_address(self.address), self.timeout)
                self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            try:
                return wire.call(self._sock, msg_type, payload)
            except (OSError, WireError):
                self._sock.close()
                self._sock = None
                raise

    def close(self) -> None:
        with self._lock:
            if self._sock is not None:
                self._sock.close()
                self._sock = None


class MasterStub(_Stub):
    def _checked(self, msg_type: int, payload: bytes) -> Tuple[int, bytes]:
        reply_type, body = self._call(msg_type, payload)
        if reply_type == MsgType.REGISTER_WORKER and not body and msg_type != MsgType.REGISTER_WORKER:
            raise UnknownWorkerError("master requires registration")
        return reply_type, body

    def register_worker(self, worker_id: str, address: str = "") -> dict:
        frame = self._call(MsgType.REGISTER_WORKER, wire.encode_register(wire.Registration(worker_id, address)))
        return wire.decode_session(wire.expect(frame, MsgType.REGISTER_WORKER))

    def next_split(self, worker_id: str) -> Union[Split, Signal, None]:
        reply_type, body = self._checked(MsgType.NEXT_SPLIT, wire.encode_worker_id(worker_id))
        if reply_type == MsgType.END_OF_DATA:
            return Signal.END_OF_DATA
        return wire.decode_split(wire.expect((reply_type, body), MsgType.SPLIT_ASSIGN))

    def complete_split(self, worker_id: str, split_id: int) -> bool:
        frame = self._checked(MsgType.COMPLETE_SPLIT, wire.encode_complete(worker_id, split_id))
        return wire.expect(frame, MsgType.COMPLETE_SPLIT) == b"\x01"

    def heartbeat(self, worker_id: str, stats: WorkerStats) -> Directive:
        reply_type, _ = self._checked(MsgType.HEARTBEAT, wire.encode_worker_heartbeat(worker_id, stats))
        return Directive.DRAIN if reply_type == MsgType.DRAIN else Directive.CONTINUE

    def report_client_stats(self, client_id: str, pending: int, stalls: int) -> None:
        self._call(MsgType.HEARTBEAT, wire.encode_client_heartbeat(client_id, pending, stalls))


class WorkerStub(_Stub):
    def __init__(self, address: str, worker_id: str = "", timeout: float = 30.0):
        super().__init__(address, timeout)
        self.worker_id = worker_id or address

    def get_batch(self, client_id: str = "") -> Union[TensorBatch, Signal]:
        reply_type, body = self._call(MsgType.GET_BATCH, wire.encode_worker_id(client_id))
        if reply_type == MsgType.END_OF_DATA:
            return Signal.END_OF_DATA
        batch = wire.decode_batch(wire.expect((reply_type, body), MsgType.BATCH))
        return Signal.PENDING if batch is None else batch
