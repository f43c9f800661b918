"""
DPP client: the trainer's get-next-batch hook.

Each client talks to a fixed slice of the worker fleet (partitioned round
robin): client i takes k consecutive workers starting at i*k, wrapping.
k is the configured fanout, raised to ceil(workers / clients) when fanout
slices would leave workers with no client, and never more than the fleet.
Within its slice the client rotates one worker per request and moves on
when a worker has nothing buffered.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

from lib.core.config import coerce_fields
from lib.core.errors import ConfigError
from lib.core.model import TensorBatch
from lib.dpp.wire import Signal

logger = logging.getLogger(__name__)

DEFAULT_FANOUT = 4


class WorkerHandle(Protocol):
    worker_id: str

    def get_batch(self, client_id: str = "") -> Union[TensorBatch, Signal]: ...


@dataclass
class ClientConfig:
    client_id: str = "client-0"
    client_index: int = 0
    clients: int = 1
    fanout: int = DEFAULT_FANOUT
    stall_timeout_s: float = 1.0
    poll_s: float = 0.001

    def __post_init__(self):
        if self.clients < 1 or not 0 <= self.client_index < self.clients:
            raise ConfigError(f"client index {self.client_index} out of range for {self.clients} clients")
        if self.fanout < 1:
            raise ConfigError("fanout must be >= 1")

    @classmethod
    def from_mapping(cls, values) -> "ClientConfig":
        return cls(**coerce_fields(cls, values))


class RoutingTable:
    """Static partition of workers over clients with a per-client connection cap."""

    def __init__(self, workers: Sequence[str], clients: int, fanout: int = DEFAULT_FANOUT):
        if clients < 1:
            raise ConfigError("need at least one client")
        self.workers = list(workers)
        self.clients = clients
        n = len(self.workers)
        # The cap grows only when there are too few clients to cover every worker.
        self.k = min(n, max(fanout, math.ceil(n / clients))) if n else 0

    def assignment(self, client_index: int) -> List[str]:
        n = len(self.workers)
        if n == 0:
            return []
        start = (client_index * self.k) % n
        return [self.workers[(start + j) % n] for j in range(self.k)]

    def coverage(self) -> Dict[str, int]:
        """Clients per worker."""
        counts = {w: 0 for w in self.workers}
        for c in range(self.clients):
            for w in self.assignment(c):
                counts[w] += 1
        return counts


@dataclass
class ClientCounters:
    batches: int = 0
    pending: int = 0
    stall_events: int = 0
    stall_s: float = 0.0
    served_by: Dict[str, int] = field(default_factory=dict)


class Client:
    def __init__(self, workers: Mapping[str, WorkerHandle], cfg: Optional[ClientConfig] = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg or ClientConfig()
        self.clock = clock
        self.sleep = sleep
        self.counters = ClientCounters()
        self.max_connections = 0
        self._lock = threading.Lock()
        self._reported = (0, 0)
        self._handles: Dict[str, WorkerHandle] = {}
        self._route: List[str] = []
        self._done: set = set()
        self._cursor = 0
        self.set_workers(workers)

    @property
    def client_id(self) -> str:
        return self.cfg.client_id

    def set_workers(self, workers: Mapping[str, WorkerHandle]) -> None:
        """Rebuild routing after the fleet changed; finished workers stay finished."""
        with self._lock:
            table = RoutingTable(sorted(workers), self.cfg.clients, self.cfg.fanout)
            self.routing = table
            self._route = table.assignment(self.cfg.client_index)
            self._handles = {w: workers[w] for w in self._route}
            self._done &= set(self._route)
            self._cursor %= max(1, len(self._route))
            self.max_connections = max(self.max_connections, len(self._handles))

    @property
    def connections(self) -> int:
        return len(self._handles)

    def _pick(self) -> Optional[Tuple[str, WorkerHandle]]:
        with self._lock:
            live = [w for w in self._route if w not in self._done]
            if not live:
                return None
            for _ in range(len(self._route)):
                worker_id = self._route[self._cursor % len(self._route)]
                self._cursor = (self._cursor + 1) % len(self._route)
                if worker_id not in self._done:
                    return worker_id, self._handles[worker_id]
            return None

    def _mark_done(self, worker_id: str) -> None:
        with self._lock:
            self._done.add(worker_id)

    def next_batch(self, timeout: Optional[float] = None) -> Union[TensorBatch, Signal]:
        """
        Next batch from the round-robin slice. Blocks until one arrives, every
        assigned worker reported end of data, or `timeout` (Signal.PENDING).
        """
        started = self.clock()
        round_pending = 0
        stalled_since = started
        while True:
            picked = self._pick()
            if picked is None and self._route:
                return Signal.END_OF_DATA
            if picked is None:
                # No workers assigned yet: wait like an all-pending round.
                result = Signal.PENDING
                worker_id = ""
            else:
                worker_id, handle = picked
                result = None
            try:
                if result is None:
                    result = handle.get_batch(self.client_id)
            except (ConnectionError, OSError) as exc:
                logger.warning("%s: worker %s unreachable (%s); dropping it", self.client_id, worker_id, exc)
                self._mark_done(worker_id)
                continue
            if isinstance(result, TensorBatch):
                with self._lock:
                    self.counters.batches += 1
                    self.counters.served_by[worker_id] = self.counters.served_by.get(worker_id, 0) + 1
                return result
            if result is Signal.END_OF_DATA:
                self._mark_done(worker_id)
                continue
            with self._lock:
                self.counters.pending += 1
            round_pending += 1
            if round_pending < max(1, len(self._route) - len(self._done)):
                continue
            round_pending = 0
            now = self.clock()
            if now - stalled_since >= self.cfg.stall_timeout_s:
                with self._lock:
                    self.counters.stall_events += 1
                    self.counters.stall_s += now - stalled_since
                stalled_since = now
            if timeout is not None and now - started >= timeout:
                return Signal.PENDING
            self.sleep(self.cfg.poll_s)

    def report_client_stats(self, master=None) -> Tuple[int, int]:
        """(pending observations, stall events) since the last report; forwarded to the master."""
        with self._lock:
            pending = self.counters.pending - self._reported[0]
            stalls = self.counters.stall_events - self._reported[1]
            self._reported = (self.counters.pending, self.counters.stall_events)
        if master is not None:
            master.report_client_stats(self.client_id, pending, stalls)
        return pending, stalls

    def served_counts(self) -> Dict[str, int]:
        with self._lock:
            return dict(self.counters.served_by)
