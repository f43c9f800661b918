"""
DPP worker: stateless extract -> transform -> buffer pipeline.

Extraction reads a leased split with a coalesced plan straight into an
InMemoryRowGroup; the transform stage runs the session graph over it; the
load stage moves finished batches into a bounded buffer that clients drain.
A split is acknowledged to the master only after its last batch has been
served, so a killed worker loses nothing the master will not re-issue.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Optional, Protocol, Tuple, Union

from lib.core.config import coerce_fields, load_kv_file
from lib.core.errors import ConfigError, DsiError, UnknownWorkerError
from lib.core.model import SessionSpec, Split, TensorBatch, WorkerStats
from lib.core.session import session_from_dict
from lib.dpp.wire import Directive, Signal
from lib.storage.flatmap import InMemoryRowGroup
from lib.storage.planner import DEFAULT_WINDOW
from lib.storage.reader import ColumnarFile
from lib.transforms.executor import ExecutionStats, GraphExecutor
from lib.transforms.graph import TransformGraph

logger = logging.getLogger(__name__)


class MasterApi(Protocol):
    def register_worker(self, worker_id: str, address: str = "") -> dict: ...

    def next_split(self, worker_id: str) -> Union[Split, Signal, None]: ...

    def complete_split(self, worker_id: str, split_id: int) -> bool: ...

    def heartbeat(self, worker_id: str, stats: WorkerStats) -> Directive: ...


@dataclass
class WorkerConfig:
    worker_id: str = ""
    buffer_capacity: int = 8
    stages: Tuple[int, ...] = (1, 1, 1)
    io_window_bytes: int = DEFAULT_WINDOW
    manifest: str = ""
    master: str = ""
    listen: str = "127.0.0.1:0"
    heartbeat_s: float = 1.0
    poll_s: float = 0.005
    link_bps: float = 1.25e9

    def __post_init__(self):
        self.stages = tuple(self.stages)
        if self.buffer_capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        if len(self.stages) != 3 or min(self.stages) < 1:
            raise ConfigError("stages must be three positive task counts (extract,transform,load)")
        if self.io_window_bytes <= 0:
            raise ConfigError("io window must be positive")

    @classmethod
    def from_mapping(cls, values) -> "WorkerConfig":
        return cls(**coerce_fields(cls, values))

    @classmethod
    def from_file(cls, path, **overrides) -> "WorkerConfig":
        values = load_kv_file(path)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


@dataclass
class WorkerCounters:
    splits_started: int = 0
    splits_completed: int = 0
    splits_abandoned: int = 0
    batches_built: int = 0
    batches_served: int = 0
    bytes_served: int = 0
    rows_rejected: int = 0


class WorkerGone(ConnectionError):
    """The worker was killed; its buffer is gone."""


class Worker:
    def __init__(self, master: MasterApi, cfg: Optional[WorkerConfig] = None,
                 clock: Callable[[], float] = time.monotonic, address: str = ""):
        self.cfg = cfg or WorkerConfig()
        self.worker_id = self.cfg.worker_id or f"worker-{uuid.uuid4().hex[:8]}"
        self.master = master
        self.clock = clock
        self.address = address
        self.spec: Optional[SessionSpec] = None
        self.executor: Optional[GraphExecutor] = None
        self.exec_stats = ExecutionStats()
        self.counters = WorkerCounters()

        self._files: Dict[str, ColumnarFile] = {}
        self._files_lock = threading.Lock()
        self._register_lock = threading.Lock()
        self._registrations = 0
        self._buffer: Deque[Tuple[int, TensorBatch]] = deque()
        self._cond = threading.Condition()
        self._remaining: Dict[int, int] = {}
        self._next_batch_id = 0
        self._inflight = 0
        self._master_done = False
        self._draining = False
        self._dead = False
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self._busy_s = 0.0
        self._last_report = (clock(), 0.0, 0)
        self._extracted: "queue.Queue" = queue.Queue(maxsize=max(2, self.cfg.stages[1] * 2))
        self._transformed: "queue.Queue" = queue.Queue(maxsize=max(2, self.cfg.stages[2] * 2))

    # -- session -----------------------------------------------------------

    def register(self) -> SessionSpec:
        spec = session_from_dict(self.master.register_worker(self.worker_id, self.address))
        if self.cfg.manifest:
            local = TransformGraph.load(self.cfg.manifest)
            if local != spec.graph:
                raise ConfigError(f"{self.cfg.manifest} does not match the session's transform graph")
        self.spec = spec
        self.executor = GraphExecutor(spec.graph)
        self._registrations += 1
        return spec

    def _call_master(self, method: str, *args):
        # Looked up per call: the master may be swapped for a restored one.
        generation = self._registrations
        try:
            return getattr(self.master, method)(self.worker_id, *args)
        except UnknownWorkerError:
            with self._register_lock:
                # Concurrent failures re-register once; a second register would reclaim our leases.
                if self._registrations == generation:
                    logger.info("%s: master does not know us, registering again", self.worker_id)
                    self.register()
            return getattr(self.master, method)(self.worker_id, *args)

    def _open(self, path: str) -> ColumnarFile:
        with self._files_lock:
            f = self._files.get(path)
            if f is None:
                f = self._files[path] = ColumnarFile(path)
            return f

    # -- pipeline stages ---------------------------------------------------

    def extract(self, split: Split) -> InMemoryRowGroup:
        """Planned, coalesced read of the split's projected streams."""
        f = self._open(split.path)
        projection = list(self.spec.projection)
        stripes = list(split.stripes())
        plan = f.plan(projection, stripes, self.cfg.io_window_bytes)
        local = (split.row_first - split.file_row_base, split.row_last - split.file_row_base)
        return f.read_row_group(stripes, projection, plan, row_range=local,
                                row_base=split.file_row_base)

    def transform(self, group: InMemoryRowGroup) -> List[TensorBatch]:
        stats = ExecutionStats()
        batches = list(self.executor.batches(group, self.spec.batch_size, stats=stats))
        with self._cond:
            self.exec_stats.merge(stats)
            self.counters.rows_rejected += stats.rows_rejected
        return batches

    def push(self, split: Split, batches: List[TensorBatch]) -> None:
        """Append a split's batches to the buffer, blocking while it is full."""
        if not batches:
            self._finish_split(split.split_id)
            return
        with self._cond:
            self._remaining[split.split_id] = len(batches)
        for batch in batches:
            with self._cond:
                while len(self._buffer) >= self.cfg.buffer_capacity and not self._stop.is_set():
                    self._cond.wait(timeout=self.cfg.poll_s * 10)
                if self._stop.is_set():
                    return
                batch.batch_id = self._next_batch_id
                self._next_batch_id += 1
                self._buffer.append((split.split_id, batch))
                self.counters.batches_built += 1
                self._cond.notify_all()

    def run_split(self, split: Split) -> int:
        """Process one leased split synchronously; returns batches buffered."""
        if self.spec is None:
            self.register()
        self.counters.splits_started += 1
        started = time.perf_counter()
        try:
            batches = self.transform(self.extract(split))
        except (DsiError, OSError) as exc:
            self._abandon(split, exc)
            return 0
        finally:
            self._add_busy(time.perf_counter() - started)
        self.push(split, batches)
        return len(batches)

    def _abandon(self, split: Split, exc: Exception) -> None:
        # The lease is left to expire; the master re-issues the split.
        self.counters.splits_abandoned += 1
        logger.warning("%s: abandoning split %d: %s", self.worker_id, split.split_id, exc)

    def _add_busy(self, seconds: float) -> None:
        with self._cond:
            self._busy_s += seconds

    def _finish_split(self, split_id: int) -> None:
        self.counters.splits_completed += 1
        try:
            self._call_master("complete_split", split_id)
        except DsiError as exc:
            logger.warning("%s: could not complete split %d: %s", self.worker_id, split_id, exc)

    # -- serving -----------------------------------------------------------

    @property
    def finished(self) -> bool:
        with self._cond:
            return self._master_done and self._inflight == 0 and not self._buffer

    def serve_batch(self, client_id: str = "") -> Union[TensorBatch, Signal]:
        """Oldest buffered batch, Signal.PENDING, or Signal.END_OF_DATA."""
        if self._dead:
            raise WorkerGone(f"worker {self.worker_id} is gone")
        with self._cond:
            if not self._buffer:
                if self._master_done and self._inflight == 0:
                    return Signal.END_OF_DATA
                return Signal.PENDING
            split_id, batch = self._buffer.popleft()
            self.counters.batches_served += 1
            self.counters.bytes_served += batch.nbytes
            self._remaining[split_id] -= 1
            done = self._remaining[split_id] == 0
            if done:
                del self._remaining[split_id]
            self._cond.notify_all()
        if done:
            self._finish_split(split_id)
        return batch

    get_batch = serve_batch

    @property
    def buffered(self) -> int:
        with self._cond:
            return len(self._buffer)

    def report_stats(self) -> WorkerStats:
        now = self.clock()
        with self._cond:
            last_t, last_busy, last_bytes = self._last_report
            interval = max(now - last_t, 1e-9)
            threads = sum(self.cfg.stages[:2])
            cpu = (self._busy_s - last_busy) / (interval * threads)
            net = (self.counters.bytes_served - last_bytes) / interval / self.cfg.link_bps
            self._last_report = (now, self._busy_s, self.counters.bytes_served)
            return WorkerStats(
                cpu=min(1.0, max(0.0, cpu)),
                memory=len(self._buffer) / self.cfg.buffer_capacity,
                network=min(1.0, max(0.0, net)),
                buffered_batches=len(self._buffer),
                splits_completed=self.counters.splits_completed,
            )

    def metrics_line(self) -> str:
        c = self.counters
        return (f"dsi_worker,worker={self.worker_id} buffered={self.buffered},"
                f"splits={c.splits_completed},batches={c.batches_built},"
                f"served={c.batches_served},abandoned={c.splits_abandoned},"
                f"rejected={c.rows_rejected}")

    # -- threads -----------------------------------------------------------

    def start(self) -> "Worker":
        if self.spec is None:
            self.register()
        extract_n, transform_n, load_n = self.cfg.stages
        self._spawn(self._extract_loop, extract_n, "extract")
        self._spawn(self._transform_loop, transform_n, "transform")
        self._spawn(self._load_loop, load_n, "load")
        self._spawn(self._heartbeat_loop, 1, "heartbeat")
        return self

    def _spawn(self, target, count: int, name: str) -> None:
        for i in range(count):
            t = threading.Thread(target=target, name=f"{self.worker_id}-{name}-{i}", daemon=True)
            t.start()
            self._threads.append(t)

    def _extract_loop(self) -> None:
        while not self._stop.is_set():
            if self._draining:
                break
            try:
                result = self._call_master("next_split")
            except (DsiError, OSError) as exc:
                logger.warning("%s: next_split failed: %s", self.worker_id, exc)
                self._stop.wait(self.cfg.poll_s * 20)
                continue
            if result is Signal.END_OF_DATA:
                break
            if result is None:
                self._stop.wait(self.cfg.poll_s)
                continue
            with self._cond:
                self._inflight += 1
            self.counters.splits_started += 1
            started = time.perf_counter()
            try:
                group = self.extract(result)
            except (DsiError, OSError) as exc:
                self._abandon(result, exc)
                self._done_inflight()
                continue
            finally:
                self._add_busy(time.perf_counter() - started)
            self._put(self._extracted, (result, group))
        with self._cond:
            self._master_done = True
            self._cond.notify_all()

    def _transform_loop(self) -> None:
        while not self._stop.is_set():
            item = self._get(self._extracted)
            if item is None:
                continue
            split, group = item
            started = time.perf_counter()
            try:
                batches = self.transform(group)
            except DsiError as exc:
                self._abandon(split, exc)
                self._done_inflight()
                continue
            finally:
                self._add_busy(time.perf_counter() - started)
            self._put(self._transformed, (split, batches))

    def _load_loop(self) -> None:
        while not self._stop.is_set():
            item = self._get(self._transformed)
            if item is None:
                continue
            split, batches = item
            self.push(split, batches)
            self._done_inflight()

    def _heartbeat_loop(self) -> None:
        while not self._stop.wait(self.cfg.heartbeat_s):
            try:
                directive = self._call_master("heartbeat", self.report_stats())
            except (DsiError, OSError) as exc:
                logger.warning("%s: heartbeat failed: %s", self.worker_id, exc)
                continue
            logger.info(self.metrics_line())
            if directive == Directive.DRAIN and not self._draining:
                logger.info("%s: draining", self.worker_id)
                self._draining = True

    def _done_inflight(self) -> None:
        with self._cond:
            self._inflight -= 1
            self._cond.notify_all()

    def _put(self, q: "queue.Queue", item) -> None:
        while not self._stop.is_set():
            try:
                q.put(item, timeout=self.cfg.poll_s * 10)
                return
            except queue.Full:
                continue

    def _get(self, q: "queue.Queue"):
        try:
            return q.get(timeout=self.cfg.poll_s * 10)
        except queue.Empty:
            return None

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout)
        self._threads.clear()
        with self._files_lock:
            for f in self._files.values():
                f.close()
            self._files.clear()

    def kill(self) -> None:
        """Crash: stop everything, lose the buffer, never talk to the master again."""
        self._dead = True
        self._stop.set()
        with self._cond:
            self._buffer.clear()
            self._remaining.clear()
            self._cond.notify_all()
