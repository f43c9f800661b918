"""
DPP master: split generation, leasing, progress tracking, worker health,
checkpoint/restore and the scaling controller hook.

All state changes happen under one lock; the clock is injectable so the
failure-injection tests can expire leases without sleeping.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, Iterator, List, Optional, Set, Tuple, Union

from lib.core.config import coerce_fields, load_kv_file
from lib.core.errors import ConfigError, FormatError, UnknownWorkerError
from lib.core.model import SessionSpec, Split, WorkerStats
from lib.core.session import session_to_dict, validate_session
from lib.dpp import wire
from lib.dpp.scaler import ScalerConfig, evaluate_scaling
from lib.dpp.wire import Directive, Signal
from lib.storage.catalog import TableCatalog

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class MasterConfig:
    lease_ttl_s: float = 30.0
    heartbeat_interval_s: float = 1.0
    missed_heartbeats: int = 3
    checkpoint_dir: str = ""
    checkpoint_every: int = 0  # completed splits between automatic checkpoints; 0 = off

    def __post_init__(self):
        if self.lease_ttl_s <= 0 or self.heartbeat_interval_s <= 0:
            raise ConfigError("lease TTL and heartbeat interval must be positive")
        if self.missed_heartbeats < 1:
            raise ConfigError("missed_heartbeats must be >= 1")

    @classmethod
    def from_mapping(cls, values) -> "MasterConfig":
        return cls(**coerce_fields(cls, values))

    @classmethod
    def from_file(cls, path) -> "MasterConfig":
        return cls.from_mapping(load_kv_file(path))


def generate_splits(spec: SessionSpec, catalog: TableCatalog) -> Iterator[Split]:
    """
    Cut the selected partitions into splits of spec.split_size rows.

    Splits never straddle files; each file's last split holds the remainder.
    Row ranges are table-global; stripe ranges are file-local.
    """
    split_id = 0
    for partition in spec.partitions:
        for entry in catalog.files_for(partition):
            bases = entry.stripe_bases()
            for first in range(0, entry.row_count, spec.split_size):
                last = min(first + spec.split_size, entry.row_count)
                stripe_first = _stripe_of(bases, first)
                stripe_last = _stripe_of(bases, last - 1)
                yield Split(split_id, catalog.resolve(entry), stripe_first, stripe_last,
                            entry.row_base + first, entry.row_base + last, entry.row_base)
                split_id += 1


def _stripe_of(bases: List[int], row: int) -> int:
    lo, hi = 0, len(bases) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if bases[mid] <= row:
            lo = mid
        else:
            hi = mid - 1
    return lo


@dataclass
class Lease:
    worker_id: str
    deadline: float


@dataclass
class WorkerRecord:
    worker_id: str
    address: str
    registered_at: float
    last_seen: float
    stats: WorkerStats = field(default_factory=WorkerStats)
    draining: bool = False


@dataclass
class Checkpoint:
    epoch: int
    digest: str
    cursor: int
    completed: Tuple[int, ...]

    def encode(self) -> bytes:
        w = wire.PayloadWriter().u32(CHECKPOINT_VERSION).u64(self.epoch).string(self.digest)
        w.u64(self.cursor).u32(len(self.completed))
        for split_id in self.completed:
            w.u64(split_id)
        return wire.encode_frame(wire.MsgType.CHECKPOINT, w.getvalue())

    @classmethod
    def decode(cls, data: bytes) -> "Checkpoint":
        msg_type, payload, used = wire.decode_frame(data)
        if msg_type != wire.MsgType.CHECKPOINT or used != len(data):
            raise FormatError("not a checkpoint file")
        r = wire.PayloadReader(payload)
        version = r.u32()
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        epoch, digest, cursor = r.u64(), r.string(), r.u64()
        completed = tuple(r.u64() for _ in range(r.u32()))
        r.done()
        return cls(epoch, digest, cursor, completed)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"checkpoint-{self.epoch:08d}.dsck"
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(self.encode())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.decode(Path(path).read_bytes())


def latest_checkpoint(directory) -> Optional[Path]:
    paths = sorted(Path(directory).glob("checkpoint-*.dsck"))
    return paths[-1] if paths else None


@dataclass
class SessionState:
    spec: SessionSpec
    splits: List[Split]
    cursor: int = 0
    outstanding: Dict[int, Lease] = field(default_factory=dict)
    completed: Set[int] = field(default_factory=set)
    reissue: Deque[int] = field(default_factory=deque)
    epoch: int = 0

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.splits) and not self.outstanding and not self.reissue

    def check(self) -> None:
        overlap = set(self.outstanding) & self.completed
        if overlap:
            raise AssertionError(f"splits both outstanding and completed: {sorted(overlap)}")


@dataclass
class MasterCounters:
    issued: int = 0
    reissued: int = 0
    completed: int = 0
    duplicates: int = 0
    expired_leases: int = 0
    dead_workers: int = 0


class Master:
    def __init__(self, spec: SessionSpec, catalog: TableCatalog,
                 cfg: Optional[MasterConfig] = None,
                 scaler: Optional[ScalerConfig] = None,
                 clock: Callable[[], float] = time.monotonic):
        report = validate_session(spec, catalog.schema)
        if not report.ok:
            raise ConfigError("session is not executable:\n" + str(report))
        self.cfg = cfg or MasterConfig()
        self.scaler_cfg = scaler or ScalerConfig()
        self.catalog = catalog
        self.clock = clock
        self.state = SessionState(spec, list(generate_splits(spec, catalog)))
        self.counters = MasterCounters()
        self.workers: Dict[str, WorkerRecord] = {}
        self.client_reports: Dict[str, Tuple[int, int]] = {}
        self._stalls_since_eval = 0
        self._retired = False
        self._lock = threading.RLock()
        logger.info("session %s: %d splits over %d rows", spec.digest()[:12],
                    len(self.state.splits), sum(s.row_count for s in self.state.splits))

    # -- session -----------------------------------------------------------

    @property
    def spec(self) -> SessionSpec:
        return self.state.spec

    def session_description(self) -> dict:
        return session_to_dict(self.spec)

    def register_worker(self, worker_id: str, address: str = "") -> dict:
        with self._lock:
            now = self.clock()
            old = self.workers.get(worker_id)
            if old is not None:
                # A restarted worker keeps its id; whatever it held is gone.
                self._reclaim(worker_id, "re-registered")
            self.workers[worker_id] = WorkerRecord(worker_id, address, now, now)
            logger.info("worker %s registered (%s)", worker_id, address or "in-process")
            return self.session_description()

    def _record(self, worker_id: str) -> WorkerRecord:
        if self._retired:
            raise UnknownWorkerError("master was replaced; register with its successor")
        record = self.workers.get(worker_id)
        if record is None:
            raise UnknownWorkerError(f"worker {worker_id} must register first")
        return record

    # -- leasing -----------------------------------------------------------

    def next_split(self, worker_id: str) -> Union[Split, Signal, None]:
        """A leased split, Signal.END_OF_DATA, or None when the caller should retry."""
        with self._lock:
            now = self.clock()
            self._sweep(now)
            record = self._record(worker_id)
            record.last_seen = now
            state = self.state
            if record.draining:
                return Signal.END_OF_DATA
            if state.reissue:
                split_id = state.reissue.popleft()
                self.counters.reissued += 1
            elif state.cursor < len(state.splits):
                split_id = state.cursor
                state.cursor += 1
            elif not state.outstanding:
                return Signal.END_OF_DATA
            else:
                return None
            state.outstanding[split_id] = Lease(worker_id, now + self.cfg.lease_ttl_s)
            self.counters.issued += 1
            return state.splits[split_id]

    def complete_split(self, worker_id: str, split_id: int) -> bool:
        """Ack a finished split. Returns True when it was already completed (duplicate)."""
        with self._lock:
            state = self.state
            if worker_id in self.workers:
                self.workers[worker_id].last_seen = self.clock()
            if split_id in state.completed:
                self.counters.duplicates += 1
                logger.info("split %d completed again by %s (duplicate)", split_id, worker_id)
                return True
            if split_id >= state.cursor and split_id not in state.outstanding:
                raise ConfigError(f"split {split_id} was never issued")
            state.outstanding.pop(split_id, None)
            if split_id in state.reissue:
                state.reissue.remove(split_id)
            state.completed.add(split_id)
            self.counters.completed += 1
            every = self.cfg.checkpoint_every
            if every and self.cfg.checkpoint_dir and self.counters.completed % every == 0:
                self.checkpoint().save(self.cfg.checkpoint_dir)
            return False

    def _reclaim(self, worker_id: str, why: str) -> List[int]:
        state = self.state
        held = sorted(s for s, lease in state.outstanding.items() if lease.worker_id == worker_id)
        for split_id in held:
            del state.outstanding[split_id]
            state.reissue.append(split_id)
        if held:
            logger.warning("reclaimed %d splits from %s (%s)", len(held), worker_id, why)
        return held

    def _sweep(self, now: float) -> None:
        """Expire leases and declare silent workers dead."""
        state = self.state
        expired = sorted(s for s, lease in state.outstanding.items() if lease.deadline <= now)
        for split_id in expired:
            del state.outstanding[split_id]
            state.reissue.append(split_id)
            self.counters.expired_leases += 1
        limit = self.cfg.missed_heartbeats * self.cfg.heartbeat_interval_s
        for worker_id in [w for w, r in self.workers.items() if now - r.last_seen >= limit]:
            self._reclaim(worker_id, "missed heartbeats")
            del self.workers[worker_id]
            self.counters.dead_workers += 1
            logger.warning("worker %s declared dead", worker_id)

    # -- health and scaling ------------------------------------------------

    def heartbeat(self, worker_id: str, stats: WorkerStats) -> Directive:
        with self._lock:
            now = self.clock()
            self._sweep(now)
            record = self._record(worker_id)
            record.last_seen = now
            record.stats = stats
            return Directive.DRAIN if record.draining else Directive.CONTINUE

    def report_client_stats(self, client_id: str, pending: int, stalls: int) -> None:
        with self._lock:
            self.client_reports[client_id] = (pending, stalls)
            self._stalls_since_eval += stalls

    def fleet(self) -> List[WorkerStats]:
        with self._lock:
            return [r.stats for r in self.workers.values() if not r.draining]

    def evaluate_scaling(self) -> int:
        """Run the scaling rule over the current fleet; marks workers to drain on scale-down."""
        with self._lock:
            self._sweep(self.clock())
            delta = evaluate_scaling(self.fleet(), self._stalls_since_eval > 0, self.scaler_cfg)
            self._stalls_since_eval = 0
            if delta < 0:
                self.drain(-delta)
            return delta

    def drain(self, count: int) -> List[str]:
        """Mark the `count` most buffered, most recently registered workers for draining."""
        with self._lock:
            active = [r for r in self.workers.values() if not r.draining]
            count = min(count, len(active) - 1)
            if count <= 0:
                return []
            chosen = sorted(active, key=lambda r: (-r.stats.buffered_batches, -r.registered_at))[:count]
            for record in chosen:
                record.draining = True
            return [r.worker_id for r in chosen]

    def deregister(self, worker_id: str) -> None:
        with self._lock:
            if worker_id in self.workers:
                self._reclaim(worker_id, "deregistered")
                del self.workers[worker_id]

    def retire(self) -> None:
        """Stop leasing; every later next_split or heartbeat raises UnknownWorkerError."""
        with self._lock:
            self._retired = True

    # -- progress and checkpoints ------------------------------------------

    @property
    def done(self) -> bool:
        with self._lock:
            return self.state.done

    def progress(self) -> Dict[str, int]:
        with self._lock:
            state = self.state
            return {
                "splits": len(state.splits),
                "issued_cursor": state.cursor,
                "outstanding": len(state.outstanding),
                "completed": len(state.completed),
                "waiting_reissue": len(state.reissue),
                "duplicates": self.counters.duplicates,
                "workers": len(self.workers),
            }

    def checkpoint(self) -> Checkpoint:
        with self._lock:
            self.state.epoch += 1
            return Checkpoint(self.state.epoch, self.spec.digest(), self.state.cursor,
                              tuple(sorted(self.state.completed)))

    @classmethod
    def restore(cls, spec: SessionSpec, catalog: TableCatalog, checkpoint: Checkpoint,
                cfg: Optional[MasterConfig] = None, scaler: Optional[ScalerConfig] = None,
                clock: Callable[[], float] = time.monotonic) -> "Master":
        """
        Rebuild a master from a checkpoint. Splits issued but not completed at
        checkpoint time are queued for re-issue; completed ones never are.
        """
        if checkpoint.digest != spec.digest():
            raise ConfigError("checkpoint belongs to a different session")
        master = cls(spec, catalog, cfg, scaler, clock)
        state = master.state
        if checkpoint.cursor > len(state.splits):
            raise FormatError("checkpoint cursor beyond the split list")
        state.cursor = checkpoint.cursor
        state.completed = set(checkpoint.completed)
        state.epoch = checkpoint.epoch
        state.reissue = deque(s for s in range(state.cursor) if s not in state.completed)
        logger.info("restored epoch %d: cursor %d, %d completed, %d to re-issue",
                    checkpoint.epoch, state.cursor, len(state.completed), len(state.reissue))
        return master
