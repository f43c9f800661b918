"""
In-process cluster: one master, N workers, C clients, same protocol objects
as the TCP deployment minus the sockets.

Used by the end-to-end tests and `dsibench e2e`. Failure injection (worker
kills, a master restart from checkpoint) fires from the client threads at
fixed delivered-batch counts, so every scheduled event happens before the
data runs out.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from lib.core.model import SessionSpec, TensorBatch
from lib.dpp.client import Client, ClientConfig, DEFAULT_FANOUT
from lib.dpp.master import Master, MasterConfig
from lib.dpp.worker import Worker, WorkerConfig
from lib.dpp.wire import Signal
from lib.storage.catalog import TableCatalog

logger = logging.getLogger(__name__)


@dataclass
class DeliveryReport:
    expected_rows: int
    split_size: int
    delivered: Counter = field(default_factory=Counter)
    batches: int = 0
    kills: int = 0
    restarts: int = 0
    outstanding_at_failures: int = 0
    max_connections: int = 0
    served_by: Dict[str, int] = field(default_factory=dict)
    wall_s: float = 0.0
    timed_out: bool = False

    @property
    def lost(self) -> List[int]:
        return [r for r in range(self.expected_rows) if self.delivered[r] == 0]

    @property
    def duplicates(self) -> int:
        return sum(n - 1 for n in self.delivered.values() if n > 1)

    @property
    def unexpected(self) -> List[int]:
        return sorted(r for r in self.delivered if not 0 <= r < self.expected_rows)

    @property
    def exactly_once(self) -> bool:
        return not self.lost and self.duplicates == 0 and not self.unexpected

    @property
    def at_least_once(self) -> bool:
        return not self.lost and not self.unexpected

    @property
    def duplicate_bound(self) -> int:
        return self.outstanding_at_failures * self.split_size

    def summary(self) -> str:
        return (f"rows={len(self.delivered)}/{self.expected_rows} batches={self.batches} "
                f"duplicates={self.duplicates} (bound {self.duplicate_bound}) "
                f"lost={len(self.lost)} kills={self.kills} restarts={self.restarts} "
                f"wall={self.wall_s:.2f}s")


def cluster_master_config(**overrides) -> MasterConfig:
    """Fast failure detection for in-process runs."""
    values = dict(lease_ttl_s=30.0, heartbeat_interval_s=0.1, missed_heartbeats=10)
    values.update(overrides)
    return MasterConfig(**values)


class LocalCluster:
    def __init__(self, spec: SessionSpec, catalog: TableCatalog, *, workers: int = 4,
                 clients: int = 2, fanout: int = DEFAULT_FANOUT,
                 worker_cfg: Optional[WorkerConfig] = None,
                 master_cfg: Optional[MasterConfig] = None):
        if workers < 1 or clients < 1:
            raise ValueError("need at least one worker and one client")
        self.spec = spec
        self.catalog = catalog
        self.master_cfg = master_cfg or cluster_master_config()
        self.worker_template = worker_cfg or WorkerConfig(heartbeat_s=self.master_cfg.heartbeat_interval_s)
        self.master = Master(spec, catalog, self.master_cfg)
        self.workers: Dict[str, Worker] = {}
        self.fanout = fanout
        self.clients = [
            Client({}, ClientConfig(f"client-{i}", i, clients, fanout, stall_timeout_s=0.5))
            for i in range(clients)
        ]
        self._serial = 0
        self._events_lock = threading.Lock()
        self._initial_workers = workers
        self.expected_rows = sum(s.row_count for s in self.master.state.splits)

    # -- fleet -------------------------------------------------------------

    def add_worker(self) -> Worker:
        worker_id = f"worker-{self._serial}"
        self._serial += 1
        t = self.worker_template
        cfg = WorkerConfig(worker_id=worker_id, buffer_capacity=t.buffer_capacity, stages=t.stages,
                           io_window_bytes=t.io_window_bytes, heartbeat_s=t.heartbeat_s,
                           poll_s=t.poll_s, link_bps=t.link_bps)
        worker = Worker(self.master, cfg).start()
        self.workers[worker_id] = worker
        return worker

    def _reroute(self) -> None:
        for client in self.clients:
            client.set_workers(self.workers)

    def kill_worker(self, worker_id: Optional[str] = None, replace: bool = True) -> Tuple[str, int]:
        """Crash a worker (the oldest by default); returns its id and the splits it held."""
        worker_id = worker_id or next(iter(self.workers))
        worker = self.workers.pop(worker_id)
        with self.master._lock:
            held = sum(1 for lease in self.master.state.outstanding.values()
                       if lease.worker_id == worker_id)
            worker.kill()
        logger.info("killed %s holding %d splits", worker_id, held)
        if replace:
            self.add_worker()
        self._reroute()
        return worker_id, held

    def restart_master(self) -> Tuple[Master, int]:
        """Checkpoint, replace the master with a restored one, and point workers at it."""
        old = self.master
        with old._lock:
            checkpoint = old.checkpoint()
            if self.master_cfg.checkpoint_dir:
                checkpoint.save(self.master_cfg.checkpoint_dir)
            pending = len(old.state.outstanding) + len(old.state.reissue)
            new = Master.restore(self.spec, self.catalog, checkpoint, self.master_cfg)
            old.retire()
            self.master = new
            for worker in self.workers.values():
                worker.master = new
        logger.info("master restarted from epoch %d; %d splits pending", checkpoint.epoch, pending)
        return new, pending

    # -- running -----------------------------------------------------------

    def start(self) -> "LocalCluster":
        for _ in range(self._initial_workers):
            self.add_worker()
        self._reroute()
        return self

    def stop(self) -> None:
        for worker in self.workers.values():
            worker.stop()

    def _schedule(self, kills: int, restart_master: bool, seed: int) -> List[Tuple[int, str]]:
        expected_batches = max(1, self.expected_rows // self.spec.batch_size)
        rng = np.random.default_rng(seed)
        events = [(int(t * expected_batches), "kill") for t in rng.uniform(0.05, 0.7, size=kills)]
        if restart_master:
            events.append((int(0.5 * expected_batches), "restart"))
        return sorted(events)

    def run(self, *, kills: int = 0, restart_master: bool = False, seed: int = 0,
            timeout: float = 120.0,
            on_batch: Optional[Callable[[TensorBatch], None]] = None) -> DeliveryReport:
        """Drain the session through every client; returns the delivery accounting."""
        if not self.workers:
            self.start()
        report = DeliveryReport(self.expected_rows, self.spec.split_size)
        events = self._schedule(kills, restart_master, seed)
        lock = threading.Lock()
        deadline = time.monotonic() + timeout

        def fire(delivered: int) -> None:
            with self._events_lock:
                while events and events[0][0] <= delivered:
                    _, kind = events.pop(0)
                    if kind == "kill" and self.workers:
                        _, held = self.kill_worker()
                        report.kills += 1
                    else:
                        _, held = self.restart_master()
                        report.restarts += 1
                    report.outstanding_at_failures += held

        def consume(client: Client) -> None:
            while time.monotonic() < deadline:
                result = client.next_batch(timeout=0.2)
                if result is Signal.END_OF_DATA:
                    return
                if not isinstance(result, TensorBatch):
                    continue
                with lock:
                    report.delivered.update(result.row_ids.tolist())
                    report.batches += 1
                    delivered = report.batches
                if on_batch is not None:
                    on_batch(result)
                if delivered % 16 == 0:
                    client.report_client_stats(self.master)
                if events:
                    fire(delivered)
            report.timed_out = True

        started = time.monotonic()
        threads = [threading.Thread(target=consume, args=(c,), name=c.client_id, daemon=True)
                   for c in self.clients]
        for t in threads:
            t.start()
        for t in threads:
            t.join(max(0.0, deadline - time.monotonic()) + 1.0)
        report.wall_s = time.monotonic() - started
        report.max_connections = max(c.max_connections for c in self.clients)
        for client in self.clients:
            for worker_id, n in client.served_counts().items():
                report.served_by[worker_id] = report.served_by.get(worker_id, 0) + n
        logger.info("cluster run: %s", report.summary())
        return report
