"""
Discrete-event harness for the autoscaling controller (simpy).

Workers produce one batch every 1/capacity seconds into a bounded buffer and
block while it is full. The trainer consumes one batch every 1/demand seconds
from whichever worker has one, stalling when none does. Every period the
controller turns worker stats and recent stalls into a scaling decision.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Tuple

import simpy

from lib.core.model import WorkerStats
from lib.dpp.scaler import ScalerConfig, evaluate_scaling, target_workers

logger = logging.getLogger(__name__)


class SimWorker:
    def __init__(self, env: simpy.Environment, index: int, capacity: float, buffer: int,
                 trainer: "SimTrainer"):
        self.env = env
        self.index = index
        self.interval = 1.0 / capacity
        self.buffer_capacity = buffer
        self.trainer = trainer
        self.buffer: Deque[float] = deque()
        self.producing = True
        self.busy_s = 0.0
        self._space: Optional[simpy.Event] = None
        self.process = env.process(self.run())

    def run(self):
        while self.producing:
            if len(self.buffer) >= self.buffer_capacity:
                self._space = self.env.event()
                yield self._space
                continue
            yield self.env.timeout(self.interval)
            if not self.producing:
                break
            self.busy_s += self.interval
            self.buffer.append(self.env.now)
            self.trainer.notify()

    def take(self) -> float:
        item = self.buffer.popleft()
        if self._space is not None and not self._space.triggered:
            self._space.succeed()
        return item

    def stats(self, period: float, busy_before: float) -> WorkerStats:
        cpu = min(1.0, (self.busy_s - busy_before) / period)
        return WorkerStats(cpu=cpu, memory=len(self.buffer) / self.buffer_capacity,
                           network=cpu, buffered_batches=len(self.buffer))


class SimTrainer:
    def __init__(self, env: simpy.Environment, demand: float):
        self.env = env
        self.interval = 1.0 / demand
        self.workers: List[SimWorker] = []
        self.cursor = 0
        self.consumed = 0
        self.busy_s = 0.0
        self.stall_s = 0.0
        self.stalls: List[Tuple[float, float]] = []
        self.stalled_since: Optional[float] = None
        self._waiting: Optional[simpy.Event] = None
        self.process = env.process(self.run())

    def notify(self) -> None:
        if self._waiting is not None and not self._waiting.triggered:
            self._waiting.succeed()

    def _pick(self) -> Optional[SimWorker]:
        n = len(self.workers)
        for i in range(n):
            w = self.workers[(self.cursor + i) % n]
            if w.buffer:
                self.cursor = (self.cursor + i + 1) % n
                return w
        return None

    def run(self):
        while True:
            worker = self._pick()
            if worker is None:
                started = self.env.now
                self.stalled_since = started
                self._waiting = self.env.event()
                yield self._waiting
                self._waiting = None
                self.stalled_since = None
                if self.env.now > started:
                    self.stalls.append((started, self.env.now))
                    self.stall_s += self.env.now - started
                continue
            worker.take()
            self.consumed += 1
            yield self.env.timeout(self.interval)
            self.busy_s += self.interval

    def stalled_between(self, start: float, end: float) -> bool:
        if self.stalled_since is not None and self.stalled_since < end and end > start:
            return True
        return any(s < end and e > start for s, e in self.stalls)


@dataclass
class AutoscaleTrace:
    demand: float
    capacity: float
    workers: List[int] = field(default_factory=list)
    buffered: List[int] = field(default_factory=list)
    deltas: List[int] = field(default_factory=list)
    stall_fraction: float = 0.0

    @property
    def target(self) -> int:
        return target_workers(self.demand, self.capacity)

    def converged_by(self, period: int) -> bool:
        """Worker count within [target, target + 1] from `period` to the end."""
        tail = self.workers[period:]
        return bool(tail) and all(self.target <= n <= self.target + 1 for n in tail)


def simulate_autoscaler(demand: float, capacity: float, *, periods: int = 30,
                        initial_workers: int = 1, buffer_capacity: int = 8,
                        cfg: Optional[ScalerConfig] = None) -> AutoscaleTrace:
    """Run the controller for `periods` evaluation periods; one trace entry per period."""
    cfg = cfg or ScalerConfig()
    env = simpy.Environment()
    trainer = SimTrainer(env, demand)
    next_index = [0]

    def launch(count: int) -> None:
        for _ in range(count):
            trainer.workers.append(SimWorker(env, next_index[0], capacity, buffer_capacity, trainer))
            next_index[0] += 1

    def retire(count: int) -> None:
        # Drained workers stop producing; whatever they buffered is dropped from routing.
        for worker in trainer.workers[-count:]:
            worker.producing = False
        del trainer.workers[-count:]

    launch(max(1, initial_workers))
    trace = AutoscaleTrace(demand, capacity)
    last_change = [float("-inf")]

    def controller():
        busy_before = {id(w): w.busy_s for w in trainer.workers}
        for _ in range(periods):
            start = env.now
            yield env.timeout(cfg.period_s)
            fleet = [w.stats(cfg.period_s, busy_before.get(id(w), 0.0)) for w in trainer.workers]
            window_start = max(start, last_change[0] + cfg.settle_s)
            stalled = trainer.stalled_between(window_start, env.now)
            delta = evaluate_scaling(fleet, stalled, cfg)
            if delta > 0:
                launch(delta)
            elif delta < 0:
                retire(-delta)
            if delta:
                last_change[0] = env.now
            trace.deltas.append(delta)
            trace.workers.append(len(trainer.workers))
            trace.buffered.append(sum(len(w.buffer) for w in trainer.workers))
            busy_before = {id(w): w.busy_s for w in trainer.workers}
            logger.debug("t=%.1f workers=%d delta=%+d stalled=%s", env.now, len(trainer.workers),
                         delta, stalled)

    done = env.process(controller())
    env.run(until=done)
    total = trainer.busy_s + trainer.stall_s
    trace.stall_fraction = trainer.stall_s / total if total > 0 else 0.0
    return trace
