"""
Trainer simulator: consumes batches at a fixed demand and measures stalls.

Each step asks the client for a batch, then spends 1/rate seconds (or
batch bytes / rate for byte demand) "computing". Time spent waiting for the
batch is stall time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

from lib.core.model import TensorBatch
from lib.dpp.wire import Signal


@dataclass
class StallReport:
    wall_s: float = 0.0
    busy_s: float = 0.0
    stall_s: float = 0.0
    batches: int = 0
    rows: int = 0
    bytes: int = 0
    ended: bool = False

    @property
    def stall_fraction(self) -> float:
        total = self.busy_s + self.stall_s
        return self.stall_s / total if total > 0 else 0.0

    def check(self) -> None:
        if not 0.0 <= self.stall_fraction <= 1.0:
            raise AssertionError("stall fraction outside [0, 1]")
        if self.busy_s + self.stall_s > self.wall_s + 1e-6:
            raise AssertionError("busy + stall exceeds wall time")

    def to_line(self) -> str:
        return (f"stall_report wall_s={self.wall_s:.6f} busy_s={self.busy_s:.6f} "
                f"stall_s={self.stall_s:.6f} stall_fraction={self.stall_fraction:.4f} "
                f"batches={self.batches} rows={self.rows} bytes={self.bytes}")

    def table(self) -> str:
        rows = [
            ("wall time (s)", f"{self.wall_s:.3f}"),
            ("busy time (s)", f"{self.busy_s:.3f}"),
            ("stall time (s)", f"{self.stall_s:.3f}"),
            ("stall fraction", f"{self.stall_fraction * 100:.1f}%"),
            ("batches", str(self.batches)),
            ("rows", str(self.rows)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"  {k:<{width}}  {v}" for k, v in rows)


def run_trainer(client, rate: float, duration: float, *, unit: str = "batches",
                clock: Callable[[], float] = time.monotonic,
                sleep: Callable[[float], None] = time.sleep,
                poll_timeout: Optional[float] = None) -> StallReport:
    """
    Consume from `client.next_batch` for `duration` seconds at `rate`
    batches/s (unit="batches") or bytes/s (unit="bytes").
    """
    if rate <= 0 or duration <= 0:
        raise ValueError("rate and duration must be positive")
    if unit not in ("batches", "bytes"):
        raise ValueError(f"unknown demand unit {unit!r}")
    report = StallReport()
    start = clock()
    while clock() - start < duration:
        asked = clock()
        remaining = max(0.0, duration - (asked - start))
        batch = client.next_batch(timeout=remaining if poll_timeout is None else poll_timeout)
        got = clock()
        report.stall_s += got - asked
        if not isinstance(batch, TensorBatch):
            if batch is Signal.END_OF_DATA:
                report.ended = True
                break
            continue
        step = 1.0 / rate if unit == "batches" else batch.nbytes / rate
        sleep(step)
        report.busy_s += step
        report.batches += 1
        report.rows += batch.row_count
        report.bytes += batch.nbytes
    report.wall_s = clock() - start
    return report
