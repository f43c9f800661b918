"""
Buffer-driven autoscaling rule.

Scale up when the fleet's buffered batches fall below floor x workers, or a
client stalled during the period: by max_step on a stall, by one otherwise.
Scale down when buffers exceed 4 x floor x workers while mean cpu/network
utilization is under half the ceiling. Never below min_workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from lib.core.config import coerce_fields
from lib.core.errors import ConfigError
from lib.core.model import WorkerStats


@dataclass
class ScalerConfig:
    period_s: float = 10.0
    buffer_floor: int = 2
    utilization_ceiling: float = 0.85
    max_step: int = 2
    min_workers: int = 1
    max_workers: int = 256
    # Stalls within this long after a scaling change are not counted.
    settle_s: float = 5.0

    def __post_init__(self):
        if self.buffer_floor < 1:
            raise ConfigError("buffer floor must be >= 1")
        if not 0.0 < self.utilization_ceiling <= 1.0:
            raise ConfigError("utilization ceiling must be in (0, 1]")
        if self.max_step < 1 or self.min_workers < 1 or self.max_workers < self.min_workers:
            raise ConfigError("bad worker step or bounds")
        if self.period_s <= 0 or self.settle_s < 0:
            raise ConfigError("period must be positive and settle time nonnegative")

    @classmethod
    def from_mapping(cls, values) -> "ScalerConfig":
        return cls(**coerce_fields(cls, values))


def evaluate_scaling(fleet: Sequence[WorkerStats], stalled: bool,
                     cfg: ScalerConfig = ScalerConfig()) -> int:
    """Signed change in worker count for one evaluation period."""
    n = len(fleet)
    if n < cfg.min_workers:
        return cfg.max_step if stalled else min(cfg.max_step, cfg.min_workers - n)
    buffered = sum(w.buffered_batches for w in fleet)
    headroom = cfg.max_workers - n
    if stalled or buffered < cfg.buffer_floor * n:
        step = cfg.max_step if stalled else 1
        return max(0, min(step, headroom))
    mean_util = sum(max(w.cpu, w.network) for w in fleet) / n
    if buffered > 4 * cfg.buffer_floor * n and mean_util < 0.5 * cfg.utilization_ceiling:
        return -min(cfg.max_step, n - cfg.min_workers)
    return 0


def target_workers(demand: float, capacity: float) -> int:
    """Smallest fleet that keeps up with demand."""
    return max(1, math.ceil(demand / capacity))
