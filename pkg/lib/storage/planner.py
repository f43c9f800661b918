"""
I/O planning and the analytic storage model.

A plan is the ordered list of physical reads needed to fetch the streams of a
projection over a stripe range. Three planners:

- plan_per_stream   one read per stream (feature flattening without coalescing)
- plan_coalesced    greedy left-to-right merge while the merged span fits the
                    window and reading through the gap is cheaper than a seek
- plan_whole_stripes  the pre-flattening baseline: one read per stripe, every byte

Reads never cross stripe boundaries. simulate_throughput prices a plan as a
seek plus a sequential transfer per read, after splitting reads larger than
the maximum I/O size.

Plans cover the projected features only. Callers that decode rows pass
include_labels=True to fetch the label stream too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lib.core.errors import UnknownFeatureError
from lib.storage.format import LABEL_FEATURE, FileFooter, StreamDescriptor, StripeFooter

MiB = 1 << 20
DEFAULT_WINDOW = 1_310_720  # 1.25 MiB


@dataclass(frozen=True)
class PlannedIO:
    offset: int
    length: int
    streams: Tuple[StreamDescriptor, ...]

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class ReadPlan:
    ios: Tuple[PlannedIO, ...]
    requested_bytes: int
    fetched_bytes: int
    stripes: Tuple[int, ...] = ()
    feature_ids: frozenset = frozenset()

    @property
    def over_read(self) -> int:
        return self.fetched_bytes - self.requested_bytes

    @property
    def io_count(self) -> int:
        return len(self.ios)

    def descriptors(self) -> List[StreamDescriptor]:
        return [d for io in self.ios for d in io.streams]


@dataclass(frozen=True)
class StorageModel:
    """Seek + bandwidth HDD model. Defaults are representative, not measured."""
    seek_s: float = 8e-3
    bandwidth_bps: float = 180e6
    max_io_bytes: int = 8 * MiB

    def __post_init__(self):
        if self.seek_s <= 0 or self.bandwidth_bps <= 0 or self.max_io_bytes <= 0:
            raise ValueError("storage model parameters must be positive")

    @property
    def break_even_window(self) -> int:
        """Largest gap that is cheaper to read through than to seek over."""
        return int(self.seek_s * self.bandwidth_bps)

    def io_seconds(self, length: int) -> float:
        """One read of `length` bytes, split at max_io_bytes."""
        pieces = max(1, math.ceil(length / self.max_io_bytes))
        return pieces * self.seek_s + length / self.bandwidth_bps


def needed_streams(footer: FileFooter, stripe_footers: Sequence[StripeFooter],
                   stripes: Iterable[int], projection: Iterable[int],
                   include_labels: bool = False) -> Dict[int, List[StreamDescriptor]]:
    """Streams a projection needs, per stripe, in byte order."""
    wanted = set(projection)
    unknown = [f for f in wanted if f not in footer.schema]
    if unknown:
        raise UnknownFeatureError(unknown)
    if include_labels:
        wanted.add(LABEL_FEATURE)
    out = {}
    for index in stripes:
        descs = [d for d in stripe_footers[index].streams if d.feature_id in wanted]
        out[index] = sorted(descs, key=lambda d: d.offset)
    return out


def _plan(groups: Dict[int, List[List[StreamDescriptor]]], projection) -> ReadPlan:
    ios = []
    requested = fetched = 0
    for index in sorted(groups):
        for group in groups[index]:
            start, end = group[0].offset, group[-1].end
            ios.append(PlannedIO(start, end - start, tuple(group)))
            requested += sum(d.length for d in group)
            fetched += end - start
    return ReadPlan(tuple(ios), requested, fetched, tuple(sorted(groups)), frozenset(projection))


def plan_per_stream(footer: FileFooter, stripe_footers: Sequence[StripeFooter],
                    stripes: Iterable[int], projection: Iterable[int],
                    include_labels: bool = False) -> ReadPlan:
    projection = list(projection)
    per_stripe = needed_streams(footer, stripe_footers, stripes, projection, include_labels)
    return _plan({i: [[d] for d in descs] for i, descs in per_stripe.items()}, projection)


def coalesce(descs: Sequence[StreamDescriptor], window: int,
             model: Optional[StorageModel] = None) -> List[List[StreamDescriptor]]:
    """
    Greedy merge of offset-sorted streams while the merged span stays within
    window. With a model, a stream joins the open group only when the merged
    read is strictly cheaper than reading the two apart.
    """
    groups: List[List[StreamDescriptor]] = []
    for desc in descs:
        if groups and desc.end - groups[-1][0].offset <= window:
            start = groups[-1][0].offset
            if model is None or model.io_seconds(desc.end - start) < (
                    model.io_seconds(groups[-1][-1].end - start) + model.io_seconds(desc.length)):
                groups[-1].append(desc)
                continue
        groups.append([desc])
    return groups


def plan_coalesced(footer: FileFooter, stripe_footers: Sequence[StripeFooter],
                   stripes: Iterable[int], projection: Iterable[int],
                   window: int = DEFAULT_WINDOW, include_labels: bool = False,
                   model: Optional[StorageModel] = None) -> ReadPlan:
    if window <= 0:
        raise ValueError("coalescing window must be positive")
    model = model or StorageModel()
    projection = list(projection)
    per_stripe = needed_streams(footer, stripe_footers, stripes, projection, include_labels)
    return _plan({i: coalesce(descs, window, model) for i, descs in per_stripe.items()}, projection)


def plan_whole_stripes(footer: FileFooter, stripe_footers: Sequence[StripeFooter],
                       stripes: Iterable[int]) -> ReadPlan:
    """Read every stream of every stripe, one read per stripe."""
    groups: Dict[int, List[List[StreamDescriptor]]] = {}
    for index in stripes:
        descs = sorted(stripe_footers[index].streams, key=lambda d: d.offset)
        groups[index] = [descs] if descs else []
    return _plan(groups, footer.schema.ids())


def simulate_throughput(plan: ReadPlan, model: StorageModel = StorageModel()) -> Tuple[float, float]:
    """(seconds, effective requested bytes per second) under the seek model."""
    if not plan.ios:
        raise ValueError("cannot price an empty plan")
    seconds = sum(model.io_seconds(io.length) for io in plan.ios)
    return seconds, plan.requested_bytes / seconds


REFERENCE_IO_SIZES = {
    "mean": 23.2e3, "std": 117e3, "p5": 18, "p25": 451,
    "p50": 1.24e3, "p75": 3.92e3, "p95": 97.7e3,
}


def io_size_summary(plan: ReadPlan) -> Dict[str, float]:
    sizes = np.array([io.length for io in plan.ios], dtype=np.float64)
    if sizes.size == 0:
        return {k: 0.0 for k in REFERENCE_IO_SIZES}
    p5, p25, p50, p75, p95 = np.percentile(sizes, [5, 25, 50, 75, 95])
    return {
        "mean": float(sizes.mean()), "std": float(sizes.std()),
        "p5": float(p5), "p25": float(p25), "p50": float(p50),
        "p75": float(p75), "p95": float(p95),
    }


def plan_rows(plan: ReadPlan) -> List[Tuple[int, int, int]]:
    """(offset, length, over-read bytes) per read."""
    return [(io.offset, io.length, io.length - sum(d.length for d in io.streams)) for io in plan.ios]
