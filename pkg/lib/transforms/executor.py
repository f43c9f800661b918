"""
Graph executor: projected row groups in, TensorBatches out.

Input rows are cut into mini-batches first and every mini-batch is
transformed on its own, so nothing crosses a batch boundary. Rows rejected
by a domain error or dropped by sampling leave the batch; a batch that ends
up empty is not emitted.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Union

import numpy as np

from lib.core.errors import UnknownFeatureError
from lib.core.model import FeatureKind, Sample, TensorBatch
from lib.storage.flatmap import Column, InMemoryRowGroup
from lib.transforms.graph import TransformGraph
from lib.transforms.kernels import (
    DENSE_NORM,
    FEATURE_GEN,
    SPARSE_NORM,
    KernelContext,
    run_kernel,
)

logger = logging.getLogger(__name__)

REFERENCE_CLASS_SHARES = {DENSE_NORM: 0.05, SPARSE_NORM: 0.20, FEATURE_GEN: 0.75}


@dataclass
class ExecutionStats:
    rows_in: int = 0
    rows_out: int = 0
    rows_rejected: int = 0
    rows_sampled_out: int = 0
    batches: int = 0
    counters: Dict[str, int] = field(default_factory=dict)
    class_seconds: Dict[str, float] = field(default_factory=dict)

    def add_time(self, op_class: str, seconds: float) -> None:
        self.class_seconds[op_class] = self.class_seconds.get(op_class, 0.0) + seconds

    def add_counters(self, counters: Mapping[str, int]) -> None:
        for name, value in counters.items():
            self.counters[name] = self.counters.get(name, 0) + value

    def merge(self, other: "ExecutionStats") -> None:
        self.rows_in += other.rows_in
        self.rows_out += other.rows_out
        self.rows_rejected += other.rows_rejected
        self.rows_sampled_out += other.rows_sampled_out
        self.batches += other.batches
        self.add_counters(other.counters)
        for op_class, seconds in other.class_seconds.items():
            self.add_time(op_class, seconds)

    def class_shares(self) -> Dict[str, float]:
        total = sum(self.class_seconds.values())
        if total <= 0:
            return {}
        return {k: v / total for k, v in sorted(self.class_seconds.items())}


def describe_class_shares(shares: Mapping[str, float]) -> str:
    """Measured time share per operator class beside the production mix."""
    return ", ".join(f"{name} {shares.get(name, 0.0) * 100:.0f}% (reference {ref * 100:.0f}%)"
                     for name, ref in REFERENCE_CLASS_SHARES.items())


def pack_batch(batch_id: int, group: InMemoryRowGroup) -> TensorBatch:
    """Pack a columnar row group into trainer buffers."""
    batch = TensorBatch(
        batch_id=batch_id,
        row_count=group.row_count,
        labels=np.asarray(group.labels, dtype=np.float32),
        row_ids=np.asarray(group.row_ids, dtype=np.int64),
    )
    for fid, col in group.columns.items():
        if col.kind == FeatureKind.DENSE:
            batch.dense[fid] = np.ascontiguousarray(col.values, dtype=np.float32).reshape(-1)
            batch.dense_width[fid] = col.width
            continue
        batch.sparse[fid] = (np.asarray(col.values, dtype=np.int64),
                             np.asarray(col.offsets, dtype=np.int32))
        if col.kind == FeatureKind.SCORED:
            batch.scores[fid] = np.asarray(col.scores, dtype=np.float32)
    return batch


class GraphExecutor:
    """Runs one TransformGraph over mini-batches of a fixed input projection."""

    def __init__(self, graph: TransformGraph, input_kinds: Optional[Mapping[int, FeatureKind]] = None):
        self.graph = graph
        order, cycle = graph.topological_order()
        if cycle:
            raise ValueError(f"transform graph has a cycle through outputs {cycle}")
        self.order = order
        self.input_kinds = dict(input_kinds or {})

    def transform(self, group: InMemoryRowGroup, stats: ExecutionStats) -> InMemoryRowGroup:
        """Evaluate every node on one mini-batch and drop rejected/sampled rows."""
        ctx = KernelContext.for_rows(group.row_ids)
        columns: Dict[int, Column] = dict(group.columns)
        for node in self.order:
            missing = [f for f in node.inputs if f not in columns]
            if missing:
                raise UnknownFeatureError(missing)
            started = time.perf_counter()
            columns[node.output] = run_kernel(
                node.operator, [columns[f] for f in node.inputs], node.params, ctx
            )
            stats.add_time(node.operator.op_class, time.perf_counter() - started)
        stats.add_counters(ctx.counters)
        stats.rows_in += group.row_count
        rejected = int(ctx.reject.sum())
        if rejected:
            logger.debug("rejected %d of %d rows on domain errors", rejected, group.row_count)
        stats.rows_rejected += rejected
        stats.rows_sampled_out += int((~ctx.keep & ~ctx.reject).sum())
        out = InMemoryRowGroup(group.row_ids, group.labels, columns)
        survivors = ctx.keep & ~ctx.reject
        if not survivors.all():
            out = out.take(np.flatnonzero(survivors))
        stats.rows_out += out.row_count
        return out

    def batches(self, group: InMemoryRowGroup, batch_size: int, *,
                stats: Optional[ExecutionStats] = None,
                first_batch_id: int = 0) -> Iterator[TensorBatch]:
        if batch_size <= 0:
            raise ValueError("batch size must be positive")
        stats = stats if stats is not None else ExecutionStats()
        batch_id = first_batch_id
        for start in range(0, group.row_count, batch_size):
            piece = self.transform(group.slice(start, min(start + batch_size, group.row_count)), stats)
            if piece.row_count == 0:
                continue
            stats.batches += 1
            yield pack_batch(batch_id, piece)
            batch_id += 1


def execute_graph(graph: TransformGraph, rows: Union[InMemoryRowGroup, Iterable[Sample]],
                  batch_size: int, *, kinds: Optional[Mapping[int, FeatureKind]] = None,
                  stats: Optional[ExecutionStats] = None,
                  first_batch_id: int = 0) -> Iterator[TensorBatch]:
    """
    Transform projected rows and pack them into TensorBatches.

    Samples are converted to a row group first; pass `kinds` so features that
    are absent in every sample still get a column.
    """
    if not isinstance(rows, InMemoryRowGroup):
        rows = InMemoryRowGroup.from_samples(rows, kinds)
    executor = GraphExecutor(graph, {f: c.kind for f, c in rows.columns.items()})
    return executor.batches(rows, batch_size, stats=stats, first_batch_id=first_batch_id)


def batches_to_samples(batches: Iterable[TensorBatch],
                       kinds: Mapping[int, FeatureKind]) -> List[Sample]:
    """Unpack batches back to samples (test and debugging aid)."""
    out = []
    for batch in batches:
        for r in range(batch.row_count):
            dense, sparse, scored = {}, {}, {}
            for fid, kind in kinds.items():
                if kind == FeatureKind.DENSE and fid in batch.dense:
                    row = batch.dense_row(fid, r)
                    dense[fid] = float(row[0]) if len(row) == 1 else row.tolist()
                elif fid in batch.sparse:
                    values = batch.sparse_row(fid, r)
                    if kind == FeatureKind.SCORED:
                        _, offsets = batch.sparse[fid]
                        scores = batch.scores[fid][offsets[r]:offsets[r + 1]].tolist()
                        scored[fid] = list(zip(values, scores))
                    else:
                        sparse[fid] = values
            out.append(Sample(dense=dense, sparse=sparse, scored=scored,
                              label=float(batch.labels[r]), row_id=int(batch.row_ids[r])))
    return out

