"""
Columnar table writer.

Rows are buffered per stripe, converted to a feature-major row group and
flushed as flattened per-feature streams in the configured layout order:

    stripe = [labels][f1 streams][f2 streams]...   (f_i in layout order)

Dense features get Presence + Values; sparse add Lengths; scored add Scores.
A feature with no covered row in a stripe writes no streams and is recorded
as absent in the stripe footer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lib.core.errors import SchemaViolation, SinkWriteError
from lib.core.model import FeatureKind, Sample, TableSchema
from lib.storage import encoding
from lib.storage.flatmap import Column, InMemoryRowGroup
from lib.storage.format import (
    HEADER,
    LABEL_FEATURE,
    MAGIC,
    TRAILER,
    VERSION,
    Codec,
    FileFooter,
    StreamDescriptor,
    StreamKind,
    StripeFooter,
    StripeInfo,
    checksum64,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_BYTES = 1_310_720  # 1.25 MiB


@dataclass(frozen=True)
class OrderPolicy:
    """How feature streams are physically ordered inside each stripe."""
    kind: str = "schema"
    seed: int = 0
    weights: Tuple[Tuple[int, float], ...] = ()

    @classmethod
    def schema_order(cls) -> "OrderPolicy":
        return cls("schema")

    @classmethod
    def random(cls, seed: int) -> "OrderPolicy":
        return cls("random", seed=seed)

    @classmethod
    def popularity(cls, weights: Iterable[Tuple[int, float]]) -> "OrderPolicy":
        return cls("popularity", weights=tuple((int(f), float(w)) for f, w in weights))


@dataclass(frozen=True)
class WriterConfig:
    stripe_rows: int = 4096
    coalesce_hint_bytes: int = DEFAULT_WINDOW_BYTES
    codec: Codec = Codec.IDENTITY
    order: OrderPolicy = field(default_factory=OrderPolicy)

    def __post_init__(self):
        if self.stripe_rows <= 0:
            raise ValueError("stripe rows must be positive")


def layout_order(schema: TableSchema, policy: OrderPolicy) -> List[int]:
    ids = schema.ids()
    if policy.kind == "schema":
        return ids
    if policy.kind == "random":
        rng = np.random.default_rng(policy.seed)
        return [ids[i] for i in rng.permutation(len(ids))]
    if policy.kind == "popularity":
        weights = dict(policy.weights)
        return sorted(ids, key=lambda f: (-weights.get(f, 0.0), f))
    raise ValueError(f"unknown order policy: {policy.kind}")


def check_sample(schema: TableSchema, sample: Sample, row_index: int) -> None:
    for group, kind in ((sample.dense, FeatureKind.DENSE),
                        (sample.sparse, FeatureKind.SPARSE),
                        (sample.scored, FeatureKind.SCORED)):
        for fid, value in group.items():
            actual = schema.kind_of(fid)
            if actual is None:
                raise SchemaViolation(row_index, f"feature {fid} not in schema")
            if actual != kind:
                raise SchemaViolation(row_index, f"feature {fid} is {actual.name}, got {kind.name}")
            if value is None:
                raise SchemaViolation(row_index, f"feature {fid} present but null")
    if not 0.0 <= sample.label <= 1.0:
        raise SchemaViolation(row_index, f"label {sample.label} not in [0,1]")


class TableWriter:
    """Single-threaded writer for one file; close() seals it."""

    def __init__(self, sink: BinaryIO, schema: TableSchema, cfg: Optional[WriterConfig] = None):
        self.sink = sink
        self.schema = schema
        self.cfg = cfg or WriterConfig()
        self.order = layout_order(schema, self.cfg.order)
        self._kinds = schema.kinds()
        self._pos = 0
        self._rows = 0
        self._pending: List[Sample] = []
        self._stripes: List[Tuple[int, StripeFooter]] = []
        self._write(HEADER.pack(MAGIC, VERSION))

    @property
    def rows_written(self) -> int:
        return self._rows

    def _write(self, data: bytes) -> None:
        try:
            self.sink.write(data)
        except OSError as exc:
            raise SinkWriteError(self._pos, exc) from exc
        self._pos += len(data)

    def write(self, sample: Sample) -> None:
        check_sample(self.schema, sample, self._rows + len(self._pending))
        self._pending.append(sample)
        if len(self._pending) >= self.cfg.stripe_rows:
            self._flush_pending()

    def write_group(self, group: InMemoryRowGroup) -> None:
        """Append a columnar row group, cutting it at stripe boundaries."""
        self._flush_pending()
        for fid, col in group.columns.items():
            if self._kinds.get(fid) != col.kind:
                raise SchemaViolation(self._rows, f"column {fid} does not match the schema")
        start = 0
        while start < group.row_count:
            stop = min(start + self.cfg.stripe_rows, group.row_count)
            self._write_stripe(group.slice(start, stop))
            start = stop

    def _flush_pending(self) -> None:
        if self._pending:
            group = InMemoryRowGroup.from_samples(self._pending, self._kinds)
            self._pending = []
            self._write_stripe(group)

    def _stream(self, fid: int, kind: StreamKind, raw: bytes) -> StreamDescriptor:
        data = encoding.compress(raw, self.cfg.codec)
        desc = StreamDescriptor(fid, kind, self._pos, len(data), len(raw),
                                self.cfg.codec, checksum64(data))
        self._write(data)
        return desc

    def _write_stripe(self, group: InMemoryRowGroup) -> None:
        rows = group.row_count
        offset = self._pos
        streams = [self._stream(LABEL_FEATURE, StreamKind.LABELS, encoding.encode_f32(group.labels))]
        absent = set()
        for fid in self.order:
            col = group.columns.get(fid)
            if col is None or not col.presence.any():
                absent.add(fid)
                continue
            streams.extend(self._feature_streams(fid, col))
        self._stripes.append((offset, StripeFooter(rows, tuple(streams), frozenset(absent))))
        self._rows += rows
        logger.debug("stripe %d: %d rows, %d streams, %d absent",
                     len(self._stripes) - 1, rows, len(streams), len(absent))

    def _feature_streams(self, fid: int, col: Column) -> List[StreamDescriptor]:
        present = col.presence
        out = [self._stream(fid, StreamKind.PRESENCE, encoding.encode_bitmap(present))]
        if col.kind == FeatureKind.DENSE:
            out.append(self._stream(fid, StreamKind.VALUES, encoding.encode_f64(col.values[present, 0])))
            return out
        lengths = col.lengths()[present]
        out.append(self._stream(fid, StreamKind.LENGTHS, encoding.encode_uvarints(lengths)))
        out.append(self._stream(fid, StreamKind.VALUES, encoding.encode_ids(col.values)))
        if col.kind == FeatureKind.SCORED:
            out.append(self._stream(fid, StreamKind.SCORES, encoding.encode_f32(col.scores)))
        return out

    def close(self, popularity: Sequence[Tuple[int, float]] = ()) -> FileFooter:
        self._flush_pending()
        infos = []
        for offset, footer in self._stripes:
            data = footer.encode()
            infos.append(StripeInfo(offset, self._pos, len(data), footer.row_count, checksum64(data)))
            self._write(data)
        pop = tuple(popularity) or self.cfg.order.weights
        footer = FileFooter(self.schema, tuple(infos), tuple(self.order), tuple(pop))
        data, sealed = footer.encode()
        self._write(data)
        self._write(TRAILER.pack(len(data), MAGIC))
        flush = getattr(self.sink, "flush", None)
        if flush is not None:
            try:
                flush()
            except OSError as exc:
                raise SinkWriteError(self._pos, exc) from exc
        logger.info("sealed %s/%s: %d rows, %d stripes, %d bytes", self.schema.name,
                    self.schema.partition, self._rows, len(infos), self._pos)
        return sealed


def write_table(samples: Iterable[Sample], schema: TableSchema, cfg: Optional[WriterConfig],
                sink: BinaryIO) -> FileFooter:
    writer = TableWriter(sink, schema, cfg)
    for sample in samples:
        writer.write(sample)
    return writer.close()


def stripe_count(rows: int, stripe_rows: int) -> int:
    return math.ceil(rows / stripe_rows) if rows else 0
