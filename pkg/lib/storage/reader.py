"""
Columnar table reader.

Opening a file validates header, trailer, footer checksum, every stripe footer
checksum and every descriptor's bounds. Projected reads execute a ReadPlan,
verify each stream's checksum and decode straight into an InMemoryRowGroup;
read_rows materializes Samples from it.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from lib.core.errors import BoundsError, ChecksumError, FormatError, PlanMismatchError
from lib.core.model import FeatureKind, FeatureProjection, Sample
from lib.storage import encoding
from lib.storage.flatmap import Column, InMemoryRowGroup
from lib.storage.format import (
    HEADER,
    LABEL_FEATURE,
    MAGIC,
    TRAILER,
    VERSION,
    FileFooter,
    FileLayoutStats,
    StreamDescriptor,
    StreamKind,
    StripeFooter,
    checksum64,
)
from lib.storage.planner import (
    DEFAULT_WINDOW,
    ReadPlan,
    needed_streams,
    plan_coalesced,
    plan_per_stream,
)

logger = logging.getLogger(__name__)


class ColumnarFile:
    """An open, validated columnar file. Safe for concurrent reads."""

    def __init__(self, source: Union[str, Path, bytes], name: Optional[str] = None):
        self._lock = threading.Lock()
        if isinstance(source, (bytes, bytearray, memoryview)):
            self._data: Optional[bytes] = bytes(source)
            self._fh = None
            self.size = len(self._data)
            self.name = name or "<memory>"
        else:
            self._data = None
            self._fh = open(source, "rb")
            self._fh.seek(0, 2)
            self.size = self._fh.tell()
            self.name = name or str(source)
        try:
            self.footer = self._read_footer()
            self.stripe_footers = self._read_stripe_footers()
        except Exception:
            self.close()
            raise
        self._bases = self.footer.stripe_row_bases()

    @classmethod
    def open(cls, path) -> "ColumnarFile":
        return cls(path)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def row_count(self) -> int:
        return self.footer.row_count

    @property
    def stripe_count(self) -> int:
        return len(self.footer.stripes)

    def read_at(self, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise BoundsError(f"read [{offset}, {offset + length}) outside file of {self.size} bytes")
        if self._data is not None:
            return self._data[offset:offset + length]
        with self._lock:
            self._fh.seek(offset)
            data = self._fh.read(length)
        if len(data) != length:
            raise BoundsError(f"short read at {offset}: {len(data)} of {length} bytes")
        return data

    def _read_footer(self) -> FileFooter:
        if self.size < HEADER.size + TRAILER.size:
            raise FormatError(f"{self.name}: too small to be a table file")
        magic, version = HEADER.unpack(self.read_at(0, HEADER.size))
        if magic != MAGIC or version != VERSION:
            raise FormatError(f"{self.name}: bad header")
        length, tail = TRAILER.unpack(self.read_at(self.size - TRAILER.size, TRAILER.size))
        if tail != MAGIC:
            raise FormatError(f"{self.name}: bad trailer magic (truncated?)")
        start = self.size - TRAILER.size - length
        if start < HEADER.size:
            raise FormatError(f"{self.name}: footer length {length} out of range")
        footer = FileFooter.decode(self.read_at(start, length))
        self._footer_start = start
        if sorted(footer.layout_order) != sorted(footer.schema.ids()):
            raise FormatError(f"{self.name}: layout order is not a permutation of the schema")
        return footer

    def _read_stripe_footers(self) -> List[StripeFooter]:
        out = []
        footers_start = min((s.footer_offset for s in self.footer.stripes), default=self._footer_start)
        for index, info in enumerate(self.footer.stripes):
            if info.footer_offset + info.footer_length > self._footer_start:
                raise BoundsError(f"{self.name}: stripe {index} footer outside file")
            data = self.read_at(info.footer_offset, info.footer_length)
            if checksum64(data) != info.footer_checksum:
                raise ChecksumError(f"{self.name}: stripe {index} footer checksum mismatch")
            footer = StripeFooter.decode(data)
            if footer.row_count != info.row_count:
                raise FormatError(f"{self.name}: stripe {index} row count disagrees with index")
            for desc in footer.streams:
                if desc.offset < HEADER.size or desc.end > footers_start:
                    raise BoundsError(f"{self.name}: stripe {index} stream outside data region")
            out.append(footer)
        return out

    def stripes_for_rows(self, first: int, last: int) -> range:
        """Stripe indices holding file-local rows [first, last)."""
        if last <= first:
            return range(0)
        lo = int(np.searchsorted(self._bases, first, side="right")) - 1
        hi = int(np.searchsorted(self._bases, last - 1, side="right")) - 1
        return range(lo, hi + 1)

    def stripe_base(self, index: int) -> int:
        return self._bases[index]

    def plan(self, projection: Iterable[int], stripes: Optional[Iterable[int]] = None,
             window: Optional[int] = DEFAULT_WINDOW) -> ReadPlan:
        """Coalesced plan (or per-stream when window is None), label stream included."""
        stripes = range(self.stripe_count) if stripes is None else stripes
        if window is None:
            return plan_per_stream(self.footer, self.stripe_footers, stripes, projection,
                                   include_labels=True)
        return plan_coalesced(self.footer, self.stripe_footers, stripes, projection, window,
                              include_labels=True)

    def fetch(self, plan: ReadPlan, wanted: Iterable[StreamDescriptor]) -> Dict[int, bytes]:
        """Execute the reads of `plan` that hold wanted streams; stream bytes keyed by offset."""
        wanted = {d.offset: d for d in wanted}
        blobs: Dict[int, bytes] = {}
        for io in plan.ios:
            if not any(d.offset in wanted for d in io.streams):
                continue
            data = self.read_at(io.offset, io.length)
            for desc in io.streams:
                if desc.offset not in wanted:
                    continue
                if desc.offset < io.offset or desc.end > io.end:
                    raise PlanMismatchError(f"stream at {desc.offset} lies outside its read")
                raw = data[desc.offset - io.offset:desc.end - io.offset]
                if checksum64(raw) != desc.checksum:
                    raise ChecksumError(f"{self.name}: stream at offset {desc.offset} checksum mismatch")
                blobs[desc.offset] = encoding.decompress(raw, desc.codec, desc.raw_length)
        missing = [d for off, d in wanted.items() if off not in blobs]
        if missing:
            raise PlanMismatchError(
                f"plan does not cover {len(missing)} needed streams "
                f"(first: feature {missing[0].feature_id} {missing[0].kind.name})"
            )
        return blobs

    def read_row_group(self, stripes: Iterable[int], projection: Iterable[int], plan: ReadPlan,
                       row_range: Optional[Tuple[int, int]] = None,
                       row_base: int = 0) -> InMemoryRowGroup:
        """
        Decode projected features of `stripes` into one columnar row group.

        row_range optionally narrows to file-local rows [first, last); row ids
        are row_base + file-local index.
        """
        stripes = list(stripes)
        projection = list(projection)
        kinds = {fid: self.footer.schema.kind_of(fid) for fid in projection}
        if not stripes:
            return InMemoryRowGroup.empty(kinds)
        per_stripe = needed_streams(self.footer, self.stripe_footers, stripes, projection,
                                    include_labels=True)
        blobs = self.fetch(plan, [d for descs in per_stripe.values() for d in descs])
        groups = []
        for index in stripes:
            footer = self.stripe_footers[index]
            streams = footer.by_feature()
            rows = footer.row_count
            labels = encoding.decode_f32(blobs[streams[LABEL_FEATURE][0].offset])
            columns = {}
            for fid in projection:
                if fid in footer.absent or fid not in streams:
                    columns[fid] = Column.absent(kinds[fid], rows)
                else:
                    by_kind = {d.kind: blobs[d.offset] for d in streams[fid]}
                    columns[fid] = decode_column(kinds[fid], rows, by_kind)
            base = row_base + self._bases[index]
            groups.append(InMemoryRowGroup(np.arange(base, base + rows, dtype=np.int64), labels, columns))
        group = InMemoryRowGroup.concat(groups)
        if row_range is not None:
            start = self._bases[stripes[0]]
            group = group.slice(row_range[0] - start, row_range[1] - start)
        return group

    def layout_stats(self) -> FileLayoutStats:
        stats = FileLayoutStats(file_bytes=self.size)
        for footer in self.stripe_footers:
            for desc in footer.streams:
                stats.payload_bytes += desc.length
                stats.per_feature[desc.feature_id] = stats.per_feature.get(desc.feature_id, 0) + desc.length
        return stats


def decode_column(kind: FeatureKind, rows: int, blobs: Dict[StreamKind, bytes]) -> Column:
    try:
        presence = encoding.decode_bitmap(blobs[StreamKind.PRESENCE], rows)
        present = int(presence.sum())
        if kind == FeatureKind.DENSE:
            values = encoding.decode_f64(blobs[StreamKind.VALUES])
            if len(values) != present:
                raise FormatError("dense value count does not match presence")
            full = np.zeros((rows, 1), dtype=np.float64)
            full[presence, 0] = values
            return Column(kind, presence, full)
        lengths = np.zeros(rows, dtype=np.int64)
        lengths[presence] = encoding.decode_uvarints(blobs[StreamKind.LENGTHS], present).astype(np.int64)
        offsets = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        total = int(offsets[-1])
        values = encoding.decode_ids(blobs[StreamKind.VALUES], total)
        scores = None
        if kind == FeatureKind.SCORED:
            scores = encoding.decode_f32(blobs[StreamKind.SCORES])
            if len(scores) != total:
                raise FormatError("score count does not match values")
        return Column(kind, presence, values, offsets, scores)
    except KeyError as exc:
        raise FormatError(f"missing stream {exc} for {kind.name} feature") from exc


def read_rows(file: ColumnarFile, stripes: Iterable[int], projection: FeatureProjection,
              plan: ReadPlan) -> Iterator[Sample]:
    """Projected samples; uncovered features are absent from each sample."""
    group = file.read_row_group(stripes, projection, plan)
    return group.to_samples()


def read_rows_rowmajor(file: ColumnarFile, stripes: Sequence[int], plan: ReadPlan) -> List[Sample]:
    """Decode every feature of every stripe into row-major samples (pre-flattening path)."""
    group = file.read_row_group(stripes, file.footer.schema.ids(), plan)
    return list(group.to_samples())
