"""
In-memory flatmaps: feature-major columnar row groups.

The reader decodes streams straight into these, the executor transforms them
column by column, and the generator builds them before writing. Samples
(row-major maps) are only materialized on request.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from lib.core.model import FeatureKind, Sample


def _offsets_from_lengths(lengths: np.ndarray) -> np.ndarray:
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return offsets


def gather_positions(offsets: np.ndarray, rows: np.ndarray):
    """Value positions and new offsets for a row gather over CSR offsets."""
    starts = offsets[rows]
    lens = offsets[rows + 1] - starts
    new_offsets = _offsets_from_lengths(lens)
    total = int(new_offsets[-1])
    positions = np.repeat(starts - new_offsets[:-1], lens) + np.arange(total, dtype=np.int64)
    return positions, new_offsets


@dataclass
class Column:
    """
    One feature over a row group.

    Dense: values float64 of shape (rows, width). Sparse/scored: values int64
    concatenated over rows with CSR offsets (rows + 1); scored adds float32
    scores aligned with values. Rows where presence is False hold 0.0 (dense)
    or an empty list (sparse).
    """
    kind: FeatureKind
    presence: np.ndarray
    values: np.ndarray
    offsets: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return len(self.presence)

    @property
    def width(self) -> int:
        return self.values.shape[1] if self.kind == FeatureKind.DENSE else 1

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def absent(cls, kind: FeatureKind, rows: int) -> "Column":
        presence = np.zeros(rows, dtype=bool)
        if kind == FeatureKind.DENSE:
            return cls(kind, presence, np.zeros((rows, 1), dtype=np.float64))
        scores = np.zeros(0, dtype=np.float32) if kind == FeatureKind.SCORED else None
        return cls(kind, presence, np.zeros(0, dtype=np.int64),
                   np.zeros(rows + 1, dtype=np.int64), scores)

    def slice(self, start: int, stop: int) -> "Column":
        if self.kind == FeatureKind.DENSE:
            return Column(self.kind, self.presence[start:stop], self.values[start:stop])
        lo, hi = int(self.offsets[start]), int(self.offsets[stop])
        scores = self.scores[lo:hi] if self.scores is not None else None
        return Column(self.kind, self.presence[start:stop], self.values[lo:hi],
                      self.offsets[start:stop + 1] - lo, scores)

    def take(self, rows: np.ndarray) -> "Column":
        rows = np.asarray(rows, dtype=np.int64)
        if self.kind == FeatureKind.DENSE:
            return Column(self.kind, self.presence[rows], self.values[rows])
        positions, offsets = gather_positions(self.offsets, rows)
        scores = self.scores[positions] if self.scores is not None else None
        return Column(self.kind, self.presence[rows], self.values[positions], offsets, scores)

    @classmethod
    def concat(cls, columns: Sequence["Column"]) -> "Column":
        first = columns[0]
        presence = np.concatenate([c.presence for c in columns])
        if first.kind == FeatureKind.DENSE:
            return cls(first.kind, presence, np.concatenate([c.values for c in columns]))
        lengths = np.concatenate([c.lengths() for c in columns])
        scores = None
        if first.scores is not None:
            scores = np.concatenate([c.scores for c in columns])
        return cls(first.kind, presence, np.concatenate([c.values for c in columns]),
                   _offsets_from_lengths(lengths), scores)


@dataclass
class InMemoryRowGroup:
    """Feature-major arrays for a run of rows (labels and row ids included)."""
    row_ids: np.ndarray
    labels: np.ndarray
    columns: Dict[int, Column]

    @property
    def row_count(self) -> int:
        return len(self.row_ids)

    def check(self) -> List[str]:
        problems = []
        if len(self.labels) != self.row_count:
            problems.append("labels length mismatch")
        for fid, col in self.columns.items():
            if col.rows != self.row_count:
                problems.append(f"feature {fid}: {col.rows} rows, expected {self.row_count}")
            elif col.kind != FeatureKind.DENSE:
                if len(col.offsets) != col.rows + 1 or col.offsets[-1] != len(col.values):
                    problems.append(f"feature {fid}: offsets do not span values")
        return problems

    def slice(self, start: int, stop: int) -> "InMemoryRowGroup":
        return InMemoryRowGroup(
            self.row_ids[start:stop],
            self.labels[start:stop],
            {fid: col.slice(start, stop) for fid, col in self.columns.items()},
        )

    def take(self, rows: np.ndarray) -> "InMemoryRowGroup":
        return InMemoryRowGroup(
            self.row_ids[rows],
            self.labels[rows],
            {fid: col.take(rows) for fid, col in self.columns.items()},
        )

    def project(self, feature_ids: Iterable[int]) -> "InMemoryRowGroup":
        keep = set(feature_ids)
        return InMemoryRowGroup(self.row_ids, self.labels,
                                {f: c for f, c in self.columns.items() if f in keep})

    @classmethod
    def empty(cls, kinds: Mapping[int, FeatureKind]) -> "InMemoryRowGroup":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32),
                   {fid: Column.absent(kind, 0) for fid, kind in kinds.items()})

    @classmethod
    def concat(cls, groups: Sequence["InMemoryRowGroup"]) -> "InMemoryRowGroup":
        if len(groups) == 1:
            return groups[0]
        columns = {fid: Column.concat([g.columns[fid] for g in groups])
                   for fid in groups[0].columns}
        return cls(np.concatenate([g.row_ids for g in groups]),
                   np.concatenate([g.labels for g in groups]), columns)

    @classmethod
    def from_samples(cls, samples: Iterable[Sample],
                     kinds: Optional[Mapping[int, FeatureKind]] = None) -> "InMemoryRowGroup":
        """Row-major to columnar conversion (the copy the flatmap path avoids)."""
        samples = list(samples)
        n = len(samples)
        if kinds is None:
            kinds = {}
            for s in samples:
                kinds.update((f, FeatureKind.DENSE) for f in s.dense)
                kinds.update((f, FeatureKind.SPARSE) for f in s.sparse)
                kinds.update((f, FeatureKind.SCORED) for f in s.scored)
        columns: Dict[int, Column] = {}
        for fid, kind in kinds.items():
            if kind == FeatureKind.DENSE:
                presence = np.array([fid in s.dense for s in samples], dtype=bool)
                values = np.array([s.dense.get(fid, 0.0) for s in samples],
                                  dtype=np.float64).reshape(n, 1)
                columns[fid] = Column(kind, presence, values)
                continue
            source = [(s.sparse if kind == FeatureKind.SPARSE else s.scored).get(fid)
                      for s in samples]
            presence = np.array([v is not None for v in source], dtype=bool)
            lengths = np.array([len(v) if v is not None else 0 for v in source], dtype=np.int64)
            offsets = _offsets_from_lengths(lengths)
            total = int(offsets[-1])
            present = [v for v in source if v]
            if kind == FeatureKind.SPARSE:
                values = np.fromiter(itertools.chain.from_iterable(present),
                                     dtype=np.int64, count=total)
                columns[fid] = Column(kind, presence, values, offsets)
            else:
                pairs = list(itertools.chain.from_iterable(present))
                values = np.array([p[0] for p in pairs], dtype=np.int64)
                scores = np.array([p[1] for p in pairs], dtype=np.float32)
                columns[fid] = Column(kind, presence, values, offsets, scores)
        row_ids = np.array([s.row_id for s in samples], dtype=np.int64)
        labels = np.array([s.label for s in samples], dtype=np.float32)
        return cls(row_ids, labels, columns)

    def to_samples(self) -> Iterator[Sample]:
        n = self.row_count
        dense, sparse, scored = [], [], []
        for fid, col in self.columns.items():
            present = col.presence.tolist()
            if col.kind == FeatureKind.DENSE:
                dense.append((fid, present, col.values[:, 0].tolist()))
            elif col.kind == FeatureKind.SPARSE:
                sparse.append((fid, present, col.values.tolist(), col.offsets.tolist()))
            else:
                pairs = list(zip(col.values.tolist(), col.scores.tolist()))
                scored.append((fid, present, pairs, col.offsets.tolist()))
        row_ids = self.row_ids.tolist()
        labels = self.labels.tolist()
        for r in range(n):
            yield Sample(
                dense={f: vals[r] for f, pres, vals in dense if pres[r]},
                sparse={f: vals[offs[r]:offs[r + 1]] for f, pres, vals, offs in sparse if pres[r]},
                scored={f: pairs[offs[r]:offs[r + 1]] for f, pres, pairs, offs in scored if pres[r]},
                label=labels[r],
                row_id=row_ids[r],
            )
