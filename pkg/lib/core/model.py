"""
Core domain model - types shared by every layer.

Samples, schemas, projections, session specs, splits, tensor batches and
worker statistics. Everything here is immutable after construction except
TensorBatch buffers, which are owned by whoever built the batch.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

if TYPE_CHECKING:
    from lib.transforms.graph import TransformGraph

U32_MAX = (1 << 32) - 1


class FeatureKind(enum.IntEnum):
    DENSE = 0
    SPARSE = 1
    SCORED = 2


@dataclass(frozen=True)
class FeatureId:
    id: int
    kind: FeatureKind

    def __post_init__(self):
        if not 0 <= self.id < U32_MAX:
            raise ValueError(f"feature id out of u32 range: {self.id}")


@dataclass(frozen=True)
class FeatureSpec:
    """One schema entry: id, kind, coverage and mean sparse length."""
    fid: FeatureId
    coverage: float = 1.0
    mean_length: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"feature {self.fid.id}: coverage {self.coverage} not in [0,1]")
        if self.mean_length < 0:
            raise ValueError(f"feature {self.fid.id}: negative mean length")
        if self.fid.kind == FeatureKind.DENSE and self.mean_length != 0.0:
            raise ValueError(f"dense feature {self.fid.id} must have mean length 0")

    @property
    def id(self) -> int:
        return self.fid.id

    @property
    def kind(self) -> FeatureKind:
        return self.fid.kind


@dataclass(frozen=True)
class TableSchema:
    name: str
    partition: str
    features: Tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        by_id: Dict[int, FeatureSpec] = {}
        for spec in self.features:
            if spec.id in by_id:
                raise ValueError(f"duplicate feature id {spec.id} in schema {self.name}")
            by_id[spec.id] = spec
        object.__setattr__(self, "_by_id", by_id)

    def __contains__(self, feature_id: int) -> bool:
        return feature_id in self._by_id

    def spec(self, feature_id: int) -> FeatureSpec:
        return self._by_id[feature_id]

    def kind_of(self, feature_id: int) -> Optional[FeatureKind]:
        spec = self._by_id.get(feature_id)
        return spec.kind if spec else None

    def ids(self) -> List[int]:
        return [f.id for f in self.features]

    def kinds(self) -> Dict[int, FeatureKind]:
        return {f.id: f.kind for f in self.features}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "partition": self.partition,
            "features": [
                [f.id, int(f.kind), f.coverage, f.mean_length] for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TableSchema":
        features = tuple(
            FeatureSpec(FeatureId(int(fid), FeatureKind(int(kind))), float(cov), float(length))
            for fid, kind, cov, length in raw["features"]
        )
        return cls(name=raw["name"], partition=raw["partition"], features=features)


@dataclass(frozen=True)
class Sample:
    """One training row. A feature missing from every map is not covered."""
    dense: Mapping[int, float] = field(default_factory=dict)
    sparse: Mapping[int, List[int]] = field(default_factory=dict)
    scored: Mapping[int, List[Tuple[int, float]]] = field(default_factory=dict)
    label: float = 0.0
    row_id: int = -1

    def feature_ids(self) -> set:
        return set(self.dense) | set(self.sparse) | set(self.scored)

    def project(self, projection: Iterable[int]) -> "Sample":
        keep = set(projection)
        return Sample(
            dense={k: v for k, v in self.dense.items() if k in keep},
            sparse={k: v for k, v in self.sparse.items() if k in keep},
            scored={k: v for k, v in self.scored.items() if k in keep},
            label=self.label,
            row_id=self.row_id,
        )


@dataclass(frozen=True)
class FeatureProjection:
    """Ordered set of requested feature ids (the column filter)."""
    requested: Tuple[int, ...]

    def __post_init__(self):
        ordered = tuple(dict.fromkeys(int(f) for f in self.requested))
        if not ordered:
            raise ValueError("feature projection must not be empty")
        object.__setattr__(self, "requested", ordered)
        object.__setattr__(self, "_set", frozenset(ordered))

    def __contains__(self, feature_id: int) -> bool:
        return feature_id in self._set

    def __iter__(self) -> Iterator[int]:
        return iter(self.requested)

    def __len__(self) -> int:
        return len(self.requested)

    def as_set(self) -> frozenset:
        return self._set


@dataclass(frozen=True)
class SessionSpec:
    """What a training job reads: table, partitions, features, transforms."""
    table: str
    partitions: Tuple[str, ...]
    projection: FeatureProjection
    graph: "TransformGraph"
    batch_size: int = 512
    split_size: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(self.partitions))
        if not self.partitions:
            raise ValueError("session needs at least one partition")
        if self.batch_size <= 0 or self.split_size <= 0:
            raise ValueError("batch size and split size must be positive")
        if self.batch_size > self.split_size:
            raise ValueError(
                f"batch size {self.batch_size} exceeds split size {self.split_size}"
            )

    def digest(self) -> str:
        payload = json.dumps(
            {
                "table": self.table,
                "partitions": list(self.partitions),
                "projection": list(self.projection.requested),
                "graph": self.graph.to_manifest(),
                "batch_size": self.batch_size,
                "split_size": self.split_size,
            },
            sort_keys=True,
        )
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


@dataclass(frozen=True)
class Split:
    """A contiguous row range of one file, leased to workers as a unit."""
    split_id: int
    path: str
    stripe_first: int
    stripe_last: int
    row_first: int
    row_last: int
    file_row_base: int = 0

    @property
    def row_count(self) -> int:
        return self.row_last - self.row_first

    def stripes(self) -> range:
        return range(self.stripe_first, self.stripe_last + 1)


@dataclass
class TensorBatch:
    """
    A mini-batch of transformed features packed for the trainer.

    Dense buffers are row-major float32 of length rows * width. Sparse
    features are CSR-style (values int64, offsets int32 of length rows + 1).
    Scored features carry a float32 score array aligned with their values.
    """
    batch_id: int
    row_count: int
    labels: np.ndarray
    row_ids: np.ndarray
    dense: Dict[int, np.ndarray] = field(default_factory=dict)
    dense_width: Dict[int, int] = field(default_factory=dict)
    sparse: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    scores: Dict[int, np.ndarray] = field(default_factory=dict)

    def problems(self) -> List[str]:
        out = []
        if self.row_count <= 0:
            out.append("row count must be positive")
        if len(self.labels) != self.row_count:
            out.append("labels length != row count")
        if len(self.row_ids) != self.row_count:
            out.append("row_ids length != row count")
        for fid, buf in self.dense.items():
            width = self.dense_width.get(fid, 1)
            if len(buf) != self.row_count * width:
                out.append(f"dense {fid}: length {len(buf)} != rows*width")
        for fid, (values, offsets) in self.sparse.items():
            if len(offsets) != self.row_count + 1:
                out.append(f"sparse {fid}: offsets length {len(offsets)}")
                continue
            if offsets[0] != 0 or offsets[-1] != len(values):
                out.append(f"sparse {fid}: offsets do not span values")
            if np.any(np.diff(offsets) < 0):
                out.append(f"sparse {fid}: offsets not monotone")
            if fid in self.scores and len(self.scores[fid]) != len(values):
                out.append(f"sparse {fid}: scores misaligned")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ValueError(f"batch {self.batch_id}: " + "; ".join(problems))

    def sparse_row(self, feature_id: int, row: int) -> List[int]:
        values, offsets = self.sparse[feature_id]
        return values[offsets[row]:offsets[row + 1]].tolist()

    def dense_row(self, feature_id: int, row: int) -> np.ndarray:
        width = self.dense_width.get(feature_id, 1)
        return self.dense[feature_id][row * width:(row + 1) * width]

    @property
    def nbytes(self) -> int:
        total = self.labels.nbytes + self.row_ids.nbytes
        total += sum(b.nbytes for b in self.dense.values())
        total += sum(v.nbytes + o.nbytes for v, o in self.sparse.values())
        total += sum(s.nbytes for s in self.scores.values())
        return total


@dataclass(frozen=True)
class WorkerStats:
    cpu: float = 0.0
    memory: float = 0.0
    network: float = 0.0
    buffered_batches: int = 0
    splits_completed: int = 0

    def __post_init__(self):
        for name in ("cpu", "memory", "network"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} utilization {value} not in [0,1]")
        if self.buffered_batches < 0:
            raise ValueError("buffered batches must be nonnegative")
