"""
Dataset profiles for the synthetic generator.

The presets carry production dataset shapes (feature counts, average
coverage, average sparse length, share of features a job reads) and the
per-job dense/sparse projection sizes. `scale` shrinks every count by the
same factor so a profile fits on a workstation with its ratios intact.

Popularity follows Zipf(zipf_s) over a seeded rank permutation. Given those
weights, sparse features get per-feature mean lengths that grow with
popularity (mean over sparse features stays sparse_length). The growth
exponent is fit so that the most popular `popular_bytes` of stored bytes serve
80% of expected projection traffic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from lib.core.errors import ConfigError
from lib.core.model import FeatureId, FeatureKind, FeatureProjection, FeatureSpec, TableSchema
from lib.storage.popularity import bytes_share_for_traffic, popular_bytes_curve

DENSE_VALUE_BYTES = 8
ID_BYTES = 5
SCORE_BYTES = 4
TRAFFIC_SHARE = 0.8


@dataclass(frozen=True)
class DatasetProfile:
    name: str = "custom"
    dense: int = 64
    sparse: int = 16
    scored: int = 0
    coverage: float = 0.45
    sparse_length: float = 25.97
    zipf_s: float = 1.2
    popular_bytes: float = 0.40
    length_skew: Optional[float] = None
    rows_per_partition: int = 10_000
    partitions: int = 1
    files_per_partition: int = 1
    projection_dense: int = 8
    projection_sparse: int = 2
    features_used: float = 0.11
    bytes_used: float = 0.37
    id_space: int = 1 << 31

    def __post_init__(self):
        if self.dense < 0 or self.sparse < 0 or self.scored < 0:
            raise ConfigError("feature counts must be nonnegative")
        if self.dense + self.sparse + self.scored == 0:
            raise ConfigError("profile has no features")
        if not 0.0 < self.coverage <= 1.0:
            raise ConfigError(f"coverage {self.coverage} not in (0, 1]")
        if self.sparse_length < 1.0:
            raise ConfigError("mean sparse length must be >= 1")
        if self.zipf_s <= 0:
            raise ConfigError("zipf exponent must be positive")
        if not 0.0 < self.popular_bytes <= 1.0:
            raise ConfigError(f"popular bytes share {self.popular_bytes} not in (0, 1]")
        if self.length_skew is not None and self.length_skew < 0:
            raise ConfigError("length skew must be nonnegative")
        if self.rows_per_partition < 0 or self.partitions < 1 or self.files_per_partition < 1:
            raise ConfigError("rows, partitions and files per partition must be positive")
        if self.projection_dense > self.dense or self.projection_sparse > self.sparse + self.scored:
            raise ConfigError("projection asks for more features than the profile has")

    @property
    def feature_count(self) -> int:
        return self.dense + self.sparse + self.scored

    def scaled(self, factor: float) -> "DatasetProfile":
        """Same ratios, `factor` times the features (at least one of each kind present)."""
        if factor <= 0:
            raise ConfigError("scale factor must be positive")

        def shrink(n: int) -> int:
            return max(1, round(n * factor)) if n else 0

        return replace(
            self,
            dense=shrink(self.dense),
            sparse=shrink(self.sparse),
            scored=shrink(self.scored),
            projection_dense=min(shrink(self.projection_dense), shrink(self.dense)),
            projection_sparse=min(shrink(self.projection_sparse), shrink(self.sparse) + shrink(self.scored)),
        )

    def with_rows(self, rows: int) -> "DatasetProfile":
        return replace(self, rows_per_partition=rows)

    def schema(self, table: Optional[str] = None, partition: str = "p0",
               weights: Optional[Mapping[int, float]] = None) -> TableSchema:
        """
        Dense ids first, then sparse, then scored; ids start at 1. With
        popularity weights, sparse mean lengths follow sparse_lengths().
        """
        lengths = sparse_lengths(self, weights) if weights else {}
        features: List[FeatureSpec] = []
        fid = 1
        for kind, count in ((FeatureKind.DENSE, self.dense), (FeatureKind.SPARSE, self.sparse),
                            (FeatureKind.SCORED, self.scored)):
            for _ in range(count):
                length = 0.0 if kind == FeatureKind.DENSE else lengths.get(fid, self.sparse_length)
                features.append(FeatureSpec(FeatureId(fid, kind), self.coverage, length))
                fid += 1
        return TableSchema(table or self.name, partition, tuple(features))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetProfile":
        return cls(**dict(raw))


PRESETS: Dict[str, DatasetProfile] = {
    "rm1": DatasetProfile("rm1", dense=12115, sparse=1763, coverage=0.45, sparse_length=25.97,
                          projection_dense=1221, projection_sparse=298,
                          features_used=0.11, bytes_used=0.37, popular_bytes=0.39),
    "rm2": DatasetProfile("rm2", dense=12596, sparse=1817, coverage=0.41, sparse_length=25.57,
                          projection_dense=1113, projection_sparse=306,
                          features_used=0.10, bytes_used=0.34, popular_bytes=0.37),
    "rm3": DatasetProfile("rm3", dense=5707, sparse=188, coverage=0.29, sparse_length=19.64,
                          projection_dense=504, projection_sparse=42,
                          features_used=0.09, bytes_used=0.21, popular_bytes=0.18),
}


def preset(name: str, scale: float = 1.0, rows: Optional[int] = None) -> DatasetProfile:
    try:
        profile = PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})") from None
    if scale != 1.0:
        profile = profile.scaled(scale)
    if rows is not None:
        profile = profile.with_rows(rows)
    return profile


def zipf_weights(profile: DatasetProfile, seed: int) -> Dict[int, float]:
    """
    Popularity weight per feature id: a seeded permutation assigns ranks and
    rank r gets r**-s. Rank order is independent of schema order.
    """
    ids = np.array(profile.schema().ids(), dtype=np.int64)
    rng = np.random.default_rng([seed, 0x9E37])
    ranked = ids[rng.permutation(len(ids))]
    weights = np.arange(1, len(ids) + 1, dtype=np.float64) ** -profile.zipf_s
    return {int(f): float(w) for f, w in zip(ranked, weights)}


def inclusion_probabilities(weights: np.ndarray, k: int) -> np.ndarray:
    """
    Chance each item lands in a k-of-n weighted draw without replacement,
    approximated as 1 - exp(-t * w) with t chosen so the chances sum to k.
    """
    w = np.asarray(weights, dtype=np.float64)
    if k <= 0 or w.size == 0:
        return np.zeros(w.size)
    if k >= np.count_nonzero(w):
        return (w > 0).astype(np.float64)
    w = w / w.sum()
    lo, hi = 0.0, 1.0
    while np.sum(-np.expm1(-hi * w)) < k:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.sum(-np.expm1(-mid * w)) < k:
            lo = mid
        else:
            hi = mid
    return -np.expm1(-hi * w)


@dataclass(frozen=True)
class _TrafficModel:
    """Expected access chance and stored bytes per feature under a profile."""
    dense: Tuple[int, ...]
    other: Tuple[int, ...]
    scored: frozenset
    access: Dict[int, float]
    other_weights: np.ndarray

    @classmethod
    def build(cls, profile: DatasetProfile, weights: Mapping[int, float]) -> "_TrafficModel":
        schema = profile.schema()
        dense = tuple(f.id for f in schema.features if f.kind == FeatureKind.DENSE)
        other = tuple(f.id for f in schema.features if f.kind != FeatureKind.DENSE)
        scored = frozenset(f.id for f in schema.features if f.kind == FeatureKind.SCORED)
        w_dense = np.array([weights.get(f, 0.0) for f in dense], dtype=np.float64)
        w_other = np.array([weights.get(f, 0.0) for f in other], dtype=np.float64)
        access = dict(zip(dense, inclusion_probabilities(w_dense, profile.projection_dense)))
        access.update(zip(other, inclusion_probabilities(w_other, profile.projection_sparse)))
        return cls(dense, other, scored, access, w_other)

    def lengths(self, profile: DatasetProfile, skew: float) -> np.ndarray:
        raw = self.other_weights ** skew
        return 1.0 + (profile.sparse_length - 1.0) * raw / raw.mean()

    def popular_share(self, profile: DatasetProfile, skew: float) -> float:
        stored = {f: profile.coverage * DENSE_VALUE_BYTES for f in self.dense}
        if self.other:
            for fid, length in zip(self.other, self.lengths(profile, skew)):
                per_id = ID_BYTES + (SCORE_BYTES if fid in self.scored else 0)
                stored[fid] = profile.coverage * (length * per_id + 1.0)
        x, y = popular_bytes_curve(stored, self.access)
        return bytes_share_for_traffic(x, y, TRAFFIC_SHARE)


def _fit(profile: DatasetProfile, model: _TrafficModel, lo: float, hi: float, steps: int) -> float:
    if profile.length_skew is not None:
        return profile.length_skew
    target = profile.popular_bytes
    if model.popular_share(profile, lo) >= target:
        return lo
    if model.popular_share(profile, hi) <= target:
        return hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if model.popular_share(profile, mid) < target:
            lo = mid
        else:
            hi = mid
    lo_gap = abs(model.popular_share(profile, lo) - target)
    return lo if lo_gap <= abs(model.popular_share(profile, hi) - target) else hi


def fit_length_skew(profile: DatasetProfile, weights: Mapping[int, float],
                    lo: float = 0.0, hi: float = 4.0, steps: int = 40) -> float:
    """
    Length exponent whose popular-bytes share is closest to
    profile.popular_bytes. Longer popular lists raise the share, so the
    search bisects between lo and hi. An explicit profile.length_skew wins.
    """
    return _fit(profile, _TrafficModel.build(profile, weights), lo, hi, steps)


def expected_popular_bytes(profile: DatasetProfile, weights: Mapping[int, float],
                           skew: Optional[float] = None) -> float:
    """Share of stored bytes serving 80% of expected projection traffic."""
    model = _TrafficModel.build(profile, weights)
    if skew is None:
        skew = _fit(profile, model, 0.0, 4.0, 40)
    return model.popular_share(profile, skew)


def sparse_lengths(profile: DatasetProfile, weights: Mapping[int, float]) -> Dict[int, float]:
    """
    Mean list length per sparse/scored feature: 1 + (sparse_length - 1) *
    w**skew / mean(w**skew), so the average stays sparse_length.
    """
    model = _TrafficModel.build(profile, weights)
    if not model.other:
        return {}
    if not (model.other_weights > 0).all():
        return {f: profile.sparse_length for f in model.other}
    skew = _fit(profile, model, 0.0, 4.0, 40)
    return {f: float(n) for f, n in zip(model.other, model.lengths(profile, skew))}



def _draw(ids: List[int], weights: Mapping[int, float], k: int, rng: np.random.Generator) -> List[int]:
    if k <= 0 or not ids:
        return []
    w = np.array([weights.get(f, 0.0) for f in ids], dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones(len(ids))
    k = min(k, int(np.count_nonzero(w)))
    picked = rng.choice(np.array(ids), size=k, replace=False, p=w / w.sum())
    return [int(f) for f in picked]


def sample_projection(profile: DatasetProfile, weights: Mapping[int, float],
                      rng: np.random.Generator) -> FeatureProjection:
    """
    One job's projection: profile.projection_dense dense features and
    profile.projection_sparse sparse/scored features, each drawn without
    replacement with probability proportional to popularity.
    """
    schema = profile.schema()
    dense = [f.id for f in schema.features if f.kind == FeatureKind.DENSE]
    other = [f.id for f in schema.features if f.kind != FeatureKind.DENSE]
    picked = _draw(dense, weights, profile.projection_dense, rng)
    picked += _draw(other, weights, profile.projection_sparse, rng)
    if not picked:
        raise ConfigError("profile projects no features")
    return FeatureProjection(tuple(sorted(picked)))
