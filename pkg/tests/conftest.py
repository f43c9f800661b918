"""Shared fixtures: a small mixed-kind schema, random samples, tiny tables."""

import numpy as np
import pytest

from lib.core.model import FeatureId, FeatureKind, FeatureSpec, Sample, TableSchema
from lib.bench.generator import gen_dataset
from lib.bench.profiles import DatasetProfile


def make_schema(dense=3, sparse=3, scored=2, coverage=0.6, name="t"):
    features = []
    fid = 1
    for kind, count in ((FeatureKind.DENSE, dense), (FeatureKind.SPARSE, sparse),
                        (FeatureKind.SCORED, scored)):
        for _ in range(count):
            length = 0.0 if kind == FeatureKind.DENSE else 4.0
            features.append(FeatureSpec(FeatureId(fid, kind), coverage, length))
            fid += 1
    return TableSchema(name, "p0", tuple(features))


def make_samples(schema, n, seed=0, row_base=0):
    rng = np.random.default_rng(seed)
    out = []
    for r in range(n):
        dense, sparse, scored = {}, {}, {}
        for spec in schema.features:
            if rng.random() >= spec.coverage:
                continue
            if spec.kind == FeatureKind.DENSE:
                dense[spec.id] = float(rng.normal(0, 10))
            elif spec.kind == FeatureKind.SPARSE:
                k = int(rng.integers(0, 8))
                sparse[spec.id] = [int(v) for v in rng.integers(-(1 << 40), 1 << 40, size=k)]
            else:
                k = int(rng.integers(0, 6))
                scored[spec.id] = [(int(i), float(np.float32(s)))
                                   for i, s in zip(rng.integers(0, 1 << 20, size=k), rng.random(k))]
        out.append(Sample(dense, sparse, scored, label=float(rng.random() < 0.3), row_id=row_base + r))
    return out


@pytest.fixture
def schema():
    return make_schema()


@pytest.fixture
def samples(schema):
    return make_samples(schema, 300, seed=11)


@pytest.fixture
def tiny_profile():
    return DatasetProfile("tiny", dense=12, sparse=6, scored=2, coverage=0.5, sparse_length=4.0,
                          rows_per_partition=2000, partitions=2, files_per_partition=2,
                          projection_dense=4, projection_sparse=3)


@pytest.fixture
def tiny_table(tmp_path, tiny_profile):
    """Two partitions of two files each, 500-row stripes."""
    catalog = gen_dataset(tiny_profile, tmp_path / "table", seed=5, order="random", stripe_rows=500)
    return catalog
