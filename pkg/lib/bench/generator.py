"""
Synthetic dataset generator.

Rows are built feature-major straight into InMemoryRowGroups: every feature
is present in a row with probability profile.coverage, sparse lists have
Geometric(1 / mean) lengths with the schema's per-feature mean, dense values
are Gamma(2, 1) and labels are Bernoulli(0.1). Output is deterministic for a
given profile and seed.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from lib.core.errors import ConfigError
from lib.core.model import FeatureKind, FeatureProjection, SessionSpec, TableSchema
from lib.storage.catalog import TableCatalog
from lib.storage.flatmap import Column, InMemoryRowGroup
from lib.storage.writer import OrderPolicy, TableWriter, WriterConfig
from lib.transforms.graph import TransformGraph, identity_graph, node_from
from lib.bench.profiles import DatasetProfile, sample_projection, zipf_weights

logger = logging.getLogger(__name__)

ORDERS = ("schema", "random", "popularity")
POSITIVE_RATE = 0.1


def generate_group(profile: DatasetProfile, rows: int, seed: int, *, row_base: int = 0,
                   stream: int = 0, schema: Optional[TableSchema] = None) -> InMemoryRowGroup:
    """`rows` synthetic rows; `stream` separates independent chunks under one seed."""
    schema = schema or profile.schema()
    rng = np.random.default_rng([seed, stream])
    labels = (rng.random(rows) < POSITIVE_RATE).astype(np.float32)
    columns: Dict[int, Column] = {}
    for spec in schema.features:
        presence = rng.random(rows) < spec.coverage
        if spec.kind == FeatureKind.DENSE:
            values = np.zeros((rows, 1), dtype=np.float64)
            values[presence, 0] = rng.gamma(2.0, 1.0, size=int(presence.sum()))
            columns[spec.id] = Column(spec.kind, presence, values)
            continue
        lengths = np.zeros(rows, dtype=np.int64)
        lengths[presence] = rng.geometric(1.0 / max(spec.mean_length, 1.0), size=int(presence.sum()))
        offsets = np.zeros(rows + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        total = int(offsets[-1])
        ids = rng.integers(0, profile.id_space, size=total, dtype=np.int64)
        scores = None
        if spec.kind == FeatureKind.SCORED:
            scores = rng.random(total).astype(np.float32)
        columns[spec.id] = Column(spec.kind, presence, ids, offsets, scores)
    row_ids = np.arange(row_base, row_base + rows, dtype=np.int64)
    return InMemoryRowGroup(row_ids, labels, columns)


def order_policy(order: str, seed: int, weights: Optional[Dict[int, float]] = None) -> OrderPolicy:
    if order == "schema":
        return OrderPolicy.schema_order()
    if order == "random":
        return OrderPolicy.random(seed)
    if order == "popularity":
        if not weights:
            raise ConfigError("popularity order needs feature weights")
        return OrderPolicy.popularity(weights.items())
    raise ConfigError(f"unknown order {order!r} (expected one of {', '.join(ORDERS)})")


def write_group(group: InMemoryRowGroup, schema: TableSchema, path, cfg: WriterConfig) -> list:
    """Write one table file; returns its stripe row counts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as sink:
        writer = TableWriter(sink, schema, cfg)
        writer.write_group(group)
        footer = writer.close()
    return [s.row_count for s in footer.stripes]


def gen_dataset(profile: DatasetProfile, out_dir, *, seed: int = 0, order: str = "random",
                stripe_rows: int = 4096, weights: Optional[Dict[int, float]] = None) -> TableCatalog:
    """
    Write profile.partitions partitions of profile.rows_per_partition rows
    each under out_dir, plus manifest.json. Row ids are global and dense.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = weights or zipf_weights(profile, seed)
    schema = profile.schema(weights=weights)
    cfg = WriterConfig(stripe_rows=stripe_rows, order=order_policy(order, seed, weights))
    catalog = TableCatalog(schema, root=out_dir, extra={
        "profile": profile.to_dict(),
        "seed": seed,
        "order": order,
        "popularity": sorted(([f, w] for f, w in weights.items()), key=lambda p: (-p[1], p[0])),
    })
    files = profile.files_per_partition
    stream = 0
    for part in range(profile.partitions):
        name = f"p{part}"
        per_file = [profile.rows_per_partition // files + (1 if i < profile.rows_per_partition % files else 0)
                    for i in range(files)]
        for index, rows in enumerate(per_file):
            rel = f"{name}/part-{index:05d}.dsi"
            group = generate_group(profile, rows, seed, row_base=catalog.row_count,
                                   stream=stream, schema=schema)
            stream += 1
            stripes = write_group(group, schema, out_dir / rel, cfg)
            catalog.add(rel, name, stripes)
            logger.info("wrote %s: %d rows, %d stripes", rel, rows, len(stripes))
    catalog.save(out_dir)
    return catalog


def catalog_weights(catalog: TableCatalog) -> Dict[int, float]:
    """Popularity weights recorded by gen_dataset (empty for foreign tables)."""
    return {int(f): float(w) for f, w in catalog.extra.get("popularity", [])}


def catalog_profile(catalog: TableCatalog) -> DatasetProfile:
    raw = catalog.extra.get("profile")
    if raw is None:
        raise ConfigError("table manifest carries no generator profile")
    return DatasetProfile.from_dict(raw)


def sample_session(catalog: TableCatalog, *, seed: int = 0, batch_size: int = 512,
                   split_size: int = 4096, graph: Optional[TransformGraph] = None,
                   projection: Optional[FeatureProjection] = None,
                   partitions: Optional[Sequence[str]] = None) -> SessionSpec:
    """A job over a generated table; the projection is drawn from its popularity law unless given."""
    if projection is None:
        rng = np.random.default_rng([seed, 3])
        projection = sample_projection(catalog_profile(catalog), catalog_weights(catalog), rng)
    return SessionSpec(
        table=catalog.schema.name,
        partitions=tuple(partitions or catalog.partitions),
        projection=projection,
        graph=graph or identity_graph(),
        batch_size=batch_size,
        split_size=split_size,
    )


def rm1_graph(projection: FeatureProjection, kinds: Mapping[int, FeatureKind],
              first_out: int = 1_000_000) -> TransformGraph:
    """
    A production-shaped job graph over a projection.

    Dense inputs are clamped and bucketized. Id lists are hashed and trimmed,
    bigrammed, and each neighbouring pair is crossed and intersected. Feature
    generation carries most of the work, then sparse normalization, then
    dense normalization.
    """
    nodes = []
    out = iter(range(first_out, first_out + 16 * max(1, len(projection))))
    hashed, trimmed = [], []
    for fid in projection:
        if kinds[fid] == FeatureKind.DENSE:
            nodes.append(node_from(next(out), "clamp", [fid], lo=0.0, hi=20.0))
            nodes.append(node_from(next(out), "bucketize", [fid], borders=(0.5, 1.0, 2.0, 4.0)))
            continue
        h, t = next(out), next(out)
        nodes.append(node_from(h, "sigrid_hash", [fid], max=1 << 20))
        nodes.append(node_from(t, "first_x", [h], x=8))
        nodes.append(node_from(next(out), "ngram", [h], n=2))
        hashed.append(h)
        trimmed.append(t)
    for a, b in zip(trimmed, trimmed[1:]):
        nodes.append(node_from(next(out), "cartesian", [a, b]))
    for a, b in zip(hashed, hashed[1:]):
        nodes.append(node_from(next(out), "id_list_intersect", [a, b]))
    return TransformGraph(nodes)
