"""
The optimization ladder: worker and storage throughput as optimizations are
switched on one after another.

    Baseline  one read per stripe, every feature decoded into row-major samples
    +FF       flattened streams, only the projection decoded (still row-major)
    +FM       projection decoded straight into the columnar row group
    +LO       build-level toggles; none exist here, so it repeats +FM
    +CR       coalesced reads within the window, merged only when cheaper than a seek
    +FR       streams laid out by popularity over a recent access log
    +LS       stripes `large_stripe_factor` times taller

Worker throughput is measured (batches/s through extract + transform + pack).
Storage throughput is simulated from the read plans under StorageModel:
rows of projected data per simulated second, averaged over sampled jobs.
Both rows are normalized to Baseline. Stripes default to 512 rows so that a
stripe of the scaled rm1 preset fits inside the coalescing window.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from lib.core.model import FeatureKind, FeatureProjection, TableSchema
from lib.storage.catalog import TableCatalog
from lib.storage.flatmap import InMemoryRowGroup
from lib.storage.planner import (
    DEFAULT_WINDOW,
    StorageModel,
    io_size_summary,
    plan_coalesced,
    plan_per_stream,
    plan_whole_stripes,
    simulate_throughput,
)
from lib.storage.popularity import bytes_share_for_traffic, popular_bytes_curve, reorder_weights
from lib.storage.reader import ColumnarFile, read_rows_rowmajor
from lib.storage.writer import OrderPolicy, WriterConfig
from lib.transforms.executor import ExecutionStats, GraphExecutor, describe_class_shares
from lib.transforms.graph import TransformGraph, node_from
from lib.bench.generator import generate_group, rm1_graph, write_group
from lib.bench.profiles import DatasetProfile, sample_projection, zipf_weights

logger = logging.getLogger(__name__)

CONFIGS = ("Baseline", "+FF", "+FM", "+LO", "+CR", "+FR", "+LS")
REFERENCE_WORKER = (1.00, 2.00, 2.30, 2.94, 2.94, 2.94, 2.94)
REFERENCE_STORAGE = (1.00, 0.03, 0.03, 0.03, 0.99, 1.84, 2.41)
REFERENCE_STORAGE_OVERHEAD = 0.12


@dataclass(frozen=True)
class LadderConfig:
    stripe_rows: int = 512
    large_stripe_factor: int = 8
    window_bytes: int = DEFAULT_WINDOW
    projections: int = 20
    access_log: int = 200
    measure_rows: int = 2048
    measure_projections: int = 3
    batch_size: int = 256
    repeats: int = 3
    seed: int = 0
    model: StorageModel = field(default_factory=StorageModel)

    def __post_init__(self):
        if self.stripe_rows <= 0 or self.large_stripe_factor < 1:
            raise ValueError("stripe rows and large-stripe factor must be positive")
        if self.projections < 1 or self.repeats < 1 or self.measure_projections < 1:
            raise ValueError("need at least one projection and one repeat")


@dataclass
class LadderReport:
    worker: List[float]
    storage: List[float]
    rows: int = 0
    features: int = 0
    projection_size: float = 0.0
    storage_overhead: float = 0.0
    bytes_for_80pct_traffic: float = 0.0
    io_sizes: Dict[str, float] = field(default_factory=dict)
    class_shares: Dict[str, float] = field(default_factory=dict)
    configs: Tuple[str, ...] = CONFIGS

    @staticmethod
    def _normalize(values: Sequence[float]) -> List[float]:
        base = values[0]
        return [v / base if base > 0 else 0.0 for v in values]

    @property
    def worker_normalized(self) -> List[float]:
        return self._normalize(self.worker)

    @property
    def storage_normalized(self) -> List[float]:
        return self._normalize(self.storage)

    def value(self, row: str, config: str) -> float:
        values = self.worker_normalized if row == "worker" else self.storage_normalized
        return values[self.configs.index(config)]

    def problems(self) -> List[str]:
        """Directionality checks that must hold at any scale."""
        w = dict(zip(self.configs, self.worker_normalized))
        s = dict(zip(self.configs, self.storage_normalized))
        out = []
        if not w["+FF"] > w["Baseline"]:
            out.append(f"worker +FF {w['+FF']:.2f} not above Baseline")
        if not w["+FM"] >= w["+FF"]:
            out.append(f"worker +FM {w['+FM']:.2f} below +FF {w['+FF']:.2f}")
        if not s["+FF"] <= 0.10:
            out.append(f"storage +FF {s['+FF']:.3f} above 0.10 of Baseline")
        if not s["+CR"] >= 0.8:
            out.append(f"storage +CR {s['+CR']:.3f} below 0.80 of Baseline")
        if not s["+CR"] >= s["+FF"]:
            out.append(f"storage +CR {s['+CR']:.3f} below +FF {s['+FF']:.3f}")
        if not s["+FR"] > s["+CR"]:
            out.append(f"storage +FR {s['+FR']:.3f} not above +CR {s['+CR']:.3f}")
        if not s["+LS"] > s["+FR"]:
            out.append(f"storage +LS {s['+LS']:.3f} not above +FR {s['+FR']:.3f}")
        return out

    def notes(self) -> List[str]:
        """Comparisons against the reference figures that are reported, not required."""
        s = dict(zip(self.configs, self.storage_normalized))
        out = [f"+CR storage {s['+CR']:.2f} of Baseline (reference 0.99)",
               "+LO repeats +FM: no build-level toggles in this implementation"]
        out.append(f"flattened file metadata overhead {self.storage_overhead * 100:.1f}% "
                   f"(reference ~{REFERENCE_STORAGE_OVERHEAD * 100:.0f}% storage growth)")
        out.append(f"{self.bytes_for_80pct_traffic * 100:.0f}% of stored bytes serve 80% of traffic "
                   f"(reference ~40%)")
        if self.class_shares:
            out.append("transform time " + describe_class_shares(self.class_shares))
        return out


def ladder_graph(projection: FeatureProjection, kinds: Mapping[int, FeatureKind],
                 first_out: int = 1_000_000) -> TransformGraph:
    """A light per-job graph: hash every sparse input, clamp every dense one."""
    nodes = []
    out = first_out
    for fid in projection:
        if kinds[fid] == FeatureKind.DENSE:
            nodes.append(node_from(out, "clamp", [fid], lo=0.0, hi=20.0))
        else:
            nodes.append(node_from(out, "sigrid_hash", [fid], max=1 << 20))
        out += 1
    return TransformGraph(nodes)


def extract_group(mode: str, f: ColumnarFile, stripes: Sequence[int],
                  projection: FeatureProjection, kinds: Mapping[int, FeatureKind]) -> InMemoryRowGroup:
    """Extraction the way each ladder rung does it."""
    proj = list(projection)
    wanted = {fid: kinds[fid] for fid in proj}
    if mode == "baseline":
        plan = plan_whole_stripes(f.footer, f.stripe_footers, stripes)
        samples = read_rows_rowmajor(f, stripes, plan)
        return InMemoryRowGroup.from_samples((s.project(proj) for s in samples), wanted)
    plan = f.plan(proj, stripes, window=None)
    group = f.read_row_group(stripes, proj, plan)
    if mode == "flattened":
        return InMemoryRowGroup.from_samples(group.to_samples(), wanted)
    if mode == "flatmap":
        return group
    raise ValueError(f"unknown extraction mode {mode!r}")


def measure_worker(f: ColumnarFile, projections: Sequence[FeatureProjection], mode: str,
                   measure_rows: int, batch_size: int, repeats: int) -> float:
    """Best-of-`repeats` batches/s over the first `measure_rows` rows."""
    kinds = f.footer.schema.kinds()
    stripes = list(f.stripes_for_rows(0, min(measure_rows, f.row_count)))
    best = float("inf")
    batches = 0
    for _ in range(repeats):
        started = time.perf_counter()
        batches = 0
        for projection in projections:
            group = extract_group(mode, f, stripes, projection, kinds)
            executor = GraphExecutor(ladder_graph(projection, kinds))
            batches += sum(1 for _ in executor.batches(group, batch_size))
        best = min(best, time.perf_counter() - started)
    return batches / best if best > 0 else 0.0


def measure_class_shares(f: ColumnarFile, projections: Sequence[FeatureProjection],
                         measure_rows: int, batch_size: int) -> Dict[str, float]:
    """Time share per operator class of the production-shaped graph over flatmap groups."""
    kinds = f.footer.schema.kinds()
    stripes = list(f.stripes_for_rows(0, min(measure_rows, f.row_count)))
    stats = ExecutionStats()
    for projection in projections:
        group = extract_group("flatmap", f, stripes, projection, kinds)
        executor = GraphExecutor(rm1_graph(projection, kinds))
        for _ in executor.batches(group, batch_size, stats=stats):
            pass
    return stats.class_shares()


def storage_seconds(f: ColumnarFile, projections: Sequence[FeatureProjection], planner: str,
                    window: int, model: StorageModel) -> float:
    """Simulated seconds to read every projection over the whole file."""
    stripes = range(f.stripe_count)
    total = 0.0
    for projection in projections:
        if planner == "whole":
            plan = plan_whole_stripes(f.footer, f.stripe_footers, stripes)
        elif planner == "per_stream":
            plan = plan_per_stream(f.footer, f.stripe_footers, stripes, projection,
                                   include_labels=True)
        else:
            plan = plan_coalesced(f.footer, f.stripe_footers, stripes, projection, window,
                                  include_labels=True, model=model)
        total += simulate_throughput(plan, model)[0]
    return total


def load_group(catalog: TableCatalog, partition: Optional[str] = None) -> InMemoryRowGroup:
    """Read one partition back in full (all features) as a single row group."""
    partition = partition or catalog.partitions[0]
    groups = []
    for entry in catalog.files_for(partition):
        with ColumnarFile(catalog.resolve(entry)) as f:
            ids = f.footer.schema.ids()
            stripes = range(f.stripe_count)
            groups.append(f.read_row_group(stripes, ids, f.plan(ids, stripes),
                                           row_base=entry.row_base))
    return InMemoryRowGroup.concat(groups)


def run_ladder(profile: DatasetProfile, workdir, cfg: Optional[LadderConfig] = None, *,
               group: Optional[InMemoryRowGroup] = None,
               weights: Optional[Dict[int, float]] = None,
               schema: Optional[TableSchema] = None) -> LadderReport:
    """
    Lay the same rows out three ways (random order, popularity order, tall
    stripes), then measure each rung on the matching file with identical
    sampled projections.
    """
    cfg = cfg or LadderConfig()
    workdir = Path(workdir)
    weights = weights or zipf_weights(profile, cfg.seed)
    schema = schema or profile.schema(weights=weights)
    if group is None:
        group = generate_group(profile, profile.rows_per_partition, cfg.seed, schema=schema)

    log_rng = np.random.default_rng([cfg.seed, 1])
    eval_rng = np.random.default_rng([cfg.seed, 2])
    access_log = [(i, sample_projection(profile, weights, log_rng)) for i in range(cfg.access_log)]
    layout = reorder_weights(access_log, cfg.access_log, universe=schema.ids())
    projections = [sample_projection(profile, weights, eval_rng) for _ in range(cfg.projections)]

    small = WriterConfig(stripe_rows=cfg.stripe_rows, order=OrderPolicy.random(cfg.seed))
    popular = WriterConfig(stripe_rows=cfg.stripe_rows, order=OrderPolicy.popularity(layout))
    large = WriterConfig(stripe_rows=cfg.stripe_rows * cfg.large_stripe_factor,
                         order=OrderPolicy.popularity(layout))
    paths = {
        "random": workdir / "ladder-random.dsi",
        "popular": workdir / "ladder-popular.dsi",
        "large": workdir / "ladder-large.dsi",
    }
    for name, writer_cfg in (("random", small), ("popular", popular), ("large", large)):
        write_group(group, schema, paths[name], writer_cfg)

    rows = group.row_count
    with ColumnarFile(paths["random"]) as rnd, ColumnarFile(paths["popular"]) as pop, \
            ColumnarFile(paths["large"]) as big:
        window, model = cfg.window_bytes, cfg.model
        seconds = {
            "Baseline": storage_seconds(rnd, projections, "whole", window, model),
            "+FF": storage_seconds(rnd, projections, "per_stream", window, model),
            "+CR": storage_seconds(rnd, projections, "coalesced", window, model),
            "+FR": storage_seconds(pop, projections, "coalesced", window, model),
            "+LS": storage_seconds(big, projections, "coalesced", window, model),
        }
        seconds["+FM"] = seconds["+LO"] = seconds["+FF"]
        storage = [rows * len(projections) / seconds[c] for c in CONFIGS]

        measured = projections[:cfg.measure_projections]
        worker_base = measure_worker(rnd, measured, "baseline", cfg.measure_rows, cfg.batch_size, cfg.repeats)
        worker_ff = measure_worker(rnd, measured, "flattened", cfg.measure_rows, cfg.batch_size, cfg.repeats)
        worker_fm = measure_worker(rnd, measured, "flatmap", cfg.measure_rows, cfg.batch_size, cfg.repeats)
        # Storage-side rungs leave worker work unchanged.
        worker = [worker_base, worker_ff, worker_fm] + [worker_fm] * 4
        class_shares = measure_class_shares(rnd, measured, cfg.measure_rows, cfg.batch_size)

        layout_stats = rnd.layout_stats()
        cr_plan = plan_coalesced(rnd.footer, rnd.stripe_footers, range(rnd.stripe_count),
                                 projections[0], window, include_labels=True, model=model)
    x, y = popular_bytes_curve(layout_stats.per_feature, dict(layout))
    report = LadderReport(
        worker=worker,
        storage=storage,
        rows=rows,
        features=len(schema.features),
        projection_size=float(np.mean([len(p) for p in projections])),
        storage_overhead=layout_stats.overhead,
        bytes_for_80pct_traffic=bytes_share_for_traffic(x, y, 0.8),
        io_sizes=io_size_summary(cr_plan),
        class_shares=class_shares,
    )
    logger.info("ladder worker %s", " ".join(f"{v:.2f}" for v in report.worker_normalized))
    logger.info("ladder storage %s", " ".join(f"{v:.3f}" for v in report.storage_normalized))
    return report
