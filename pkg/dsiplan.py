#!/usr/bin/env python3
"""
Inspect read plans for a projection over a generated table.

Every file in the table is planned. Each read is printed as a TSV row of
offset, length and over-read bytes, followed by the file's simulated time
and the throughput over all files.

    python dsiplan.py --dataset data/rm1 --sample 5 --window-bytes 1310720
    python dsiplan.py --dataset data/rm1 --projection 3,17,120 --planner per_stream
    python dsiplan.py --dataset data/rm1 --seek-ms 4 --bw-mbps 250 --chunk-bytes 4194304
"""

import argparse
import sys
from typing import List, Optional

import numpy as np

from lib.core.errors import DsiError
from lib.core.log import configure_logging
from lib.core.model import FeatureProjection
from lib.bench.generator import catalog_profile, catalog_weights
from lib.bench.profiles import sample_projection
from lib.storage.catalog import TableCatalog
from lib.storage.planner import (
    DEFAULT_WINDOW,
    REFERENCE_IO_SIZES,
    ReadPlan,
    StorageModel,
    io_size_summary,
    plan_coalesced,
    plan_per_stream,
    plan_rows,
    plan_whole_stripes,
    simulate_throughput,
)
from lib.storage.reader import ColumnarFile

PLANNERS = ("coalesced", "per_stream", "whole")
TSV_HEADER = "offset\tlength\tover_read"


def _plan(f: ColumnarFile, projection, planner: str, window: int, model: StorageModel,
          labels: bool) -> ReadPlan:
    stripes = range(f.stripe_count)
    if planner == "whole":
        return plan_whole_stripes(f.footer, f.stripe_footers, stripes)
    if planner == "per_stream":
        return plan_per_stream(f.footer, f.stripe_footers, stripes, projection, include_labels=labels)
    return plan_coalesced(f.footer, f.stripe_footers, stripes, projection, window,
                          include_labels=labels, model=model)


def _fmt_bytes(n: float) -> str:
    if abs(n) < 1024:
        return f"{n:.0f}B"
    for unit in ("K", "M"):
        n /= 1024
        if abs(n) < 1024:
            return f"{n:.2f}{unit}"
    return f"{n / 1024:.2f}G"


def _projections(args, catalog: TableCatalog) -> List[FeatureProjection]:
    if args.projection:
        return [FeatureProjection(tuple(int(v) for v in args.projection.split(",") if v.strip()))]
    rng = np.random.default_rng(args.seed)
    profile = catalog_profile(catalog)
    weights = catalog_weights(catalog)
    return [sample_projection(profile, weights, rng) for _ in range(args.sample)]


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="Show I/O plans for feature projections.")
    ap.add_argument("--dataset", required=True, help="Directory holding manifest.json")
    ap.add_argument("--projection", default=None, help="Comma-separated feature ids")
    ap.add_argument("--sample", type=int, default=1,
                    help="Draw this many projections from the table's popularity law")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--planner", choices=PLANNERS, default="coalesced")
    ap.add_argument("--window-bytes", type=int, default=DEFAULT_WINDOW)
    ap.add_argument("--seek-ms", type=float, default=8.0)
    ap.add_argument("--bw-mbps", type=float, default=180.0, help="Sequential bandwidth in MB/s")
    ap.add_argument("--chunk-bytes", type=int, default=StorageModel.max_io_bytes,
                    help="Largest single I/O; longer reads are split")
    ap.add_argument("--with-labels", action="store_true", help="Plan the label stream too")
    ap.add_argument("--summary-only", action="store_true", help="Skip the per-read TSV rows")
    ap.add_argument("--log", default=None)
    args = ap.parse_args(argv)
    configure_logging(args.log)

    try:
        catalog = TableCatalog.load(args.dataset)
        projections = _projections(args, catalog)
        model = StorageModel(seek_s=args.seek_ms / 1000.0, bandwidth_bps=args.bw_mbps * 1e6,
                             max_io_bytes=args.chunk_bytes)
    except (DsiError, OSError, ValueError) as exc:
        print(f"[X] {exc}")
        return 1

    print("=" * 70)
    print(f"READ PLANS: {args.planner}  window={_fmt_bytes(args.window_bytes)}  "
          f"files={len(catalog.files)}  seek={args.seek_ms:g}ms  bw={args.bw_mbps:g}MB/s  "
          f"chunk={_fmt_bytes(args.chunk_bytes)}")
    print("=" * 70)
    try:
        for i, projection in enumerate(projections):
            print(f"\nProjection {i}: {len(projection)} features")
            seconds = 0.0
            requested = 0
            for entry in catalog.files:
                with ColumnarFile(catalog.resolve(entry)) as f:
                    plan = _plan(f, projection, args.planner, args.window_bytes, model, args.with_labels)
                file_seconds, _ = simulate_throughput(plan, model)
                seconds += file_seconds
                requested += plan.requested_bytes
                print(f"# {entry.path}: {plan.io_count} reads, "
                      f"requested {_fmt_bytes(plan.requested_bytes)}, "
                      f"over-read {_fmt_bytes(plan.over_read)}, "
                      f"simulated {file_seconds * 1000:.1f} ms")
                if not args.summary_only:
                    print(TSV_HEADER)
                    for offset, length, over in plan_rows(plan):
                        print(f"{offset}\t{length}\t{over}")
                summary = io_size_summary(plan)
                print("# I/O sizes " + "  ".join(
                    f"{k}={_fmt_bytes(v)} (ref {_fmt_bytes(REFERENCE_IO_SIZES[k])})"
                    for k, v in summary.items()))
            print(f"  simulated    {seconds * 1000:.1f} ms  "
                  f"({requested / seconds / 1e6:.1f} MB/s requested)")
    except (DsiError, OSError, ValueError) as exc:
        print(f"[X] {exc}")
        return 1
    print("\n[OK] done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
