#!/usr/bin/env python3
"""
Benchmark harness.

    python dsibench.py ladder --preset rm1 --scale 0.01 --rows 8192 --report out/ladder.tsv
    python dsibench.py ladder --dataset data/rm1 --workers 4 --trainer-rate 200 --report out/ladder.md
    python dsibench.py e2e --dataset data/rm1 --workers 4 --clients 2 --kills 10 --restart-master
    python dsibench.py autoscale --demand 32 --capacity 10
"""

import argparse
import sys
import tempfile
from pathlib import Path

from lib.core.errors import DsiError
from lib.core.log import configure_logging
from lib.bench.generator import catalog_profile, catalog_weights, rm1_graph, sample_session
from lib.bench.ladder import LadderConfig, load_group, run_ladder
from lib.bench.profiles import PRESETS, preset
from lib.bench.report import emit_report, render_ladder_chart
from lib.dpp.local import LocalCluster
from lib.dpp.scaler import ScalerConfig, target_workers
from lib.dpp.sim import simulate_autoscaler
from lib.storage.catalog import TableCatalog
from lib.storage.planner import DEFAULT_WINDOW
from lib.transforms.executor import ExecutionStats, describe_class_shares


def _banner(title: str) -> None:
    print("=" * 70)
    print(title)
    print("=" * 70)


def cmd_ladder(args) -> int:
    _banner("OPTIMIZATION LADDER")
    cfg = LadderConfig(stripe_rows=args.stripe_rows, window_bytes=args.window_bytes,
                       projections=args.projections, measure_rows=args.measure_rows,
                       repeats=args.repeats, seed=args.seed)
    report_path = Path(args.report)
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="dsi-ladder-"))
    if args.dataset:
        catalog = TableCatalog.load(args.dataset)
        profile = catalog_profile(catalog)
        print(f"  dataset: {args.dataset} ({catalog.row_count} rows, "
              f"{len(catalog.schema.features)} features)")
        report = run_ladder(profile, workdir, cfg, group=load_group(catalog),
                            weights=catalog_weights(catalog), schema=catalog.schema)
    else:
        profile = preset(args.preset, args.scale, args.rows)
        print(f"  preset: {profile.name} x{args.scale:g} ({profile.rows_per_partition} rows, "
              f"{profile.feature_count} features)")
        report = run_ladder(profile, workdir, cfg)

    fmt = args.format or ("md" if report_path.suffix == ".md" else "tsv")
    emit_report(report, report_path, fmt)
    chart = Path(args.chart) if args.chart else report_path.with_suffix(".png")
    render_ladder_chart(report, chart)

    print()
    print("  " + "".join(f"{c:>10}" for c in report.configs))
    print("  " + "".join(f"{v:>10.2f}" for v in report.worker_normalized) + "   worker")
    print("  " + "".join(f"{v:>10.3f}" for v in report.storage_normalized) + "   storage")
    for note in report.notes():
        print(f"  ! {note}")

    per_worker = report.worker[-1]
    supply = args.workers * per_worker
    print(f"\n  fleet of {args.workers} workers: {supply:.1f} batches/s "
          f"against demand {args.trainer_rate:.1f} batches/s")
    print(f"  expected stall fraction {max(0.0, 1.0 - min(1.0, supply / args.trainer_rate)):.2f}; "
          f"workers needed {target_workers(args.trainer_rate, per_worker)}")

    problems = report.problems()
    for problem in problems:
        print(f"[X] {problem}")
    print(f"\n[OK] report: {report_path}  chart: {chart}")
    return 1 if problems else 0


def cmd_e2e(args) -> int:
    _banner("END-TO-END DELIVERY")
    catalog = TableCatalog.load(args.dataset)
    spec = sample_session(catalog, seed=args.seed, batch_size=args.batch_size,
                          split_size=args.split_size)
    if args.graph == "rm1":
        spec = sample_session(catalog, seed=args.seed, batch_size=args.batch_size,
                              split_size=args.split_size, projection=spec.projection,
                              graph=rm1_graph(spec.projection, catalog.schema.kinds()))
    cluster = LocalCluster(spec, catalog, workers=args.workers, clients=args.clients,
                           fanout=args.fanout).start()
    try:
        report = cluster.run(kills=args.kills, restart_master=args.restart_master,
                             seed=args.seed, timeout=args.timeout)
        stats = ExecutionStats()
        for worker in cluster.workers.values():
            stats.merge(worker.exec_stats)
    finally:
        cluster.stop()
    print(f"  {report.summary()}")
    print(f"  max client connections {report.max_connections} (fanout {args.fanout})")
    if stats.class_seconds:
        print(f"  transform time {describe_class_shares(stats.class_shares())}")
    ok = report.exactly_once if not (args.kills or args.restart_master) else report.at_least_once
    ok = ok and report.duplicates <= report.duplicate_bound and not report.timed_out
    print(f"[{'OK' if ok else 'X'}] "
          + ("exactly-once" if not (args.kills or args.restart_master) else "at-least-once")
          + " delivery")
    return 0 if ok else 1


def cmd_autoscale(args) -> int:
    _banner("AUTOSCALER (discrete-event)")
    trace = simulate_autoscaler(args.demand, args.capacity, periods=args.periods,
                                cfg=ScalerConfig(period_s=args.period))
    print(f"  target {trace.target} workers (demand {args.demand}, capacity {args.capacity})")
    for i, (n, buffered, delta) in enumerate(zip(trace.workers, trace.buffered, trace.deltas)):
        print(f"  period {i:>3}: workers={n:<4} buffered={buffered:<5} delta={delta:+d}")
    converged = trace.converged_by(20)
    print(f"  stall fraction {trace.stall_fraction:.3f}")
    print(f"[{'OK' if converged else 'X'}] converged within 20 periods")
    return 0 if converged else 1


def main() -> int:
    ap = argparse.ArgumentParser(description="DSI benchmark harness.")
    ap.add_argument("--log", default=None, help="Log level (overrides DSI_LOG)")
    sub = ap.add_subparsers(dest="command", required=True)

    lad = sub.add_parser("ladder", help="Worker/storage throughput per optimization")
    lad.add_argument("--dataset", default=None, help="Generated table directory")
    lad.add_argument("--preset", choices=sorted(PRESETS), default="rm1")
    lad.add_argument("--scale", type=float, default=0.01)
    lad.add_argument("--rows", type=int, default=8192)
    lad.add_argument("--workers", type=int, default=1)
    lad.add_argument("--trainer-rate", type=float, default=100.0, help="Demand in batches/s")
    lad.add_argument("--window-bytes", type=int, default=DEFAULT_WINDOW)
    lad.add_argument("--stripe-rows", type=int, default=512)
    lad.add_argument("--projections", type=int, default=20)
    lad.add_argument("--measure-rows", type=int, default=2048)
    lad.add_argument("--repeats", type=int, default=3)
    lad.add_argument("--seed", type=int, default=0)
    lad.add_argument("--workdir", default=None, help="Where the ladder's table variants go")
    lad.add_argument("--report", default="ladder.tsv")
    lad.add_argument("--format", choices=["tsv", "md"], default=None)
    lad.add_argument("--chart", default=None, help="PNG path (default: next to the report)")
    lad.set_defaults(func=cmd_ladder)

    e2e = sub.add_parser("e2e", help="In-process master/workers/clients delivery check")
    e2e.add_argument("--dataset", required=True)
    e2e.add_argument("--workers", type=int, default=4)
    e2e.add_argument("--clients", type=int, default=2)
    e2e.add_argument("--fanout", type=int, default=4)
    e2e.add_argument("--graph", choices=["rm1", "identity"], default="rm1",
                     help="Job graph: production-shaped or pass-through")
    e2e.add_argument("--kills", type=int, default=0)
    e2e.add_argument("--restart-master", action="store_true")
    e2e.add_argument("--batch-size", type=int, default=256)
    e2e.add_argument("--split-size", type=int, default=1024)
    e2e.add_argument("--seed", type=int, default=0)
    e2e.add_argument("--timeout", type=float, default=300.0)
    e2e.set_defaults(func=cmd_e2e)

    auto = sub.add_parser("autoscale", help="Autoscaler convergence in simulated time")
    auto.add_argument("--demand", type=float, required=True, help="Trainer batches/s")
    auto.add_argument("--capacity", type=float, default=10.0, help="Batches/s per worker")
    auto.add_argument("--periods", type=int, default=30)
    auto.add_argument("--period", type=float, default=10.0, help="Seconds per evaluation")
    auto.set_defaults(func=cmd_autoscale)

    args = ap.parse_args()
    configure_logging(args.log)
    try:
        return args.func(args)
    except (DsiError, OSError, ValueError) as exc:
        print(f"[X] {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
