#!/usr/bin/env python3
"""
Run a DPP master for one session.

    python dsimaster.py --dataset data/rm1 --listen 0.0.0.0:7070
    python dsimaster.py --dataset data/rm1 --projection 1,2,40 --graph job.graph \
        --config master.conf --checkpoint-dir ckpt/ --restore

Workers (dsiworker.py) register against --listen. The scaler runs every
period and logs its decision; launching or retiring worker processes is up
to whoever runs the fleet.
"""

import argparse
import logging
import sys
import threading

from lib.core.errors import ConfigError, DsiError
from lib.core.log import configure_logging
from lib.core.model import FeatureProjection
from lib.bench.generator import sample_session
from lib.dpp.master import Checkpoint, Master, MasterConfig, latest_checkpoint
from lib.dpp.scaler import ScalerConfig
from lib.dpp.server import MasterServer
from lib.storage.catalog import TableCatalog
from lib.transforms.graph import TransformGraph, describe

logger = logging.getLogger("dsimaster")


def _scaler_loop(master: Master, stop: threading.Event) -> None:
    while not stop.wait(master.scaler_cfg.period_s):
        delta = master.evaluate_scaling()
        if delta:
            logger.info("scaler: %+d workers (fleet %d)", delta, len(master.fleet()))


def _checkpoint_loop(master: Master, directory: str, every_s: float, stop: threading.Event) -> None:
    while not stop.wait(every_s):
        path = master.checkpoint().save(directory)
        logger.info("checkpoint %s", path)


def build_master(args) -> Master:
    catalog = TableCatalog.load(args.dataset)
    cfg = MasterConfig.from_file(args.config) if args.config else MasterConfig()
    if args.checkpoint_dir:
        cfg.checkpoint_dir = args.checkpoint_dir
    scaler = ScalerConfig.from_mapping({"period_s": args.scale_period}) if args.scale_period else ScalerConfig()
    projection = None
    if args.projection:
        projection = FeatureProjection(tuple(int(v) for v in args.projection.split(",") if v.strip()))
    graph = TransformGraph.load(args.graph) if args.graph else None
    partitions = args.partitions.split(",") if args.partitions else None
    spec = sample_session(catalog, seed=args.seed, batch_size=args.batch_size,
                          split_size=args.split_size, graph=graph, projection=projection,
                          partitions=partitions)
    if args.restore:
        if not cfg.checkpoint_dir:
            raise ConfigError("--restore needs a checkpoint directory")
        path = latest_checkpoint(cfg.checkpoint_dir)
        if path is not None:
            print(f"[OK] restoring from {path}")
            return Master.restore(spec, catalog, Checkpoint.load(path), cfg, scaler)
        print("  no checkpoint found, starting fresh")
    return Master(spec, catalog, cfg, scaler)


def main() -> int:
    ap = argparse.ArgumentParser(description="DPP master: splits, leases, scaling.")
    ap.add_argument("--dataset", required=True, help="Directory holding manifest.json")
    ap.add_argument("--projection", default=None,
                    help="Comma-separated feature ids (default: draw from the popularity law)")
    ap.add_argument("--partitions", default=None, help="Comma-separated partitions (default: all)")
    ap.add_argument("--graph", default=None, help="Transform graph manifest (default: identity)")
    ap.add_argument("--batch-size", type=int, default=512)
    ap.add_argument("--split-size", type=int, default=4096)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--listen", default="127.0.0.1:7070")
    ap.add_argument("--config", default=None, help="key=value master config file")
    ap.add_argument("--scale-period", type=float, default=None, help="Seconds between scaling decisions")
    ap.add_argument("--checkpoint-dir", default=None)
    ap.add_argument("--checkpoint-every", type=float, default=30.0, help="Seconds between checkpoints")
    ap.add_argument("--restore", action="store_true", help="Resume from the latest checkpoint")
    ap.add_argument("--log", default=None, help="Log level (overrides DSI_LOG)")
    args = ap.parse_args()
    configure_logging(args.log)

    print("=" * 70)
    print("DPP MASTER")
    print("=" * 70)
    try:
        master = build_master(args)
        server = MasterServer(master, args.listen)
    except (DsiError, OSError, ValueError) as exc:
        print(f"[X] {exc}")
        return 1

    spec = master.spec
    print(f"  session {spec.digest()[:12]}: {len(spec.projection)} features, "
          f"batch {spec.batch_size}, split {spec.split_size}")
    print(describe(spec.graph))
    print(f"[OK] listening on {server.address}")

    stop = threading.Event()
    threading.Thread(target=_scaler_loop, args=(master, stop), daemon=True).start()
    if master.cfg.checkpoint_dir:
        threading.Thread(target=_checkpoint_loop,
                         args=(master, master.cfg.checkpoint_dir, args.checkpoint_every, stop),
                         daemon=True).start()
    server.start()
    try:
        while not master.done:
            stop.wait(1.0)
        # Let workers and clients see END before the socket goes away.
        stop.wait(max(2.0, master.cfg.heartbeat_interval_s * 2))
    except KeyboardInterrupt:
        print("\n  interrupted")
    finally:
        stop.set()
        if master.cfg.checkpoint_dir:
            master.checkpoint().save(master.cfg.checkpoint_dir)
        server.close()

    progress = master.progress()
    print("  " + "  ".join(f"{k}={v}" for k, v in progress.items()))
    print(f"[{'OK' if master.done else 'X'}] session "
          + ("complete" if master.done else "stopped before completion"))
    return 0 if master.done else 1


if __name__ == "__main__":
    sys.exit(main())
