#!/usr/bin/env python3
"""
Run one DPP worker.

    python dsiworker.py --master 127.0.0.1:7070 --listen 0.0.0.0:0
    python dsiworker.py --config worker.conf --worker-id w7

Settings come from a key=value file (worker_id, buffer_capacity, stages,
io_window_bytes, manifest, master, listen, heartbeat_s); flags override
it. SIGUSR1 prints the current counters as one metrics line.
"""

import argparse
import signal
import sys
import threading

from lib.core.errors import ConfigError, DsiError
from lib.core.log import configure_logging
from lib.dpp.server import MasterStub, WorkerServer
from lib.dpp.worker import Worker, WorkerConfig


def _load_config(args) -> WorkerConfig:
    overrides = {
        "worker_id": args.worker_id,
        "master": args.master,
        "listen": args.listen,
        "manifest": args.manifest,
        "buffer_capacity": args.buffer,
    }
    if args.config:
        return WorkerConfig.from_file(args.config, **overrides)
    return WorkerConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def main() -> int:
    ap = argparse.ArgumentParser(description="DPP worker: extract, transform, serve.")
    ap.add_argument("--config", default=None, help="key=value worker config file")
    ap.add_argument("--master", default=None, help="Master host:port")
    ap.add_argument("--listen", default=None, help="host:port to serve clients on")
    ap.add_argument("--worker-id", default=None)
    ap.add_argument("--manifest", default=None,
                    help="Expected transform graph manifest; refuse sessions that differ")
    ap.add_argument("--buffer", type=int, default=None, help="Tensor buffer capacity in batches")
    ap.add_argument("--log", default=None, help="Log level (overrides DSI_LOG)")
    args = ap.parse_args()
    configure_logging(args.log)

    print("=" * 70)
    print("DPP WORKER")
    print("=" * 70)
    try:
        cfg = _load_config(args)
        if not cfg.master:
            raise ConfigError("no master address (use --master or master= in the config)")
        worker = Worker(MasterStub(cfg.master), cfg)
        server = WorkerServer(worker, cfg.listen)
        worker.address = server.address
        server.start()
        spec = worker.register()
    except (DsiError, OSError, ValueError) as exc:
        print(f"[X] {exc}")
        return 1

    print(f"[OK] {worker.worker_id} serving on {server.address}")
    print(f"  session {spec.digest()[:12]}: {len(spec.projection)} features, "
          f"{len(spec.graph)} transforms")

    if hasattr(signal, "SIGUSR1"):
        signal.signal(signal.SIGUSR1, lambda *_: print(worker.metrics_line(), flush=True))

    worker.start()
    idle = threading.Event()
    try:
        while not worker.finished:
            idle.wait(0.5)
        # Clients poll END from us; give them a moment before closing the socket.
        idle.wait(2.0)
    except KeyboardInterrupt:
        print("\n  interrupted")
    finally:
        worker.stop()
        server.close()

    print(worker.metrics_line())
    print(f"[{'OK' if worker.finished else 'X'}] worker stopped")
    return 0 if worker.finished else 1


if __name__ == "__main__":
    sys.exit(main())
