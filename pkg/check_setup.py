#!/usr/bin/env python3
"""
Setup validation for the preprocessing pipeline.

Checks the interpreter and required packages, then (unless --no-smoke) writes
a tiny table to a temp directory and streams it through an in-process
cluster to confirm every row comes back exactly once.
"""

import argparse
import subprocess
import sys
import tempfile

REQUIRED = [
    ("numpy", "numpy"),
    ("matplotlib", "matplotlib"),
    ("simpy", "simpy"),
]


def check_python_version() -> bool:
    version = sys.version_info
    if version < (3, 9):
        print(f"[X] Python 3.9+ required (you have {version.major}.{version.minor}.{version.micro})")
        return False
    print(f"[OK] Python {version.major}.{version.minor}.{version.micro}")
    return True


def missing_packages(packages):
    missing = []
    for package_name, import_name in packages:
        try:
            __import__(import_name)
            print(f"[OK] {package_name}")
        except ImportError:
            print(f"[X] {package_name} not installed")
            missing.append(package_name)
    return missing


def install_requirements() -> bool:
    print("Installing from requirements.txt...")
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
    except subprocess.CalledProcessError as exc:
        print(f"[X] pip exited with {exc.returncode}")
        return False
    return True


def smoke_test() -> bool:
    """Generate, serve and account for a 2000-row table."""
    from lib.bench.generator import gen_dataset, sample_session
    from lib.bench.profiles import DatasetProfile
    from lib.dpp.local import LocalCluster
    from lib.dpp.worker import WorkerConfig

    profile = DatasetProfile("smoke", dense=8, sparse=4, scored=1, rows_per_partition=2000,
                             projection_dense=3, projection_sparse=2)
    with tempfile.TemporaryDirectory(prefix="dsi-setup-") as tmp:
        catalog = gen_dataset(profile, tmp, seed=1, stripe_rows=500)
        spec = sample_session(catalog, seed=1, batch_size=100, split_size=400)
        cluster = LocalCluster(spec, catalog, workers=2, clients=1,
                               worker_cfg=WorkerConfig(heartbeat_s=0.1, poll_s=0.002))
        try:
            report = cluster.run(timeout=60)
        finally:
            cluster.stop()
    if report.timed_out or not report.exactly_once:
        print(f"[X] Smoke run failed: {report.summary()}")
        return False
    print(f"[OK] Smoke run: {report.summary()}")
    return True


def main() -> int:
    ap = argparse.ArgumentParser(description="Preprocessing pipeline - Setup Validation")
    ap.add_argument("--auto-install", action="store_true",
                    help="pip install requirements.txt when packages are missing")
    ap.add_argument("--no-tests", action="store_true", help="Skip the pytest check")
    ap.add_argument("--no-smoke", action="store_true", help="Skip the end-to-end smoke run")
    args = ap.parse_args()

    print("=" * 70)
    print("Preprocessing pipeline - Setup Validation")
    print("=" * 70)
    print()

    if not check_python_version():
        return 1
    print()

    packages = list(REQUIRED)
    if not args.no_tests:
        packages.append(("pytest", "pytest"))
    print("Checking packages...")
    missing = missing_packages(packages)
    if missing and args.auto_install and install_requirements():
        print()
        missing = missing_packages(packages)
    print()

    if missing:
        print("=" * 70)
        print("[X] Setup incomplete. Install the missing packages with:")
        print()
        print("  pip install -r requirements.txt")
        print("=" * 70)
        return 1

    if not args.no_smoke:
        print("Running smoke test...")
        if not smoke_test():
            return 1
        print()

    print("=" * 70)
    print("[OK] Ready. Next step: generate a table")
    print("  python dsigen.py --preset rm1 --scale 0.01 --rows 20000 --out data/rm1")
    print("=" * 70)
    return 0


if __name__ == "__main__":
    sys.exit(main())
