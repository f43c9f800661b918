#!/usr/bin/env python3
"""
One-command pipeline: check deps, generate a table, run the ladder and an
end-to-end delivery check.

This wraps check_setup.py, dsigen.py and dsibench.py.
"""

import argparse
import subprocess
import sys
from pathlib import Path


def _run(cmd: list[str]) -> int:
    result = subprocess.run(cmd)
    return result.returncode


def _step(title: str) -> None:
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)


def main() -> int:
    ap = argparse.ArgumentParser(
        description="Generate a synthetic table, benchmark it, and verify delivery."
    )
    ap.add_argument("--preset", choices=["rm1", "rm2", "rm3"], default="rm1")
    ap.add_argument("--scale", type=float, default=0.01)
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out", help="Working directory for data and reports")
    ap.add_argument("--auto-install", action="store_true")
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    data = out / args.preset

    _step("STEP 0: CHECKING DEPENDENCIES")
    setup_cmd = [sys.executable, "check_setup.py"]
    if args.auto_install:
        setup_cmd.append("--auto-install")
    rc = _run(setup_cmd)
    if rc != 0:
        return rc

    _step("STEP 1: GENERATING DATASET")
    rc = _run([
        sys.executable, "dsigen.py",
        "--preset", args.preset,
        "--scale", str(args.scale),
        "--rows", str(args.rows),
        "--seed", str(args.seed),
        "--order", "random",
        "--stripe-rows", "1024",
        "--out", str(data),
    ])
    if rc != 0:
        return rc

    _step("STEP 2: OPTIMIZATION LADDER")
    rc = _run([
        sys.executable, "dsibench.py", "ladder",
        "--dataset", str(data),
        "--seed", str(args.seed),
        "--workdir", str(out / "ladder"),
        "--report", str(out / "ladder.md"),
    ])
    if rc != 0:
        print("\nWARNING: ladder directionality checks failed; see the report.\n")

    if args.skip_e2e:
        return rc

    _step("STEP 3: END-TO-END DELIVERY")
    e2e_rc = _run([
        sys.executable, "dsibench.py", "e2e",
        "--dataset", str(data),
        "--kills", "3",
        "--restart-master",
        "--seed", str(args.seed),
    ])
    return rc or e2e_rc


if __name__ == "__main__":
    raise SystemExit(main())
