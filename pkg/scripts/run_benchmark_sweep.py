#!/usr/bin/env python3
"""Reproduce the benchmark input-authority sweep.

Runs the closed loop on the 4-state benchmark system for every u_max in
configs/benchmark.json and writes sweep.csv plus a manifest to the output
directory.  Roughly 10-20 minutes single-threaded; set OFSPC_THREADS to
parallelize across paths without changing any result.
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from ofspc.cli import main  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "benchmark.json"))
    ap.add_argument("--out-dir", default="results/benchmark_sweep")
    ap.add_argument("--paths", type=int, default=None)
    ap.add_argument("--steps", type=int, default=None)
    args = ap.parse_args()
    argv = ["sweep", args.config, "--out-dir", args.out_dir]
    if args.paths is not None:
        argv += ["--paths", str(args.paths)]
    if args.steps is not None:
        argv += ["--steps", str(args.steps)]
    raise SystemExit(main(argv))
