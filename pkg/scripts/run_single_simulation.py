#!/usr/bin/env python3
"""Run the closed loop at one input bound and dump per-path trajectories.

Writes path_<k>.csv files (state, applied input, estimate, filter-covariance
trace per step) plus a manifest to the output directory.
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
    ap.add_argument("--u-max", type=float, default=1.0)
    ap.add_argument("--paths", type=int, default=5)
    ap.add_argument("--steps", type=int, default=90)
    ap.add_argument("--out-dir", default="results/single_run")
    args = ap.parse_args()
    raise SystemExit(main([
        "simulate", args.config, "--u-max", str(args.u_max),
        "--paths", str(args.paths), "--steps", str(args.steps),
        "--out-dir", args.out_dir]))
