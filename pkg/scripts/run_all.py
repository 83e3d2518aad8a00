#!/usr/bin/env python3
"""Run every config in configs/ and print a one-line summary of each table.

usage: scripts/run_all.py [--out DIR] [--threads N] [--only SUBSTRING]
"""

import argparse
import glob
import os
import time

from rwre.config import load_config
from rwre.harness import run_experiment, summarize

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", default="")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for path in sorted(glob.glob(os.path.join(ROOT, "configs", "*.cfg"))):
        name = os.path.basename(path)[:-4]
        if args.only not in name:
            continue
        out = os.path.join(args.out, name + ".csv")
        t0 = time.perf_counter()
        run_experiment(load_config(path), threads=args.threads, out=out)
        secs = time.perf_counter() - t0
        summary = {}
        for k, v in summarize(out).items():
            if isinstance(v, dict):
                summary.update({f"{k}[{kk}]": vv for kk, vv in v.items()
                                if not isinstance(vv, list)})
            elif not isinstance(v, list):
                summary[k] = v
        print(f"{name:24s} {secs:7.1f}s  {summary}")


if __name__ == "__main__":
    main()
