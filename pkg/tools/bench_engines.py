"""Time the compiled and pure-Python kernels on the same injection campaign.

    python3 tools/bench_engines.py [--bench fft] [--scope roi] [--limit 4000]

Both engines replay the same pilot sites; the script checks that their
outcomes agree bit for bit and reports replays per second.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from flipforge import kernel
from flipforge.benchmarks import build_suite
from flipforge.interp import ROI, PruneConfig, enumerate_sites, run_campaign, run_golden


def subset(sites, limit: int):
    """First ``limit`` pilots together with their followers."""
    pil = sites.pilot_positions()
    if limit >= len(pil):
        return sites
    keep = np.isin(sites.pilot, sites.pilot[pil[:limit]])
    return sites.subset(keep, sites.scope)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bench", default="fft")
    ap.add_argument("--scope", default=ROI, help="roi or an instance id such as stage1#1")
    ap.add_argument("--limit", type=int, default=4000, help="pilot replays per engine")
    ap.add_argument("--repeat", type=int, default=1)
    args = ap.parse_args(argv)

    b = build_suite(names=[args.bench])[args.bench]
    tr = run_golden(b.program, b.layout)
    sites = subset(enumerate_sites(tr, args.scope, PruneConfig(True)), args.limit)
    runs = len(sites.pilot_positions())
    if not kernel.COMPILED:
        print("compiled engine unavailable; timing the Python engine only")
    results = {}
    for name in (["compiled"] if kernel.COMPILED else []) + ["python"]:
        eng = kernel.get_engine(name)
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            oc = run_campaign(tr, sites, args.scope, b.detector, 1, eng)
            best = min(best, time.perf_counter() - t0)
        results[name] = oc
        print(f"{name:9s} {runs:7d} replays  {best:8.3f} s  {runs / best:10.0f} replays/s")
    if len(results) == 2:
        a, c = results["compiled"], results["python"]
        same = np.array_equal(a.tags, c.tags) and np.array_equal(a.r, c.r)
        print(f"outcomes identical: {same}")


if __name__ == "__main__":
    main()
