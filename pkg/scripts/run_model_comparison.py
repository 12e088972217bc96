#!/usr/bin/env python3
"""Fitted-object quality of the index model against the global baseline.

Runs the chosen scenario several times, fits both the single-index model
and global Fréchet regression, and compares their mean squared deviations
from the true link objects at the binned evaluation points.

Example:
    python scripts/run_model_comparison.py --scenario dist1 --link square \
        --n 500 --runs 20 --workers 2
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ifr.index_fit import DirectionParam
from ifr.simulation import SimSpec, run_mc_study

SCENARIOS = {"dist1": "dist_setting_1", "dist2": "dist_setting_2",
             "adjacency": "adjacency", "euclidean": "euclidean"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", choices=sorted(SCENARIOS), default="dist1")
    ap.add_argument("--link", default="square",
                    choices=["identity", "square", "exponential", "expit"])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--directions", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()

    theta0 = DirectionParam(np.full(args.p, 1.0 / np.sqrt(args.p)))
    spec = SimSpec(scenario=SCENARIOS[args.scenario], n=args.n, theta0=theta0,
                   link=args.link)
    t0 = time.time()
    report = run_mc_study(spec, args.runs, seed=args.seed,
                          n_directions=args.directions, compare_gfr=True,
                          n_workers=args.workers)
    ifr_msd = report.msd_values
    gfr_msd = report.gfr_msd_values
    beats = np.mean(ifr_msd < gfr_msd)
    print(f"scenario={spec.scenario} link={args.link} n={args.n} runs={args.runs}")
    print(f"index-fit MSD:  mean {np.mean(ifr_msd):.6g}  median {np.median(ifr_msd):.6g}")
    print(f"baseline  MSD:  mean {np.nanmean(gfr_msd):.6g}  median {np.nanmedian(gfr_msd):.6g}")
    print(f"index fit beats the baseline in {100 * beats:.1f}% of runs")
    print(f"wall time: {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
