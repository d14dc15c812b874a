"""Pairwise method gaps and dense-QP errors under step halving (Wiener model).

Measurements are simulated once on T=100, n=10 and resampled by zero-order
hold, so every row sees the same data and only the discretization changes.

    python3 scripts/convergence_study.py --seed 0
"""

import argparse
import csv
import itertools
import sys

import numpy as np

from ctmap import NumericError, build_time_grid, estimate_map, simulate, wiener_velocity_model
from ctmap.estimators import METHODS


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--factors", default="1,2,4,8,16")
    args = p.parse_args()
    model = wiener_velocity_model()
    base = build_time_grid(0.0, 5.0, 100, 10)
    _, meas = simulate(model, base, args.seed)
    pairs = list(itertools.combinations(METHODS, 2))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["dt"] + [f"{a}|{b}" for a, b in pairs])
    for f in (int(x) for x in args.factors.split(",")):
        g = base.refined(f)
        y = meas.on(g)
        runs = {}
        for m in METHODS:
            try:
                runs[m] = estimate_map(model, y, g, m).trajectory.states
            except NumericError:
                runs[m] = None
        gaps = [float(np.max(np.abs(runs[a] - runs[b])))
                if runs[a] is not None and runs[b] is not None else float("nan")
                for a, b in pairs]
        w.writerow([repr(g.dt)] + [f"{x:.4e}" for x in gaps])


if __name__ == "__main__":
    main()
