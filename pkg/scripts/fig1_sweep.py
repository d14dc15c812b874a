"""Runtime versus block count on the Wiener velocity model (fixed span, n=10).

Writes a CSV with one column per method.  seq-tf is unstable under explicit
Euler for dt >= 0.0025 (T <= 200 on [0, 5]); those cells are NaN.

    python3 scripts/fig1_sweep.py --max-exp 12 --out results/fig1
"""

import argparse
from pathlib import Path

from ctmap.bench import ExperimentConfig, sweep, sweep_csv
from ctmap.estimators import METHODS


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--min-exp", type=int, default=6)
    p.add_argument("--max-exp", type=int, default=14)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", default="results/fig1")
    args = p.parse_args()
    methods = args.methods.split(",")
    Ts = [2 ** e for e in range(args.min_exp, args.max_exp + 1)]
    cfg = ExperimentConfig(model="wiener", n=args.n, repeats=args.repeats, threads=args.threads)
    rows = []
    for T in Ts:
        rows += sweep(cfg, [T], methods)
        print("T=%d " % T + " ".join(f"{m}={rows[-1][1][m]:.4f}s" for m in methods), flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows, methods))
    print(f"wrote {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
