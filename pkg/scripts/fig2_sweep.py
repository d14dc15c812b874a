"""Runtime of the iterated (5-iteration) estimator on the coordinated turn model.

    python3 scripts/fig2_sweep.py --max-exp 11 --out results/fig2
"""

import argparse
from pathlib import Path

from ctmap.bench import ExperimentConfig, sweep, sweep_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--min-exp", type=int, default=6)
    p.add_argument("--max-exp", type=int, default=12)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--methods", default="seq-rts,par-rts")
    p.add_argument("--out", default="results/fig2")
    args = p.parse_args()
    methods = args.methods.split(",")
    cfg = ExperimentConfig(model="coordinated-turn", n=args.n, repeats=args.repeats,
                           iters=args.iters)
    rows = []
    for e in range(args.min_exp, args.max_exp + 1):
        rows += sweep(cfg, [2 ** e], methods)
        print(f"T={2 ** e} " + " ".join(f"{m}={rows[-1][1][m]:.4f}s" for m in methods), flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows, methods))
    print(f"wrote {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
