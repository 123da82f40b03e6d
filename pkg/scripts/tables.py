"""Desk-scale lambda and epsilon sweeps on the three heart tasks.

Writes one metrics CSV per (task, method) into ``--out``. The full grid is
slow (ten trainings per task); shrink it with ``--epochs`` or ``--lambdas``.

    python3 scripts/tables.py --out results/tables --epochs 400
"""

import argparse
import os
from dataclasses import replace
from pathlib import Path

from gmmd.evaluation import epsilon_grid, lambda_grid, metrics_csv, sweep
from gmmd.io import atomic_write_text
from gmmd.shapes import TASKS
from gmmd.train import GmmdConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/tables"))
    ap.add_argument("--tasks", nargs="+", default=list(TASKS), choices=TASKS)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=800)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lambdas", type=float, nargs="*", default=lambda_grid())
    ap.add_argument("--epsilons", type=float, nargs="*", default=epsilon_grid())
    ap.add_argument("--threads", type=int, default=int(os.environ.get("GMMD_THREADS", "1")))
    args = ap.parse_args()

    cfg = replace(GmmdConfig(), epochs=args.epochs, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for task in args.tasks:
        for method, grid in (("gmmd", args.lambdas), ("gw", args.epsilons)):
            if not grid:
                continue
            rows = sweep(task, grid, cfg, method=method, n=args.n, threads=args.threads, record_time=True)
            path = args.out / f"{task}_{method}.csv"
            atomic_write_text(path, metrics_csv(rows))
            print(f"{path}: {len(rows)} rows")
            for r in rows:
                print(f"  {r.param:<8g} mmd {r.mmd_x:.4f}/{r.mmd_y:.4f}  delta {r.delta:.5f}  "
                      f"cycle {r.cycle_x:.4f}/{r.cycle_y:.4f}  {r.seconds:.1f}s")


if __name__ == "__main__":
    main()
