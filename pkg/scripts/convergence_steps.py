#!/usr/bin/env python
"""Steps to reach the fixed point from random starts, by lambda and dimension."""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from drdyn import io
from drdyn.dynamics import StopTolerances, iterate_many
from drdyn.geometry import ProblemConfig


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--starts", type=int, default=200)
    p.add_argument("--dims", type=lambda s: [int(v) for v in s.split(",")], default=[2, 3, 10])
    p.add_argument("--lambdas", type=lambda s: [float(v) for v in s.split(",")], default=list(np.round(np.linspace(0, 0.95, 20), 2)))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for d in args.dims:
        for lam in args.lambdas:
            x = rng.uniform(-5, 5, (args.starts, d))
            x[:, 0] = rng.uniform(0.05, 5, args.starts)
            res = iterate_many(x, ProblemConfig(d, lam), n=100_000, stop=StopTolerances(1e-12, 1e-10))
            s = res.steps[res.converged]
            rows.append([d, lam, int(res.converged.sum()), np.median(s), s.max()])
            print(f"d={d} lambda={lam:.2f}: median {np.median(s):.0f} steps, max {s.max()}")
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_csv(args.out / "convergence_steps.csv", ["d", "lam", "converged", "median_steps", "max_steps"], rows)


if __name__ == "__main__":
    main()
