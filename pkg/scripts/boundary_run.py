#!/usr/bin/env python
"""Exact runs at the edges: lambda = 1, lambda > 1 and starts on the hyperplane x_1 = 0."""
from __future__ import annotations

import argparse
from dataclasses import asdict
from pathlib import Path

import numpy as np

from drdyn import io
from drdyn.geometry import ProblemConfig
from drdyn.stability import boundary_experiments


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--above", type=lambda s: [float(v) for v in s.split(",")], default=[1.01, 1.1, 1.5, 3.0])
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    hplus = np.column_stack([rng.uniform(0.05, 3, args.starts), rng.uniform(-3, 3, args.starts)])
    h0 = np.column_stack([np.zeros(args.starts), rng.uniform(-3, 3, args.starts)])
    h0[0] = [0.0, 2.0]  # lands exactly on the origin for each lambda below
    cases = [(ProblemConfig(2, 1.0), hplus)]
    cases += [(ProblemConfig(2, lam), hplus) for lam in args.above]
    cases += [(ProblemConfig(2, lam), h0) for lam in (0.0, 0.5, 0.9)]

    results = boundary_experiments(cases, n=args.n)
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_json(args.out / "boundary_run.json", [dict(asdict(r), non_convergent=r.non_convergent) for r in results])
    for lam in sorted({r.lam for r in results}):
        sub = [r for r in results if r.lam == lam]
        print(
            f"lambda={lam:g}: {sum(r.converged for r in sub)}/{len(sub)} converged, "
            f"{sum(r.origin_hit for r in sub)} origin hits, "
            f"max norm {max(r.max_norm for r in sub):.3g}"
        )


if __name__ == "__main__":
    main()
