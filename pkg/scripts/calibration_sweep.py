#!/usr/bin/env python
"""Calibrate the perturbation gain for several lambdas and tabulate the outcome.

Writes ``calibration.csv`` with one row per (lambda, candidate gain).
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from drdyn import io
from drdyn.errors import NoAdmissibleGain
from drdyn.geometry import ProblemConfig
from drdyn.stability import calibrate_gain, grid_compact


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lambdas", type=lambda s: [float(v) for v in s.split(",")], default=[0.0, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--candidates", type=lambda s: [float(v) for v in s.split(",")], default=[0.1, 0.05, 0.02, 0.01])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    K = grid_compact([(0.5, 1.5, 10), (-1.0, 1.0, 5)])
    rows = []
    for lam in args.lambdas:
        cfg = ProblemConfig(2, lam)
        try:
            cal = calibrate_gain(cfg, K, args.candidates, n=args.n, runs=args.runs, seed=args.seed, workers=args.threads)
            cands, chosen = cal.candidates, cal.c
        except NoAdmissibleGain as exc:
            cands, chosen = exc.results, None
        for r in cands:
            rows.append([lam, r["c"], r["final_sup_distance"], r["max_V_after_start"], r["v_bound"], int(r["admissible"])])
        print(f"lambda={lam:g}: admissible c = {chosen}")

    args.out.mkdir(parents=True, exist_ok=True)
    header = ["lam", "c", "final_sup_distance", "max_V_after_start", "v_bound", "admissible"]
    io.write_csv(args.out / "calibration.csv", header, rows)


if __name__ == "__main__":
    main()
