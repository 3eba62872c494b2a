"""CSV/JSON writers with round-trip float formatting and config hashing."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import PerturbedEnsemble, Trajectory
from .lyapunov import RateEstimate


def fmt(v) -> str:
    """17 significant digits; NaN/None become an empty field, strings pass through."""
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return "%.17g" % v


def jsonable(obj):
    """Convert numpy types and non-finite floats (to None) recursively."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def config_hash(config: dict) -> str:
    blob = json.dumps(jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_csv(path, header, rows, chash: str | None = None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        if chash:
            fh.write(f"# config_sha256={chash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_dat(path, header, rows, chash: str | None = None):
    """Whitespace-separated copy for gnuplot; undefined values become NaN."""
    path = Path(path)
    with path.open("w") as fh:
        if chash:
            fh.write(f"# config_sha256={chash}\n")
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(fmt(v) or "NaN" for v in row) + "\n")
    return path


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def trajectory_header(d: int) -> list[str]:
    return ["k", *[f"x_{j + 1}" for j in range(d)], "step_norm", "dist_to_fixed", "F", "V"]


def trajectory_rows(traj: Trajectory):
    for i in range(traj.points.shape[0]):
        yield [
            int(traj.steps[i]),
            *traj.points[i],
            traj.step_norm[i],
            traj.dist_to_fixed[i],
            traj.F[i],
            traj.V[i],
        ]


def ensemble_header(d: int) -> list[str]:
    return ["traj", "start_index", "run", *trajectory_header(d)]


def ensemble_rows(ens: PerturbedEnsemble):
    for i, (si, ri) in enumerate(ens.keys):
        for row in trajectory_rows(ens.trajectory(i)):
            yield [i, si, ri, *row]


def ensemble_summary(ens: PerturbedEnsemble) -> list[dict]:
    return [
        {
            "traj": i,
            "start_index": si,
            "run": ri,
            "final_distance": float(ens.dist_to_fixed[i, -1]),
            "max_V": float(ens.V[i].max()),
            "steps": int(ens.steps[-1]),
        }
        for i, (si, ri) in enumerate(ens.keys)
    ]


RATE_HEADER = ["t", "value", "budget", "eps_floor", "r_extent", "seed"]


def rate_rows(est: RateEstimate):
    for t, v in zip(est.t_grid, est.values):
        yield [t, v, est.sample_budget, est.box.eps_floor, est.box.r_extent, est.seed]
