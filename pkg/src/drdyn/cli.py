"""Command-line front end: ``drdyn iterate | lyapunov-scan | perturbed | certify | boundary``.

Exit codes: 0 success/converged, 2 ran but the claim was not observed
(e.g. no convergence within budget), 1 unexpected error, 64 usage error,
65 domain error (a violated precondition).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io
from .dynamics import Mode, PerturbationProfile, StopTolerances, iterate, simulate_perturbed
from .errors import DomainViolation
from .geometry import ProblemConfig, dr_step
from .lyapunov import SampleBox, estimate_rates, eval_F, f_star
from .stability import boundary_experiments, certify, grid_compact

log = logging.getLogger("drdyn")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2, 64, 65


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every knob a run can use; serialized verbatim into its manifest."""

    command: str = ""
    lam: float = 0.5
    d: int = 2
    n: int = 10_000
    seed: int = 42
    start: list | None = None
    starts: list | None = None
    grid: str | None = None
    e1_floor: float = 0.0
    c: float = 0.02
    cap_fraction: float = 0.5
    mode: str = "random"
    m: int = 16
    runs: int = 1
    eps_floor: float = 1e-3
    r_extent: float = 10.0
    budget: int = 100_000
    sample_budget: int = 20_000
    t_grid: str = "0:1:101"
    step_tol: float = 1e-12
    dist_tol: float = 1e-10
    early_stop: bool = True
    stride: int = 1
    target: float = 1e-2
    burn_in: int = 100
    calibrate: bool = False
    c_candidates: list = field(default_factory=lambda: [0.1, 0.05, 0.02, 0.01])
    boundary_starts: int = 20

    def hashed(self) -> dict:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse coordinates {text!r}") from exc


def _point_list(text: str) -> list[list[float]]:
    return [_floats(p) for p in text.split(";") if p.strip()]


def _axis_ranges(text: str):
    out = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 3:
            raise UsageError(f"grid axis must be lo:hi:count, got {part!r}")
        try:
            out.append((float(bits[0]), float(bits[1]), int(bits[2])))
        except ValueError as exc:
            raise UsageError(f"bad grid axis {part!r}") from exc
    return out


def _linspace(text: str) -> np.ndarray:
    (lo, hi, count), = _axis_ranges(text)
    if count < 1:
        raise UsageError("t grid needs at least one point")
    return np.linspace(lo, hi, count)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--lambda", dest="lam", type=float, help="line offset (default 0.5)")
    common.add_argument("--d", type=int, help="dimension (default 2, or inferred from --start)")
    common.add_argument("--n", type=int, help="number of steps")
    common.add_argument("--seed", type=int, help="RNG seed (default 42, or $DRDYN_SEED)")
    common.add_argument("--config", type=Path, help="JSON RunConfig; its values override flags")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap for ensembles")
    common.add_argument("--gnuplot", action="store_true", help="also write .dat files")
    common.add_argument("-v", "--verbose", action="store_true")

    perturb = _Parser(add_help=False)
    perturb.add_argument("--c", type=float, help="perturbation gain (default 0.02)")
    perturb.add_argument("--cap-fraction", type=float)
    perturb.add_argument("--mode", choices=[m.value for m in Mode])
    perturb.add_argument("--m", type=int, help="candidates per step in adversarial mode")
    perturb.add_argument("--runs", type=int, help="runs per start")

    grid = _Parser(add_help=False)
    grid.add_argument("--grid", help="axis ranges lo:hi:count,lo:hi:count,...")
    grid.add_argument("--e1-floor", type=float)

    p = _Parser(prog="drdyn", description="Douglas-Rachford iteration for a sphere and a line")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    it = sub.add_parser("iterate", parents=[common], help="run one exact trajectory")
    it.add_argument("--start", type=_floats, help="comma-separated coordinates")
    it.add_argument("--step-tol", type=float)
    it.add_argument("--dist-tol", type=float)
    it.add_argument("--no-early-stop", dest="early_stop", action="store_false", default=None)
    it.add_argument("--stride", type=int)

    sc = sub.add_parser("lyapunov-scan", parents=[common, grid], help="F/U/V/W on a grid and rate estimates")
    sc.add_argument("--budget", type=int)
    sc.add_argument("--t-grid", help="lo:hi:count")
    sc.add_argument("--eps-floor", type=float)
    sc.add_argument("--r-extent", type=float)

    pe = sub.add_parser("perturbed", parents=[common, perturb, grid], help="perturbed ensemble")
    pe.add_argument("--starts", type=_point_list, help="points separated by ';'")
    pe.add_argument("--stride", type=int)

    ce = sub.add_parser("certify", parents=[common, perturb, grid], help="stability report")
    ce.add_argument("--calibrate", action="store_true", default=None)
    ce.add_argument("--c-candidates", type=_floats)
    ce.add_argument("--target", type=float)
    ce.add_argument("--burn-in", type=int)
    ce.add_argument("--budget", type=int)
    ce.add_argument("--sample-budget", type=int)
    ce.add_argument("--eps-floor", type=float)
    ce.add_argument("--r-extent", type=float)

    bo = sub.add_parser("boundary", parents=[common], help="lambda=1, lambda>1 and H0 experiments")
    bo.add_argument("--boundary-starts", type=int, help="random starts per case")
    return p


_COMMAND_DEFAULTS = {
    "perturbed": {"n": 2000},
    "certify": {"n": 2000, "mode": "adversarial", "runs": 20, "grid": "0.5:1.5:10,-1:1:5"},
    "lyapunov-scan": {"grid": "0.05:1:20,-2:2:21"},
}


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    """defaults < $DRDYN_SEED (seed only, without --seed) < flags < --config file."""
    environ = os.environ if environ is None else environ
    cfg = RunConfig(command=args.command)
    for k, v in _COMMAND_DEFAULTS.get(args.command, {}).items():
        setattr(cfg, k, v)
    if getattr(args, "seed", None) is None and environ.get("DRDYN_SEED"):
        try:
            cfg.seed = int(environ["DRDYN_SEED"])
        except ValueError as exc:
            raise UsageError("DRDYN_SEED must be an integer") from exc
    names = {f.name for f in fields(RunConfig)}
    for k, v in vars(args).items():
        if k in names and k != "command" and v is not None:
            setattr(cfg, k, v)
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(data) - names
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for k, v in data.items():
            if k != "command":
                setattr(cfg, k, v)
    if cfg.start is not None and args.d is None and (args.config is None or "d" not in data):
        cfg.d = len(cfg.start)
    if cfg.starts and args.d is None and (args.config is None or "d" not in data):
        cfg.d = len(cfg.starts[0])
    return cfg


class _Outputs:
    def __init__(self, out: Path, rc: RunConfig, gnuplot: bool):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.rc = rc
        self.hash = io.config_hash(rc.hashed())
        self.gnuplot = gnuplot
        self.files = []

    def csv(self, name, header, rows):
        rows = list(rows)
        self.files.append(io.write_csv(self.out / f"{name}.csv", header, rows, self.hash).name)
        if self.gnuplot:
            self.files.append(io.write_dat(self.out / f"{name}.dat", header, rows, self.hash).name)

    def json(self, name, obj):
        obj = dict(obj, config_sha256=self.hash)
        self.files.append(io.write_json(self.out / f"{name}.json", obj).name)

    def manifest(self, **extra):
        io.write_json(
            self.out / "manifest.json",
            dict(extra, config=self.rc.hashed(), config_sha256=self.hash, files=sorted(self.files)),
        )


def cmd_iterate(rc: RunConfig, out: _Outputs) -> int:
    if rc.start is None:
        raise UsageError("iterate needs --start")
    cfg = ProblemConfig(rc.d, rc.lam)
    stop = StopTolerances(rc.step_tol, rc.dist_tol) if rc.early_stop else None
    traj = iterate(np.array(rc.start, dtype=float), cfg, rc.n, stop, rc.stride)
    out.csv("trajectory", io.trajectory_header(cfg.d), io.trajectory_rows(traj))
    converged = traj.converged_step is not None
    out.manifest(
        converged=converged,
        converged_step=traj.converged_step,
        steps=traj.n_steps,
        final=traj.final.tolist(),
        final_dist_to_fixed=traj.dist_to_fixed[-1],
    )
    if converged:
        print(f"converged at step {traj.converged_step}")
        return EXIT_OK
    print(f"not converged after {traj.n_steps} steps")
    return EXIT_NOT_CONVERGED


def _grid_points(rc: RunConfig) -> np.ndarray:
    return grid_compact(_axis_ranges(rc.grid), rc.d, rc.e1_floor)


def cmd_lyapunov_scan(rc: RunConfig, out: _Outputs) -> int:
    cfg = ProblemConfig(rc.d, rc.lam)
    box = SampleBox(rc.eps_floor, rc.r_extent)
    pts = _grid_points(rc)
    if np.any(pts[:, 0] > 1):
        raise DomainViolation("scan grid must lie in the slab 0 < x_1 <= 1")
    F = eval_F(pts, cfg)
    tx = dr_step(pts, cfg)
    FT = eval_F(tx, cfg)
    fs = f_star(cfg)
    U, V, W = F - fs, FT - fs, F - FT
    header = [*[f"x_{j + 1}" for j in range(cfg.d)], "F", "U", "V", "W"]
    out.csv("scan", header, ([*p, a, b, c, e] for p, a, b, c, e in zip(pts, F, U, V, W)))

    g, alpha = estimate_rates(_linspace(rc.t_grid), cfg, rc.budget, box, rc.seed)
    out.csv("g", io.RATE_HEADER, io.rate_rows(g))
    out.csv("alpha", io.RATE_HEADER, io.rate_rows(alpha))
    i = int(np.argmin(U))
    out.manifest(
        min_U=U[i],
        argmin_U=pts[i].tolist(),
        min_W=W.min(),
        g_is_upper_estimate=True,
        alpha_is_upper_estimate=True,
    )
    print(f"min U = {U[i]:.3e} at {pts[i].tolist()}; min W = {W.min():.3e}; g(0) = {g.values[0]:g}")
    return EXIT_OK


def _profile(rc: RunConfig) -> PerturbationProfile:
    try:
        return PerturbationProfile(c=rc.c, cap_fraction=rc.cap_fraction, mode=Mode(rc.mode), m=rc.m)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_perturbed(rc: RunConfig, out: _Outputs, threads: int = 1) -> int:
    cfg = ProblemConfig(rc.d, rc.lam)
    if rc.starts:
        starts = np.array(rc.starts, dtype=float)
    elif rc.grid:
        starts = _grid_points(rc)
    else:
        raise UsageError("perturbed needs --starts or --grid")
    ens = simulate_perturbed(starts, cfg, _profile(rc), rc.n, rc.runs, rc.seed, rc.stride, threads)
    out.csv("ensemble", io.ensemble_header(cfg.d), io.ensemble_rows(ens))
    out.manifest(
        profile={**asdict(ens.profile), "mode": ens.profile.mode.value},
        seeds={"seed": rc.seed, "streams": [list(k) for k in ens.keys]},
        mode=ens.mode.value,
        trajectories=io.ensemble_summary(ens),
        max_ball_excess=ens.max_ball_excess,
        region_violations=len(ens.region_violations),
    )
    print(f"{len(ens)} trajectories; sup final distance {ens.dist_to_fixed[:, -1].max():.3e}")
    return EXIT_OK


def _report_passed(checks: dict) -> bool:
    lyap = checks.get("lyapunov", {})
    ok = all(lyap.get(k, {}).get("passed", False) for k in ("between", "decrease", "zero_set"))
    uc = checks.get("uniform_convergence", {})
    ok &= bool(uc.get("exact", False)) and bool(uc.get("perturbed", False))
    env = checks.get("envelope", {})
    held = env.get("heldout") or {}
    ok &= bool(env.get("kl_shaped", False)) and held.get("rate", 1.0) < 0.01
    return bool(ok)


def cmd_certify(rc: RunConfig, out: _Outputs, threads: int = 1) -> int:
    cfg = ProblemConfig(rc.d, rc.lam)
    if not rc.grid:
        raise UsageError("certify needs a compact set (--grid)")
    try:
        K = _grid_points(rc)
    except ValueError as exc:
        if isinstance(exc, DomainViolation):
            raise
        raise UsageError(str(exc)) from exc
    report = certify(
        cfg,
        K,
        _profile(rc),
        n=rc.n,
        runs=rc.runs,
        seed=rc.seed,
        box=SampleBox(rc.eps_floor, rc.r_extent),
        sample_budget=rc.sample_budget,
        rate_budget=rc.budget,
        target=rc.target,
        burn_in=rc.burn_in,
        calibrate=rc.calibrate,
        c_candidates=rc.c_candidates,
        workers=threads,
    )
    data = report.to_dict()
    passed = _report_passed(report.checks)
    data["passed"] = passed
    out.json("report", data)
    if report.envelope is not None:
        env = report.envelope
        out.csv(
            "envelope",
            ["s", "n", "beta"],
            ([s, int(n), env.beta_hat[i, j]] for i, s in enumerate(env.s_grid) for j, n in enumerate(env.n_grid)),
        )
    out.csv("curves", ["name", "n", "sup_distance"], _curve_rows(data["curves"]))
    out.manifest(passed=passed)
    cal = report.calibration.get("admissible_c") if report.calibration else None
    print(f"certify: {'PASS' if passed else 'FAIL'}" + (f" (calibrated c = {cal:g})" if cal is not None else ""))
    return EXIT_OK if passed else EXIT_NOT_CONVERGED


def _curve_rows(curves):
    for c in curves:
        for n, v in zip(c["steps"], c["sup_distance"]):
            yield [c["name"], int(n), v]


def _boundary_cases(rc: RunConfig):
    rng = np.random.default_rng(rc.seed)
    k, d = rc.boundary_starts, rc.d

    def hplus(count):
        pts = rng.uniform(-3.0, 3.0, (count, d))
        pts[:, 0] = rng.uniform(0.05, 3.0, count)
        return pts

    h0 = rng.uniform(-3.0, 3.0, (k, d))
    h0[:, 0] = 0.0
    return [
        ("lambda_one", ProblemConfig(d, 1.0), hplus(k)),
        ("lambda_above_one", ProblemConfig(d, 1.5), hplus(k)),
        ("h0", ProblemConfig(d, rc.lam), h0),
    ]


def cmd_boundary(rc: RunConfig, out: _Outputs) -> int:
    cases = _boundary_cases(rc)
    results = boundary_experiments([(cfg, s) for _, cfg, s in cases], n=rc.n)
    rows, summary, i = [], {}, 0
    for name, cfg, starts in cases:
        chunk = results[i : i + len(starts)]
        i += len(starts)
        for r in chunk:
            rows.append({"case": name, **asdict(r), "non_convergent": r.non_convergent})
        if name == "lambda_one":
            summary[name] = {"all_converge_on_axis": all(r.converged and r.limit_on_axis for r in chunk)}
        else:
            summary[name] = {
                "none_converged": not any(r.converged for r in chunk),
                "all_non_convergent": all(r.non_convergent for r in chunk),
            }
            if name == "h0":
                summary[name]["all_stayed_in_h0"] = all(r.stayed_in_h0 for r in chunk)
                summary[name]["origin_hits"] = sum(r.origin_hit for r in chunk)
    out.json("boundary", {"cases": rows, "summary": summary})
    header = ["case", "lam", "steps", "final_step_norm", "tail_min_step_norm", "max_norm", "origin_hit", "converged"]
    out.csv(
        "boundary",
        header,
        ([r["case"], r["lam"], r["steps"], r["final_step_norm"], r["tail_min_step_norm"], r["max_norm"],
          int(r["origin_hit"]), int(r["converged"])] for r in rows),
    )
    out.manifest(summary=summary)
    print(json.dumps(io.jsonable(summary), sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        rc = resolve_config(args)
        out = _Outputs(args.out, rc, args.gnuplot)
        if args.command == "iterate":
            return cmd_iterate(rc, out)
        if args.command == "lyapunov-scan":
            return cmd_lyapunov_scan(rc, out)
        if args.command == "perturbed":
            return cmd_perturbed(rc, out, args.threads)
        if args.command == "certify":
            return cmd_certify(rc, out, args.threads)
        return cmd_boundary(rc, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainViolation as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
