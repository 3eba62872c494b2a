"""Empirical checks of Lyapunov conditions, KL envelopes and uniform convergence.

Nothing here is a proof.  Every check is a fold over finitely many samples
or trajectories, and every failure is kept as a violation record.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import (
    Mode,
    PerturbationProfile,
    PerturbedEnsemble,
    _tau_unchecked,
    simulate_perturbed,
)
from .errors import InsufficientData, LambdaOutOfRange, NoAdmissibleGain, RegionError
from .geometry import ProblemConfig, _dr_step_unchecked, _norm, as_points, fixed_points
from .lyapunov import RateEstimate, SampleBox, _F_unchecked, estimate_alpha, f_star, sample_box

log = logging.getLogger(__name__)

__all__ = [
    "BoundaryCase",
    "CalibrationResult",
    "KLEnvelope",
    "StabilityReport",
    "UniformConvergence",
    "Violation",
    "boundary_experiments",
    "calibrate_gain",
    "certify",
    "check_lyapunov_conditions",
    "fit_kl_envelope",
    "grid_compact",
    "heldout_exceedance",
    "inflated_v_bound",
    "uniform_convergence_curve",
    "verify_uniform_convergence",
]


@dataclass
class Violation:
    point: list
    step: int
    quantity: str
    value: float


def _V(x, cfg):
    return _F_unchecked(_dr_step_unchecked(x, _norm(x), cfg.lam), cfg.lam) - f_star(cfg)


def _half_space_samples(cfg, budget, box, seed):
    """Box samples stretched to ``x_1 in [eps_floor, r_extent]``."""
    pts = sample_box(cfg, budget, box, seed)
    lo = box.eps_floor
    pts[:, 0] = lo + (pts[:, 0] - lo) / (1.0 - lo) * (box.r_extent - lo)
    return np.vstack([pts, fixed_points(cfg)[0]])


def check_lyapunov_conditions(
    cfg: ProblemConfig,
    sample_budget: int = 20_000,
    box: SampleBox = SampleBox(),
    alpha_estimate: RateEstimate | None = None,
    seed: int = 0,
    slack: float = 1e-12,
    zero_tol: float = 1e-12,
    zero_radius: float = 1e-5,
    max_records: int = 100,
) -> dict:
    """Check the three Lyapunov conditions for V with ``omega_1 = omega_2 = V``.

    The sandwich bound holds with identity comparison functions, so it is
    recorded as a structural pass.  Decrease and the zero set are checked on
    samples from ``x_1 in [eps_floor, r_extent]``, x* included.
    """
    if not 0 <= cfg.lam < 1:
        raise LambdaOutOfRange(f"Lyapunov checks need lambda in [0, 1), got {cfg.lam}")
    if alpha_estimate is None:
        alpha_estimate = estimate_alpha(np.linspace(0.0, 1.0, 101), cfg, 100_000, box, seed)

    xs = fixed_points(cfg)[0]
    pts = _half_space_samples(cfg, sample_budget, box, seed + 1)
    v = _V(pts, cfg)
    tx = _dr_step_unchecked(pts, _norm(pts), cfg.lam)
    v_next = _V(tx, cfg)
    margin = v - alpha_estimate(np.maximum(v, 0.0)) - v_next
    dist = _norm(pts - xs)

    violations = []

    def record(mask, quantity, values):
        for i in np.flatnonzero(mask)[:max_records]:
            violations.append(Violation(pts[i].tolist(), 0, quantity, float(values[i])))
        return int(mask.sum())

    n_decrease = record(margin < -slack, "decrease_margin", margin)
    # V = 0 only at x*, and V > 0 away from it
    n_zero_far = record((v <= zero_tol) & (dist > zero_radius), "V_near_zero_far_from_fixed", v)
    n_pos = record((dist > 1e-6) & ~(v > 0), "V_not_positive", v)
    v_at_fixed = float(_V(xs[None, :], cfg)[0])
    zero_at_fixed = abs(v_at_fixed) <= zero_tol

    return {
        "between": {"passed": True, "note": "omega_1 = omega_2 = V with identity comparison functions"},
        "decrease": {
            "passed": n_decrease == 0,
            "violations": n_decrease,
            "worst_margin": float(margin.min()),
            "slack": slack,
            "samples": int(pts.shape[0]),
            "alpha_is_upper_estimate": True,
        },
        "zero_set": {
            "passed": n_zero_far == 0 and n_pos == 0 and zero_at_fixed,
            "V_at_fixed_point": v_at_fixed,
            "zero_far_violations": n_zero_far,
            "positivity_violations": n_pos,
            "zero_tol": zero_tol,
            "zero_radius": zero_radius,
        },
        "violations": violations,
    }


@dataclass
class KLEnvelope:
    """Data envelope ``beta_hat[i, j]`` at level ``s_grid[i]`` and time ``n_grid[j]``."""

    s_grid: np.ndarray
    n_grid: np.ndarray
    beta_hat: np.ndarray
    raw: np.ndarray
    regularized: bool
    raw_was_kl: bool

    def level_index(self, v0) -> np.ndarray:
        """Index of the smallest level ``>= v0``; ``len(s_grid)`` when above the grid."""
        return np.searchsorted(self.s_grid, np.asarray(v0, dtype=float), side="left")

    def is_kl_shaped(self) -> bool:
        b = self.beta_hat
        return bool(
            np.all(b >= 0)
            and np.all(np.diff(b, axis=0) >= 0)
            and np.all(np.diff(b, axis=1) <= 0)
            and (self.s_grid[0] > 0 or np.all(b[0] == 0))
        )


def _is_kl(b):
    return bool(np.all(np.diff(b, axis=0) >= 0) and np.all(np.diff(b, axis=1) <= 0))


def fit_kl_envelope(
    ensemble: PerturbedEnsemble,
    s_grid=None,
    indices=None,
    levels: int = 16,
) -> KLEnvelope:
    """Envelope ``beta_hat(s, n) = max {V(phi(x, n)) : V(x) <= s}`` over the ensemble.

    Regularization only raises values: clip at zero, suffix max along n, then
    running max along s.  The level ``s = 0`` is 0 unless some trajectory
    starts with ``V(x) <= 0``.
    """
    idx = np.arange(len(ensemble)) if indices is None else np.asarray(indices)
    if idx.size == 0:
        raise InsufficientData("empty ensemble")
    V = ensemble.V[idx]
    if np.any(~np.isfinite(V)):
        raise InsufficientData("V undefined on some trajectory point")
    v0 = V[:, 0]
    if s_grid is None:
        s_grid = np.concatenate([[0.0], np.linspace(max(v0.min(), 0.0), v0.max(), levels)])
        s_grid = np.unique(s_grid)
    s_grid = np.asarray(s_grid, dtype=float)

    raw = np.empty((s_grid.size, V.shape[1]))
    for i, s in enumerate(s_grid):
        sel = v0 <= s
        if not sel.any():
            if s == 0:
                raw[i] = 0.0
                continue
            raise InsufficientData(f"no trajectory starts with V <= {s:g}")
        raw[i] = V[sel].max(axis=0)

    beta = np.maximum(raw, 0.0)
    beta = np.maximum.accumulate(beta[:, ::-1], axis=1)[:, ::-1]
    beta = np.maximum.accumulate(beta, axis=0)
    return KLEnvelope(
        s_grid=s_grid,
        n_grid=ensemble.steps.copy(),
        beta_hat=beta,
        raw=raw,
        regularized=True,
        raw_was_kl=_is_kl(raw) and bool(np.all(raw >= 0)),
    )


def heldout_exceedance(envelope: KLEnvelope, ensemble: PerturbedEnsemble, indices, abs_tol: float = 0.0) -> dict:
    """Fraction of held-out ``(trajectory, n)`` values above the envelope.

    A trajectory starting above the top level counts as exceeding at every
    step.
    """
    idx = np.asarray(indices)
    V = ensemble.V[idx]
    lvl = envelope.level_index(V[:, 0])
    above = lvl >= envelope.s_grid.size
    bound = envelope.beta_hat[np.minimum(lvl, envelope.s_grid.size - 1)]
    exceed = V > bound + abs_tol
    exceed[above] = True
    return {
        "checks": int(exceed.size),
        "exceedances": int(exceed.sum()),
        "rate": float(exceed.mean()) if exceed.size else 0.0,
        "trajectories_above_grid": int(above.sum()),
        "abs_tol": abs_tol,
    }


def grid_compact(ranges, d: int = 2, e1_floor: float = 0.0) -> np.ndarray:
    """Cartesian grid from ``(lo, hi, count)`` per leading coordinate.

    Missing coordinates are zero.  The first coordinate must stay above
    ``max(e1_floor, 0)`` so the set is a compact subset of ``x_1 > 0``.
    """
    if not ranges or len(ranges) > d:
        raise ValueError(f"need between 1 and {d} axis ranges")
    axes = []
    for lo, hi, count in ranges:
        count = int(count)
        if count < 1:
            raise ValueError("each axis needs count >= 1")
        axes.append(np.linspace(lo, hi, count) if count > 1 else np.array([float(lo)]))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.zeros((mesh[0].size, d))
    for j, m in enumerate(mesh):
        pts[:, j] = m.ravel()
    if pts.size == 0:
        raise ValueError("empty compact set")
    floor = pts[:, 0].min()
    if floor <= 0 or floor < e1_floor:
        raise RegionError(f"compact set must satisfy x_1 >= e1_floor > 0; smallest x_1 is {floor:g}")
    return pts


def inflated_v_bound(K, cfg: ProblemConfig, profile: PerturbationProfile, directions: int = 64, seed: int = 0) -> float:
    """Estimate ``M = sup V`` over the union of balls ``B[x, tau(x)]``, x in K.

    Uses each centre, the 2d axis points and ``directions`` random points on
    each ball's boundary.
    """
    K = np.atleast_2d(as_points(K, cfg.d))
    xs = fixed_points(cfg)[0]
    r = _tau_unchecked(K, xs, profile)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, cfg.d))
    dirs = np.vstack([dirs / _norm(dirs)[:, None], np.eye(cfg.d), -np.eye(cfg.d)])
    cand = K[:, None, :] + r[:, None, None] * dirs[None, :, :]
    cand = np.concatenate([K, cand.reshape(-1, cfg.d)])
    return float(_V(cand, cfg).max())


@dataclass
class UniformConvergence:
    steps: np.ndarray
    sup_distance: np.ndarray
    final_sup: float
    target: float
    burn_in: int
    tail_monotone: bool
    finite: bool

    @property
    def passed(self) -> bool:
        return self.finite and self.final_sup <= self.target and self.tail_monotone


def uniform_convergence_curve(ensemble: PerturbedEnsemble, target: float = 1e-2, burn_in: int = 100) -> UniformConvergence:
    """Sup over the ensemble of ``|phi(x, n) - x*|`` for each stored step."""
    curve = ensemble.dist_to_fixed.max(axis=0)
    tail = curve[ensemble.steps >= burn_in]
    return UniformConvergence(
        steps=ensemble.steps,
        sup_distance=curve,
        final_sup=float(curve[-1]),
        target=target,
        burn_in=burn_in,
        tail_monotone=bool(np.all(np.diff(tail) <= 0)),
        finite=bool(np.all(np.isfinite(curve))),
    )


def verify_uniform_convergence(
    K,
    cfg: ProblemConfig,
    profile: PerturbationProfile,
    n: int = 2000,
    runs: int = 20,
    seed: int = 42,
    target: float = 1e-2,
    burn_in: int = 100,
    workers: int = 1,
) -> tuple[UniformConvergence, PerturbedEnsemble]:
    K = np.atleast_2d(as_points(K, cfg.d))
    if K.shape[0] == 0:
        raise ValueError("empty compact set")
    if np.any(K[:, 0] <= 0):
        raise RegionError("compact set must lie in x_1 > 0")
    ens = simulate_perturbed(K, cfg, profile, n=n, runs_per_start=runs, seed=seed, workers=workers)
    return uniform_convergence_curve(ens, target, burn_in), ens


@dataclass
class CalibrationResult:
    c: float
    ensemble: PerturbedEnsemble
    candidates: list = field(default_factory=list)


def calibrate_gain(
    cfg: ProblemConfig,
    K,
    c_candidates=(0.1, 0.05, 0.02, 0.01),
    target_dist: float = 1e-2,
    n: int = 2000,
    runs: int = 20,
    seed: int = 42,
    m: int = 16,
    cap_fraction: float = 0.5,
    workers: int = 1,
) -> CalibrationResult:
    """Largest gain whose adversarial ensemble reaches ``target_dist`` with V bounded.

    A candidate fails if the final sup-distance exceeds ``target_dist`` or any
    perturbed iterate (after step 0) has V above the estimated sup of V over
    the inflated start set.  Raises NoAdmissibleGain when all candidates fail.
    """
    cands = [float(c) for c in c_candidates]
    if not cands or any(c < 0 for c in cands) or any(a < b for a, b in zip(cands, cands[1:])):
        raise ValueError("c_candidates must be a non-empty descending list of gains >= 0")
    K = np.atleast_2d(as_points(K, cfg.d))
    results = []
    for c in cands:
        profile = PerturbationProfile(c=c, cap_fraction=cap_fraction, mode=Mode.ADVERSARIAL_V, m=m)
        ens = simulate_perturbed(K, cfg, profile, n=n, runs_per_start=runs, seed=seed, workers=workers)
        bound = inflated_v_bound(K, cfg, profile, seed=seed)
        over = ens.V[:, 1:] > bound
        final_sup = float(ens.dist_to_fixed[:, -1].max())
        ok = final_sup <= target_dist and not over.any()
        results.append(
            {
                "c": c,
                "final_sup_distance": final_sup,
                "v_bound": bound,
                "max_V_after_start": float(ens.V[:, 1:].max()) if ens.V.shape[1] > 1 else float("nan"),
                "v_bound_violations": int(over.sum()),
                "admissible": ok,
            }
        )
        log.info("gain %g: final sup distance %.3e, admissible=%s", c, final_sup, ok)
        if ok:
            return CalibrationResult(c=c, ensemble=ens, candidates=results)
    raise NoAdmissibleGain("no candidate gain reached the target distance with bounded V", results)


@dataclass
class BoundaryCase:
    """Observed behaviour of one (lambda, start) boundary experiment."""

    lam: float
    start: list
    steps: int
    final: list
    final_step_norm: float
    tail_min_step_norm: float
    max_norm: float
    origin_hit: bool
    stayed_in_h0: bool | None
    converged: bool
    tail_bounded_away: bool
    norm_blowup: bool
    limit_on_axis: bool | None = None

    @property
    def non_convergent(self) -> bool:
        return self.origin_hit or self.tail_bounded_away or self.norm_blowup


def _run_with_history(starts: np.ndarray, cfg: ProblemConfig, n: int):
    """Exact runs keeping per-step norms; rows that reach the origin freeze there."""
    x = starts.copy()
    b = x.shape[0]
    step_norm = np.full((n, b), np.nan)
    max_norm = _norm(x)
    hit = np.zeros(b, dtype=bool)
    h0 = x[:, 0] == 0
    stayed = h0.copy()
    for k in range(n):
        r = _norm(x)
        hit |= r == 0
        live = ~hit
        if not live.any():
            break
        nxt = x.copy()
        nxt[live] = _dr_step_unchecked(x[live], r[live], cfg.lam)
        step_norm[k, live] = _norm(nxt[live] - x[live])
        x = nxt
        max_norm = np.maximum(max_norm, _norm(x))
        stayed &= x[:, 0] == 0
    return x, step_norm, max_norm, hit, np.where(h0, stayed, False)


def boundary_experiments(
    cases,
    n: int = 10_000,
    cauchy_tol: float = 1e-10,
    axis_tol: float = 1e-6,
    tail_floor: float = 1e-6,
    blowup: float = 1e6,
    tail_fraction: float = 0.1,
) -> list[BoundaryCase]:
    """Run exact iterations for ``(cfg, starts)`` pairs and record what happens.

    ``converged`` means the last step norm fell below ``cauchy_tol``.
    Divergence is split into a bounded-away tail (minimum step norm over the
    last ``tail_fraction`` of steps above ``tail_floor``) and norm blow-up.
    For lambda = 1 the limit is tested for the form ``y e2`` with ``y > 1``.
    """
    out = []
    tail_len = max(1, int(np.ceil(tail_fraction * n)))
    for cfg, starts in cases:
        starts = np.atleast_2d(as_points(starts, cfg.d))
        final, steps, max_norm, hit, stayed = _run_with_history(starts, cfg, n)
        for i in range(starts.shape[0]):
            sn = steps[:, i]
            done = sn[~np.isnan(sn)]
            last = float(done[-1]) if done.size else float("nan")
            tail = done[-tail_len:]
            converged = bool(not hit[i] and done.size and last < cauchy_tol)
            limit_ok = None
            if cfg.lam == 1.0 and starts[i, 0] > 0:
                limit_ok = bool(abs(final[i, 0]) < axis_tol and final[i, 1] > 1 + axis_tol)
            out.append(
                BoundaryCase(
                    lam=cfg.lam,
                    start=starts[i].tolist(),
                    steps=int(done.size),
                    final=final[i].tolist(),
                    final_step_norm=last,
                    tail_min_step_norm=float(tail.min()) if tail.size else float("nan"),
                    max_norm=float(max_norm[i]),
                    origin_hit=bool(hit[i]),
                    stayed_in_h0=bool(stayed[i]) if starts[i, 0] == 0 else None,
                    converged=converged,
                    tail_bounded_away=bool(tail.size and tail.min() > tail_floor),
                    norm_blowup=bool(max_norm[i] > blowup),
                    limit_on_axis=limit_ok,
                )
            )
    return out


@dataclass
class StabilityReport:
    config: dict
    profile: dict
    checks: dict
    envelope: KLEnvelope | None
    curves: list
    violations: list
    calibration: dict

    def to_dict(self) -> dict:
        env = None
        if self.envelope is not None:
            env = {
                "s_grid": self.envelope.s_grid.tolist(),
                "n_grid": self.envelope.n_grid.tolist(),
                "beta": self.envelope.beta_hat.tolist(),
                "raw_was_kl": self.envelope.raw_was_kl,
                "kl_shaped": self.envelope.is_kl_shaped(),
            }
        return {
            "config": self.config,
            "profile": self.profile,
            "checks": self.checks,
            "envelope": env,
            "curves": self.curves,
            "violations": [asdict(v) if isinstance(v, Violation) else v for v in self.violations],
            "calibration": self.calibration,
        }


def _curve_dict(name, uc: UniformConvergence) -> dict:
    return {
        "name": name,
        "steps": uc.steps.tolist(),
        "sup_distance": uc.sup_distance.tolist(),
        "final_sup": uc.final_sup,
        "target": uc.target,
        "burn_in": uc.burn_in,
        "tail_monotone": uc.tail_monotone,
        "passed": uc.passed,
    }


def certify(
    cfg: ProblemConfig,
    K,
    profile: PerturbationProfile,
    n: int = 2000,
    runs: int = 20,
    seed: int = 42,
    box: SampleBox = SampleBox(),
    sample_budget: int = 20_000,
    rate_budget: int = 100_000,
    target: float = 1e-2,
    burn_in: int = 100,
    calibrate: bool = False,
    c_candidates=(0.1, 0.05, 0.02, 0.01),
    workers: int = 1,
) -> StabilityReport:
    """Full empirical certification run.

    Checks the Lyapunov conditions, the exact-iteration sup-distance curve on
    K and, for the perturbed profile (optionally calibrated first), the
    sup-distance curve plus a KL envelope fitted on even-indexed trajectories
    and validated on odd ones.
    """
    K = np.atleast_2d(as_points(K, cfg.d))
    alpha = estimate_alpha(np.linspace(0.0, 1.0, 101), cfg, rate_budget, box, seed)
    lyap = check_lyapunov_conditions(cfg, sample_budget, box, alpha, seed)
    violations = lyap.pop("violations")
    checks = {"lyapunov": lyap}

    calibration = {}
    if calibrate:
        try:
            cal = calibrate_gain(
                cfg, K, c_candidates, target, n, runs, seed, profile.m, profile.cap_fraction, workers
            )
        except NoAdmissibleGain as exc:
            calibration = {"admissible_c": None, "candidates": exc.results}
            checks["uniform_convergence"] = {"passed": False, "reason": "no admissible gain"}
            return StabilityReport(asdict(cfg), _profile_dict(profile), checks, None, [], violations, calibration)
        calibration = {"admissible_c": cal.c, "candidates": cal.candidates}
        profile = PerturbationProfile(c=cal.c, cap_fraction=profile.cap_fraction, mode=Mode.ADVERSARIAL_V, m=profile.m)
        ens = cal.ensemble
    else:
        ens = simulate_perturbed(K, cfg, profile, n=n, runs_per_start=runs, seed=seed, workers=workers)

    exact = simulate_perturbed(K, cfg, PerturbationProfile(c=0.0), n=n, runs_per_start=1, seed=seed)
    exact_uc = uniform_convergence_curve(exact, target, burn_in)
    pert_uc = uniform_convergence_curve(ens, target, burn_in)
    curves = [_curve_dict("exact", exact_uc), _curve_dict("perturbed", pert_uc)]

    fit_idx = np.arange(0, len(ens), 2)
    held_idx = np.arange(1, len(ens), 2)
    envelope = fit_kl_envelope(ens, indices=fit_idx)
    held = heldout_exceedance(envelope, ens, held_idx) if held_idx.size else None

    checks["uniform_convergence"] = {"exact": exact_uc.passed, "perturbed": pert_uc.passed}
    checks["envelope"] = {
        "kl_shaped": envelope.is_kl_shaped(),
        "raw_was_kl": envelope.raw_was_kl,
        "heldout": held,
    }
    checks["perturbation_invariants"] = {
        "max_ball_excess": ens.max_ball_excess,
        "region_violations": len(ens.region_violations),
    }
    return StabilityReport(asdict(cfg), _profile_dict(profile), checks, envelope, curves, violations, calibration)


def _profile_dict(profile: PerturbationProfile) -> dict:
    d = asdict(profile)
    d["mode"] = profile.mode.value
    return d
