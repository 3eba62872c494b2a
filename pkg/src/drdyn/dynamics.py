"""Exact and perturbed Douglas-Rachford trajectories.

The perturbed iteration draws each step from the two-ball set

    T_tau(x) = union over y in B[x, tau(x)] of B[T y, tau(T y)],

with ``tau(x) = min(c |x - x*|, cap_fraction * x_1)``.  The cap keeps both
balls inside the half-space ``x_1 > 0``, so perturbed paths never leave it.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import LambdaOutOfRange, OriginNotProjectable, RegionError
from .geometry import ProblemConfig, _dr_step_unchecked, _norm, as_points, fixed_points
from .lyapunov import _F_unchecked, f_star

__all__ = [
    "Mode",
    "PerturbationProfile",
    "PerturbedEnsemble",
    "StopTolerances",
    "Trajectory",
    "iterate",
    "iterate_many",
    "perturbed_step",
    "simulate_perturbed",
    "tau",
]

BALL_TOL = 1e-12


class Mode(str, enum.Enum):
    RANDOM_BALL = "random"
    ADVERSARIAL_V = "adversarial"


@dataclass(frozen=True)
class StopTolerances:
    """Early stop once ``|T x_k - x_k| < step_tol`` and ``|x_k - x*| < dist_tol``."""

    step_tol: float = 1e-12
    dist_tol: float = 1e-10


@dataclass(frozen=True)
class PerturbationProfile:
    """Radius ``tau(x) = min(c |x - x*|, cap_fraction x_1)`` and the selection rule.

    ``m`` candidate steps are drawn per iteration in adversarial mode and the
    one with the largest V is kept; random mode draws a single candidate.
    """

    c: float = 0.02
    cap_fraction: float = 0.5
    mode: Mode = Mode.RANDOM_BALL
    m: int = 16

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c >= 0):
            raise ValueError(f"gain c must be finite and >= 0, got {self.c}")
        if not 0 < self.cap_fraction < 1:
            raise ValueError(f"cap_fraction must lie in (0, 1), got {self.cap_fraction}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def candidates(self) -> int:
        return self.m if self.mode is Mode.ADVERSARIAL_V else 1


@dataclass
class Trajectory:
    """Stored iterates with per-point diagnostics.

    Row ``i`` holds the point with iteration index ``steps[i]``;
    ``step_norm[i]`` is the fixed-point residual ``|T x_k - x_k|``, which is
    the step to the next iterate on exact runs.  F and V are NaN
    where undefined.  ``converged_step`` is the index at which the stopping
    rule fired, or None.
    """

    start: np.ndarray
    points: np.ndarray
    steps: np.ndarray
    step_norm: np.ndarray
    dist_to_fixed: np.ndarray
    F: np.ndarray
    V: np.ndarray
    converged_step: int | None = None

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    @property
    def n_steps(self) -> int:
        return int(self.steps[-1])


def _reference_points(x: np.ndarray, cfg: ProblemConfig):
    """x* for ``x_1 >= 0`` and x_* for ``x_1 < 0``; None when the sets do not meet."""
    if not cfg.has_fixed_points:
        return None
    upper, lower = fixed_points(cfg)
    return np.where((x[..., 0] < 0)[..., None], lower, upper)


def _diagnostics(points: np.ndarray, nxt: np.ndarray, cfg: ProblemConfig):
    """step norms, distances, F and V for stacked points and their images."""
    step = _norm(nxt - points)
    ref = _reference_points(points, cfg)
    dist = np.full(points.shape[:-1], np.nan) if ref is None else _norm(points - ref)
    F = np.full(points.shape[:-1], np.nan)
    V = np.full(points.shape[:-1], np.nan)
    if 0 <= cfg.lam < 1:
        x1 = points[..., 0]
        in_slab = (x1 > 0) & (x1 <= 1)
        F[in_slab] = _F_unchecked(points[in_slab], cfg.lam)
        plus = x1 > 0
        V[plus] = _F_unchecked(nxt[plus], cfg.lam) - f_star(cfg)
    return step, dist, F, V


def iterate(
    start, cfg: ProblemConfig, n: int = 10_000, stop: StopTolerances | None = StopTolerances(), stride: int = 1
) -> Trajectory:
    """Run the exact iteration from ``start`` for at most ``n`` steps.

    With ``stop=None`` (or when the sets do not intersect) all ``n`` steps
    are taken.  ``stride`` keeps every stride-th point plus the last one.
    """
    x = as_points(start, cfg.d)
    if x.ndim != 1:
        raise ValueError("iterate takes a single start; use iterate_many for batches")
    if n < 0 or stride < 1:
        raise ValueError("n must be >= 0 and stride >= 1")
    ref = _reference_points(x, cfg)
    can_stop = stop is not None and ref is not None

    cur = x[None, :]
    pts = [cur[0]]
    converged = None
    k = 0
    while True:
        r = _norm(cur)
        if r[0] == 0:
            raise OriginNotProjectable(f"iterate reached the origin at step {k}")
        nxt = _dr_step_unchecked(cur, r, cfg.lam)
        if can_stop:
            res = _norm(nxt - cur)[0]
            dist = _norm(cur - ref)[0]
            if res < stop.step_tol and dist < stop.dist_tol:
                converged = k
                break
        if k == n:
            break
        cur = nxt
        k += 1
        pts.append(cur[0])

    points = np.array(pts)
    steps = np.arange(points.shape[0])
    r_all = _norm(points)
    if np.any(r_all == 0):
        # only reachable when the origin is the final stored point
        raise OriginNotProjectable(f"iterate reached the origin at step {int(np.argmin(r_all))}")
    images = _dr_step_unchecked(points, r_all, cfg.lam)
    step_norm, dist, F, V = _diagnostics(points, images, cfg)
    keep = (steps % stride == 0) | (steps == steps[-1])
    return Trajectory(
        start=x.copy(),
        points=points[keep],
        steps=steps[keep],
        step_norm=step_norm[keep],
        dist_to_fixed=dist[keep],
        F=F[keep],
        V=V[keep],
        converged_step=converged,
    )


@dataclass
class BatchResult:
    """Terminal state of a batch of exact runs."""

    final: np.ndarray
    steps: np.ndarray
    converged: np.ndarray
    step_norm: np.ndarray
    dist_to_fixed: np.ndarray


def iterate_many(starts, cfg: ProblemConfig, n: int = 10_000, stop: StopTolerances | None = StopTolerances()) -> BatchResult:
    """Vectorized exact runs that only keep the terminal state.

    Rows freeze once their stopping rule fires, so each row ends exactly
    where :func:`iterate` would stop.
    """
    x = as_points(starts, cfg.d)
    x = np.atleast_2d(x).copy()
    ref = _reference_points(x, cfg)
    can_stop = stop is not None and ref is not None
    active = np.ones(x.shape[0], dtype=bool)
    steps = np.zeros(x.shape[0], dtype=int)
    converged = np.zeros(x.shape[0], dtype=bool)
    for k in range(n + 1):
        if not active.any():
            break
        cur = x[active]
        r = _norm(cur)
        if np.any(r == 0):
            raise OriginNotProjectable(f"iterate reached the origin at step {k}")
        nxt = _dr_step_unchecked(cur, r, cfg.lam)
        if can_stop:
            done = (_norm(nxt - cur) < stop.step_tol) & (_norm(cur - ref[active]) < stop.dist_tol)
            idx = np.flatnonzero(active)
            converged[idx[done]] = True
            active[idx[done]] = False
            nxt, idx = nxt[~done], idx[~done]
        else:
            idx = np.flatnonzero(active)
        if k == n:
            break
        x[idx] = nxt
        steps[idx] += 1

    r = _norm(x)
    if np.any(r == 0):
        raise OriginNotProjectable("iterate reached the origin")
    step_norm, dist, _, _ = _diagnostics(x, _dr_step_unchecked(x, r, cfg.lam), cfg)
    return BatchResult(final=x, steps=steps, converged=converged, step_norm=step_norm, dist_to_fixed=dist)


def _require_certificate_range(cfg: ProblemConfig):
    if not 0 <= cfg.lam < 1:
        raise LambdaOutOfRange(f"perturbed dynamics need lambda in [0, 1), got {cfg.lam}")


def _tau_unchecked(x: np.ndarray, xs: np.ndarray, profile: PerturbationProfile) -> np.ndarray:
    return np.minimum(profile.c * _norm(x - xs), profile.cap_fraction * x[..., 0])


def tau(x, cfg: ProblemConfig, profile: PerturbationProfile):
    """Perturbation radius at ``x`` (a float, or an array for batches)."""
    _require_certificate_range(cfg)
    x = as_points(x, cfg.d)
    if np.any(x[..., 0] <= 0):
        raise RegionError("tau is defined only for x_1 > 0")
    out = _tau_unchecked(x, fixed_points(cfg)[0], profile)
    return float(out) if out.ndim == 0 else out


def _ball_offsets(normals: np.ndarray, uniforms: np.ndarray, radius: np.ndarray, d: int) -> np.ndarray:
    """Uniform points in balls: direction from a Gaussian, radius ``r u^(1/d)``."""
    direction = normals / _norm(normals)[..., None]
    return (radius * uniforms ** (1.0 / d))[..., None] * direction


def _perturbed_kernel(x, cfg, profile, xs, fs, normals, uniforms):
    """One perturbed step for a batch.

    ``normals`` has shape (B, m, 2, d) and ``uniforms`` (B, m, 2).  Returns the
    chosen next points (B, d) and the worst ball-membership excess seen.
    """
    d = cfg.d
    tx = _tau_unchecked(x, xs, profile)
    y = x[:, None, :] + _ball_offsets(normals[:, :, 0], uniforms[:, :, 0], tx[:, None], d)
    z = _dr_step_unchecked(y, _norm(y), cfg.lam)
    tz = _tau_unchecked(z, xs, profile)
    w = z + _ball_offsets(normals[:, :, 1], uniforms[:, :, 1], tz, d)

    excess = max(
        float(np.max(_norm(y - x[:, None, :]) - tx[:, None])),
        float(np.max(_norm(w - z) - tz)),
    )
    if w.shape[1] == 1:
        return w[:, 0], excess
    tw = _dr_step_unchecked(w, _norm(w), cfg.lam)
    v = _F_unchecked(tw, cfg.lam) - fs
    pick = np.argmax(v, axis=1)
    return w[np.arange(w.shape[0]), pick], excess


def perturbed_step(x, cfg: ProblemConfig, profile: PerturbationProfile, rng: np.random.Generator) -> np.ndarray:
    """Draw one element of the perturbed step set at ``x``."""
    _require_certificate_range(cfg)
    x = as_points(x, cfg.d)
    if x.ndim != 1 or x[0] <= 0:
        raise RegionError("perturbed_step needs a single point with x_1 > 0")
    m = profile.candidates
    normals = rng.standard_normal((1, m, 2, cfg.d))
    uniforms = rng.random((1, m, 2))
    w, _ = _perturbed_kernel(x[None, :], cfg, profile, fixed_points(cfg)[0], f_star(cfg), normals, uniforms)
    return w[0]


@dataclass
class PerturbedEnsemble:
    """Perturbed trajectories stored as stacked arrays.

    ``points`` has shape (runs, stored, d); ``V`` and ``dist_to_fixed`` have
    shape (runs, stored); ``steps`` holds the iteration index of each stored
    column.  Trajectory ``i`` came from ``starts[keys[i][0]]`` with run index
    ``keys[i][1]``.
    """

    cfg: ProblemConfig
    profile: PerturbationProfile
    seed: int
    starts: np.ndarray
    keys: list
    steps: np.ndarray
    points: np.ndarray
    V: np.ndarray
    dist_to_fixed: np.ndarray
    max_ball_excess: float = 0.0
    region_violations: list = field(default_factory=list)

    @property
    def mode(self) -> Mode:
        return self.profile.mode

    def __len__(self):
        return self.points.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        pts = self.points[i]
        step_norm, dist, F, V = _diagnostics(pts, _dr_step_unchecked(pts, _norm(pts), self.cfg.lam), self.cfg)
        return Trajectory(
            start=pts[0].copy(),
            points=pts,
            steps=self.steps,
            step_norm=step_norm,
            dist_to_fixed=dist,
            F=F,
            V=V,
        )

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(len(self))]


# bytes of random numbers drawn per chunk of steps, summed over a block
_DRAW_BUDGET = 32 * 2**20


def _run_block(block_keys, starts, cfg, profile, n, seed, stride):
    """Simulate one block of trajectories; independent of how blocks are formed."""
    xs = fixed_points(cfg)[0]
    fs = f_star(cfg)
    m, d = profile.candidates, cfg.d
    gens = []
    for si, ri in block_keys:
        ss_normal, ss_unif = np.random.SeedSequence([seed, si, ri]).spawn(2)
        gens.append((np.random.default_rng(ss_normal), np.random.default_rng(ss_unif)))

    b = len(block_keys)
    x = np.array([starts[si] for si, _ in block_keys], dtype=float).reshape(b, d)
    keep = [k for k in range(n + 1) if k % stride == 0 or k == n]
    stored = np.empty((b, len(keep), d))
    stored[:, 0] = x
    slot = 1
    excess = 0.0
    violations = []
    per_step = max(1, b * m * 2 * (d + 1) * 8)
    chunk = int(max(1, min(n, _DRAW_BUDGET // per_step))) if n else 1
    k = 0
    while k < n:
        c = min(chunk, n - k)
        normals = np.stack([g[0].standard_normal((c, m, 2, d)) for g in gens], axis=1)
        uniforms = np.stack([g[1].random((c, m, 2)) for g in gens], axis=1)
        for j in range(c):
            x, ex = _perturbed_kernel(x, cfg, profile, xs, fs, normals[j], uniforms[j])
            excess = max(excess, ex)
            k += 1
            bad = np.flatnonzero(~(x[:, 0] > 0))
            for i in bad:
                violations.append((block_keys[i], k, "x1", float(x[i, 0])))
            if k % stride == 0 or k == n:
                stored[:, slot] = x
                slot += 1
    return stored, excess, violations


def simulate_perturbed(
    starts,
    cfg: ProblemConfig,
    profile: PerturbationProfile,
    n: int = 2000,
    runs_per_start: int = 1,
    seed: int = 42,
    stride: int = 1,
    workers: int = 1,
) -> PerturbedEnsemble:
    """Fixed-horizon perturbed trajectories, ``runs_per_start`` per start.

    Every trajectory owns random streams derived from ``(seed, start index,
    run index)``, so the ensemble is identical for any ``workers`` count.
    """
    _require_certificate_range(cfg)
    starts = np.atleast_2d(as_points(starts, cfg.d))
    if np.any(starts[:, 0] <= 0):
        raise RegionError("all starts must satisfy x_1 > 0")
    if n < 0 or runs_per_start < 1 or stride < 1 or workers < 1:
        raise ValueError("need n >= 0, runs_per_start >= 1, stride >= 1, workers >= 1")

    keys = [(si, ri) for si in range(starts.shape[0]) for ri in range(runs_per_start)]
    blocks = [b for b in np.array_split(np.arange(len(keys)), min(workers, len(keys))) if b.size]
    args = [([keys[i] for i in blk], starts, cfg, profile, n, seed, stride) for blk in blocks]
    if len(blocks) == 1:
        results = [_run_block(*args[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            results = list(pool.map(lambda a: _run_block(*a), args))

    points = np.concatenate([r[0] for r in results])
    steps = np.array([k for k in range(n + 1) if k % stride == 0 or k == n])
    xs = fixed_points(cfg)[0]
    nxt = _dr_step_unchecked(points, _norm(points), cfg.lam)
    V = _F_unchecked(nxt, cfg.lam) - f_star(cfg)
    return PerturbedEnsemble(
        cfg=cfg,
        profile=profile,
        seed=seed,
        starts=starts,
        keys=keys,
        steps=steps,
        points=points,
        V=V,
        dist_to_fixed=_norm(points - xs),
        max_ball_excess=max(r[1] for r in results),
        region_violations=[v for r in results for v in r[2]],
    )
