"""The Lyapunov certificate F for the sphere/line iteration and quantities built on it.

On the slab ``0 < x_1 <= 1``::

    F(x) = |x - lam e2|^2 / 2 - lam log(1 + s) + lam s + (lam - 1) log x_1,
    s = sqrt(1 - x_1^2)

with ``U = F - F(x*)``, ``V = U o T`` (defined on all of ``x_1 > 0``) and
``W = F - F o T``.  The decrease-rate functions ``g`` and ``alpha`` are
infima over unbounded sets; here they are replaced by minima over a
deterministic low-discrepancy sample of a bounded box, so every reported
value is an *upper* estimate of the true infimum.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, EmptySampleRegion, LambdaOutOfRange, RegionError
from .geometry import ProblemConfig, _norm, _sqnorm, as_points, dr_step, fixed_points

__all__ = [
    "CertificateValue",
    "RateEstimate",
    "SampleBox",
    "certificate",
    "estimate_alpha",
    "estimate_g",
    "estimate_rates",
    "eval_F",
    "eval_U",
    "eval_V",
    "eval_W",
    "f_star",
    "sample_box",
]

# fixed so chunk boundaries, hence samples, never depend on the budget split
SAMPLE_CHUNK = 8192


@dataclass(frozen=True)
class SampleBox:
    """Bounded stand-in for the slab: ``x_1 in [eps_floor, 1]``, ``|x_j| <= r_extent``."""

    eps_floor: float = 1e-3
    r_extent: float = 10.0

    def __post_init__(self):
        if not (0 < self.eps_floor < 1):
            raise ValueError(f"eps_floor must lie in (0, 1), got {self.eps_floor}")
        if not self.r_extent > self.eps_floor:
            raise ValueError("r_extent must exceed eps_floor")

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (
            (x[..., 0] >= self.eps_floor)
            & (x[..., 0] <= 1.0)
            & np.all(np.abs(x[..., 1:]) <= self.r_extent, axis=-1)
        )


def _check_lambda(cfg: ProblemConfig):
    if not 0.0 <= cfg.lam < 1.0:
        raise LambdaOutOfRange(f"the certificate needs lambda in [0, 1), got {cfg.lam}")


def _F_unchecked(x: np.ndarray, lam: float) -> np.ndarray:
    x1 = x[..., 0]
    shifted = x.copy()
    shifted[..., 1] -= lam
    s = np.sqrt(np.maximum(1.0 - x1 * x1, 0.0))
    return (
        0.5 * _sqnorm(shifted)
        - lam * np.log1p(s)
        + lam * s
        + (lam - 1.0) * np.log(x1)
    )


def eval_F(x, cfg: ProblemConfig):
    _check_lambda(cfg)
    x = as_points(x, cfg.d)
    x1 = x[..., 0]
    if np.any((x1 <= 0) | (x1 > 1)):
        raise DomainError("F is defined only for 0 < x_1 <= 1")
    out = _F_unchecked(x, cfg.lam)
    return float(out) if out.ndim == 0 else out


@functools.lru_cache(maxsize=None)
def f_star(cfg: ProblemConfig) -> float:
    """``F(x*)``, computed once per configuration."""
    _check_lambda(cfg)
    return float(_F_unchecked(fixed_points(cfg)[0], cfg.lam))


def eval_U(x, cfg: ProblemConfig):
    return eval_F(x, cfg) - f_star(cfg)


def eval_V(x, cfg: ProblemConfig):
    """``V(x) = U(T x)``; defined on the open half-space ``x_1 > 0``."""
    _check_lambda(cfg)
    x = as_points(x, cfg.d)
    if np.any(x[..., 0] <= 0):
        raise RegionError("V is defined only for x_1 > 0")
    return eval_U(dr_step(x, cfg), cfg)


def eval_W(x, cfg: ProblemConfig):
    """One-step decrease ``F(x) - F(T x)``, as a plain difference of F values."""
    fx = eval_F(x, cfg)
    return fx - eval_F(dr_step(x, cfg), cfg)


@dataclass(frozen=True)
class CertificateValue:
    f: float
    u: float
    v: float
    w: float


def certificate(x, cfg: ProblemConfig) -> CertificateValue:
    """F, U, V and W at a single point of the slab."""
    x = as_points(x, cfg.d)
    tx = dr_step(x, cfg)
    f = eval_F(x, cfg)
    ftx = eval_F(tx, cfg)
    fs = f_star(cfg)
    return CertificateValue(f=f, u=f - fs, v=ftx - fs, w=f - ftx)


def sample_box(cfg: ProblemConfig, budget: int, box: SampleBox, seed: int = 0) -> np.ndarray:
    """``budget`` scrambled-Halton points in ``box``.

    The budget is cut into fixed-size chunks, each with its own seed derived
    from ``(seed, chunk index)``, so the result does not depend on evaluation
    order.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    chunks = []
    for i, start in enumerate(range(0, budget, SAMPLE_CHUNK)):
        n = min(SAMPLE_CHUNK, budget - start)
        engine = qmc.Halton(cfg.d, scramble=True, seed=np.random.default_rng([seed, i]))
        chunks.append(engine.random(n))
    u = np.concatenate(chunks)
    x = np.empty_like(u)
    x[:, 0] = box.eps_floor + (1.0 - box.eps_floor) * u[:, 0]
    x[:, 1:] = box.r_extent * (2.0 * u[:, 1:] - 1.0)
    return x


@dataclass
class RateEstimate:
    """Estimated ``g`` or ``alpha`` on a grid of radii.

    ``values`` is monotone-regularized (running max); ``raw_values`` keeps the
    sampled minima.  Values are upper estimates of the true infima.
    """

    kind: str
    t_grid: np.ndarray
    values: np.ndarray
    raw_values: np.ndarray
    sample_budget: int
    box: SampleBox
    seed: int
    lam: float = field(default=float("nan"))

    def __call__(self, t):
        """Piecewise-constant lookup: the value at the largest grid point ``<= t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.t_grid, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out


class _RateSampler:
    """Sampled W, U and distances to x*, sorted for suffix-minimum lookups."""

    def __init__(self, cfg: ProblemConfig, budget: int, box: SampleBox, seed: int):
        _check_lambda(cfg)
        xs = fixed_points(cfg)[0]
        pts = sample_box(cfg, budget, box, seed)
        with_fixed = bool(box.contains(xs))
        if with_fixed:
            pts = np.vstack([pts, xs])
        tx = dr_step(pts, cfg)
        fx = _F_unchecked(pts, cfg.lam)
        self.w = fx - _F_unchecked(tx, cfg.lam)
        self.u = fx - f_star(cfg)
        if with_fixed:
            # T x* = x* exactly; the floating-point step leaves ~1e-17 residue
            self.w[-1] = 0.0
            self.u[-1] = 0.0
        self.dist = _norm(pts - xs)

        order = np.argsort(self.dist, kind="stable")
        self._dist_sorted = self.dist[order]
        # _g_suffix[i] = min W over the samples with the i-th smallest distance or more
        self._g_suffix = np.minimum.accumulate(self.w[order][::-1])[::-1]

    def g(self, r):
        """Minimum of W over samples at distance ``>= r``; NaN where none."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self._dist_sorted, r, side="left")
        n = self._dist_sorted.size
        vals = self._g_suffix[np.clip(idx, 0, n - 1)]
        return np.where(idx < n, vals, np.nan)

    def alpha(self, t, g_of_r=None):
        """Minimum of g(|y - x*|) over samples with ``U(y) >= t``; NaN where none."""
        g_of_r = self.g if g_of_r is None else g_of_r
        gd = np.asarray(g_of_r(self.dist), dtype=float)
        order = np.argsort(self.u, kind="stable")
        u_sorted = self.u[order]
        suffix = np.minimum.accumulate(gd[order][::-1])[::-1]
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(u_sorted, t, side="left")
        n = u_sorted.size
        return np.where(idx < n, suffix[np.clip(idx, 0, n - 1)], np.nan)


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted ascending and start at >= 0")
    return t


def _finish(kind, t, raw, cfg, budget, box, seed) -> RateEstimate:
    if np.any(np.isnan(raw)):
        bad = t[np.isnan(raw)][0]
        raise EmptySampleRegion(f"no sample qualifies for {kind} at t={bad:g}; shrink t or enlarge the box")
    return RateEstimate(
        kind=kind,
        t_grid=t,
        values=np.maximum.accumulate(raw),
        raw_values=raw,
        sample_budget=budget,
        box=box,
        seed=seed,
        lam=cfg.lam,
    )


def estimate_g(
    t_grid, cfg: ProblemConfig, budget: int = 100_000, box: SampleBox = SampleBox(), seed: int = 0
) -> RateEstimate:
    """Estimate ``g(t) = inf {W(x) : x in slab, |x - x*| >= t}``.

    x* is added to the sample whenever it lies in the box, so ``g(0) = 0``
    exactly.
    """
    t = _check_grid(t_grid)
    sampler = _RateSampler(cfg, budget, box, seed)
    return _finish("g", t, sampler.g(t), cfg, budget, box, seed)


def estimate_alpha(
    t_grid,
    cfg: ProblemConfig,
    budget: int = 100_000,
    box: SampleBox = SampleBox(),
    seed: int = 0,
    g: RateEstimate | None = None,
) -> RateEstimate:
    """Estimate ``alpha(t) = inf {g(|y - x*|) : y in slab, U(y) >= t}``.

    Without ``g`` the inner function is evaluated exactly at every sample
    distance from the same sample set; with ``g`` its grid lookup is used.
    """
    t = _check_grid(t_grid)
    sampler = _RateSampler(cfg, budget, box, seed)
    raw = sampler.alpha(t, None if g is None else g)
    return _finish("alpha", t, raw, cfg, budget, box, seed)


def estimate_rates(
    t_grid, cfg: ProblemConfig, budget: int = 100_000, box: SampleBox = SampleBox(), seed: int = 0
) -> tuple[RateEstimate, RateEstimate]:
    """``(g, alpha)`` on the same grid from one shared sample set."""
    t = _check_grid(t_grid)
    sampler = _RateSampler(cfg, budget, box, seed)
    return (
        _finish("g", t, sampler.g(t), cfg, budget, box, seed),
        _finish("alpha", t, sampler.alpha(t), cfg, budget, box, seed),
    )
