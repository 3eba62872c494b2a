"""Projections, reflections and the Douglas-Rachford map for a sphere and a line.

The two sets are the unit sphere ``S`` in R^d and the line
``L = {t e1 + lam e2 : t in R}``.  All operations accept a single point of
shape ``(d,)`` or a batch of shape ``(n, d)``; batched evaluation is row-wise
and gives the same bits as evaluating each row on its own.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainViolation, LambdaOutOfRange, OriginNotProjectable

__all__ = [
    "ProblemConfig",
    "Region",
    "as_points",
    "classify_region",
    "dr_step",
    "dr_step_composed",
    "fixed_points",
    "in_delta",
    "mirror",
    "project_line",
    "project_sphere",
    "reflect",
]


@dataclass(frozen=True)
class ProblemConfig:
    """Dimension ``d`` and line offset ``lam`` of the sphere/line problem."""

    d: int = 2
    lam: float = 0.5

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DomainViolation(f"dimension must be an integer >= 2, got {self.d!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise LambdaOutOfRange(f"lambda must be finite and >= 0, got {self.lam!r}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def has_fixed_points(self) -> bool:
        return self.lam <= 1.0

    @property
    def x_star(self) -> np.ndarray:
        """The intersection point with positive first coordinate."""
        return fixed_points(self)[0]


class Region(enum.Enum):
    HPLUS = "HPlus"
    HMINUS = "HMinus"
    HZERO = "HZero"
    ORIGIN = "Origin"


def as_points(x, d: int | None = None) -> np.ndarray:
    """Validate ``x`` as one point ``(d,)`` or a batch ``(n, d)`` of finite floats."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim not in (1, 2):
        raise DimensionMismatch(f"expected shape (d,) or (n, d), got {arr.shape}")
    if arr.shape[-1] < 2:
        raise DimensionMismatch(f"points need at least 2 coordinates, got {arr.shape[-1]}")
    if d is not None and arr.shape[-1] != d:
        raise DimensionMismatch(f"expected dimension {d}, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainViolation("coordinates must be finite")
    return arr


def _sqnorm(x: np.ndarray) -> np.ndarray:
    # coordinate-by-coordinate accumulation: same rounding for any batch shape
    acc = x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        acc = acc + x[..., j] * x[..., j]
    return acc


_TINY = 1e-280


def _norm(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        acc = _sqnorm(x)
    bad = (acc < _TINY) | ~np.isfinite(acc)
    if not np.any(bad):
        return np.sqrt(acc)
    # rescale rows whose squares under- or overflow
    out = np.sqrt(acc)
    scale = np.max(np.abs(x), axis=-1)
    fix = bad & (scale > 0)
    if np.any(fix):
        s = scale[fix] if out.ndim else scale
        xs = x[fix] if out.ndim else x
        val = s * np.sqrt(_sqnorm(xs / s[..., None]))
        if out.ndim:
            out[fix] = val
        else:
            out = val
    return out


def project_line(x, cfg: ProblemConfig) -> np.ndarray:
    x = as_points(x, cfg.d)
    p = np.zeros_like(x)
    p[..., 0] = x[..., 0]
    p[..., 1] = cfg.lam
    return p


def project_sphere(x) -> np.ndarray:
    x = as_points(x)
    r = _norm(x)
    if np.any(r == 0):
        raise OriginNotProjectable("the origin has no unique nearest point on the sphere")
    return x / r[..., None]


def reflect(x, p) -> np.ndarray:
    """Reflect ``x`` through its projection ``p``: ``2p - x``."""
    return 2.0 * np.asarray(p, dtype=float) - np.asarray(x, dtype=float)


def dr_step(x, cfg: ProblemConfig) -> np.ndarray:
    """One Douglas-Rachford step, first reflecting in the sphere, then the line.

    Uses the closed form: the first coordinate is rescaled to ``x_1/|x|``,
    every other coordinate is shrunk by ``1 - 1/|x|`` and ``lam`` is added to
    the second one.
    """
    x = as_points(x, cfg.d)
    r = _norm(x)
    if np.any(r == 0):
        raise OriginNotProjectable("the Douglas-Rachford step is undefined at the origin")
    return _dr_step_unchecked(x, r, cfg.lam)


def _dr_step_unchecked(x: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    shrink = 1.0 - 1.0 / r
    out = x * shrink[..., None]
    out[..., 0] = x[..., 0] / r
    out[..., 1] += lam
    return out


def dr_step_composed(x, cfg: ProblemConfig) -> np.ndarray:
    """The same step assembled from projections: ``(x + R_L(R_S(x))) / 2``.

    Kept as an independent route for cross-checking :func:`dr_step`.
    """
    x = as_points(x, cfg.d)
    rs = reflect(x, project_sphere(x))
    rl = reflect(rs, project_line(rs, cfg))
    return 0.5 * (x + rl)


def fixed_points(cfg: ProblemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(x*, x_*)``, the points where the line meets the sphere."""
    if not 0.0 <= cfg.lam <= 1.0:
        raise LambdaOutOfRange(f"fixed points exist only for lambda in [0, 1], got {cfg.lam}")
    a = np.sqrt(1.0 - cfg.lam**2)
    upper = np.zeros(cfg.d)
    upper[0], upper[1] = a, cfg.lam
    lower = upper.copy()
    lower[0] = -a
    return upper, lower


def classify_region(x) -> Region:
    """Region of a single point, by the exact sign of its first coordinate."""
    x = as_points(x)
    if x.ndim != 1:
        raise DimensionMismatch("classify_region takes a single point")
    if x[0] > 0:
        return Region.HPLUS
    if x[0] < 0:
        return Region.HMINUS
    if np.any(x != 0):
        return Region.HZERO
    return Region.ORIGIN


def in_delta(x):
    """True where ``0 < x_1 <= 1``.  Returns a bool, or a bool array for batches."""
    x = as_points(x)
    first = x[..., 0]
    res = (first > 0) & (first <= 1)
    return bool(res) if res.ndim == 0 else res


def mirror(x) -> np.ndarray:
    """Negate the first coordinate, swapping the two open half-spaces."""
    out = as_points(x).copy()
    out[..., 0] = -out[..., 0]
    return out
