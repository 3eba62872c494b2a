import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drdyn.errors import DomainError, EmptySampleRegion, LambdaOutOfRange, RegionError
from drdyn.geometry import ProblemConfig, dr_step
from drdyn.lyapunov import (
    SampleBox,
    certificate,
    estimate_alpha,
    estimate_g,
    estimate_rates,
    eval_F,
    eval_U,
    eval_V,
    eval_W,
    f_star,
    sample_box,
)

# F(x*) for lambda = 0.6, x* = (0.8, 0.6), evaluated with mpmath at 50 digits
F_STAR_06 = 0.48725524297824257
# F((0.5, 0)) for lambda = 0: 0.125 + log 2
F_HALF_0 = 0.8181471805599453


def test_eval_F_examples():
    assert eval_F([1, 0], ProblemConfig(2, 0.0)) == 0.5
    assert eval_F([0.8, 0.6], ProblemConfig(2, 0.6)) == pytest.approx(F_STAR_06, abs=1e-15)
    assert eval_F([0.5, 0], ProblemConfig(2, 0.0)) == pytest.approx(0.125 + math.log(2), abs=1e-15)
    assert f_star(ProblemConfig(2, 0.6)) == pytest.approx(F_STAR_06, abs=1e-15)


def test_eval_F_domain():
    cfg = ProblemConfig(2, 0.5)
    for bad in ([0, 1], [1.5, 0], [-0.2, 0]):
        with pytest.raises(DomainError):
            eval_F(bad, cfg)
    with pytest.raises(LambdaOutOfRange):
        eval_F([0.5, 0], ProblemConfig(2, 1.0))


def test_eval_U_examples():
    for lam in (0.0, 0.3, 0.9):
        cfg = ProblemConfig(3, lam)
        assert eval_U(cfg.x_star, cfg) == 0.0
    assert eval_U([1, 0], ProblemConfig(2, 0.0)) == 0.0
    assert eval_U([0.5, 0], ProblemConfig(2, 0.0)) == pytest.approx(F_HALF_0 - 0.5, abs=1e-15)


def test_eval_V_examples():
    cfg = ProblemConfig(2, 0.5)
    # T x* rounds to within an ulp of x*
    assert abs(eval_V(cfg.x_star, cfg)) <= 1e-15
    # T(2, 0) = (1, 0) = x* for lambda = 0
    assert eval_V([2, 0], ProblemConfig(2, 0.0)) == 0.0
    assert eval_V([1, 5], cfg) == eval_U(dr_step([1, 5], cfg), cfg)
    with pytest.raises(RegionError):
        eval_V([-1, 0], cfg)


def test_eval_W_examples():
    cfg = ProblemConfig(2, 0.5)
    assert eval_W(cfg.x_star, cfg) == pytest.approx(0.0, abs=1e-15)
    # T(0.5, 0) = (1, 0) for lambda = 0
    assert eval_W([0.5, 0], ProblemConfig(2, 0.0)) == pytest.approx(F_HALF_0 - 0.5, abs=1e-15)
    with pytest.raises(DomainError):
        eval_W([2, 0], cfg)


@st.composite
def slab_points(draw):
    d = draw(st.integers(2, 5))
    x1 = draw(st.floats(1e-3, 1.0))
    rest = draw(st.lists(st.floats(-10, 10), min_size=d - 1, max_size=d - 1))
    return np.array([x1, *rest])


lams = st.sampled_from([0.0, 0.3, 0.5, 0.7, 0.9])


@given(x=slab_points(), lam=lams)
def test_certificate_signs_and_identity(x, lam):
    cfg = ProblemConfig(x.size, lam)
    c = certificate(x, cfg)
    assert c.u >= -1e-12 and c.w >= -1e-10 and c.v >= -1e-12
    assert c.u == pytest.approx(c.v + c.w, abs=1e-12 * max(1, abs(c.f)))


@given(x=slab_points(), lam=lams)
def test_F_decreases_along_step(x, lam):
    cfg = ProblemConfig(x.size, lam)
    assert eval_F(dr_step(x, cfg), cfg) <= eval_F(x, cfg) + 1e-10


@settings(max_examples=200)
@given(x=slab_points(), lam=lams)
def test_strict_minimum(x, lam):
    cfg = ProblemConfig(x.size, lam)
    if np.linalg.norm(x - cfg.x_star) > 1e-6:
        assert eval_F(x, cfg) > f_star(cfg)


@given(x=slab_points(), lam=lams)
def test_V_is_U_after_step(x, lam):
    cfg = ProblemConfig(x.size, lam)
    assert eval_V(x, cfg) == eval_U(dr_step(x, cfg), cfg)


def test_zero_set_on_samples():
    cfg = ProblemConfig(2, 0.5)
    pts = sample_box(cfg, 20_000, SampleBox(), seed=5)
    v = eval_V(pts, cfg)
    small = v <= 1e-12
    assert np.all(np.linalg.norm(pts[small] - cfg.x_star, axis=1) <= 1e-5)


def test_sample_box_deterministic_and_inside():
    cfg = ProblemConfig(3, 0.5)
    box = SampleBox(1e-3, 4.0)
    a = sample_box(cfg, 20_000, box, seed=9)
    b = sample_box(cfg, 20_000, box, seed=9)
    assert np.array_equal(a, b)
    assert np.all(box.contains(a))
    # prefix property: a larger budget extends rather than reshuffles
    assert np.array_equal(sample_box(cfg, 30_000, box, seed=9)[:20_000], a)


T_GRID = np.round(np.arange(0, 101) * 0.01, 2)


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.9])
def test_rate_estimates_shape(lam):
    cfg = ProblemConfig(2, lam)
    g, alpha = estimate_rates(T_GRID, cfg, 20_000)
    for est in (g, alpha):
        assert est.values[0] == 0.0
        assert np.all(np.diff(est.values) >= 0)
        assert np.all(est.values[T_GRID >= 0.05] > 0)
    assert np.array_equal(g.values, estimate_g(T_GRID, cfg, 20_000).values)
    assert np.array_equal(alpha.values, estimate_alpha(T_GRID, cfg, 20_000).values)


def test_alpha_decrease_holds_on_its_samples():
    cfg = ProblemConfig(2, 0.3)
    box = SampleBox()
    alpha = estimate_alpha(T_GRID, cfg, 20_000, box, seed=1)
    pts = sample_box(cfg, 20_000, box, seed=1)
    w = eval_W(pts, cfg)
    u = eval_U(pts, cfg)
    assert np.all(w >= alpha(u) - 1e-12)


def test_alpha_with_supplied_g():
    cfg = ProblemConfig(2, 0.5)
    g = estimate_g(np.linspace(0, 5, 501), cfg, 20_000)
    a = estimate_alpha(T_GRID, cfg, 20_000, g=g)
    assert a.values[0] == 0 and np.all(np.diff(a.values) >= 0)


def test_rate_estimate_errors():
    cfg = ProblemConfig(2, 0.5)
    with pytest.raises(EmptySampleRegion):
        estimate_g([0.0, 100.0], cfg, 1000)
    with pytest.raises(EmptySampleRegion):
        estimate_alpha([0.0, 1e6], cfg, 1000)
    with pytest.raises(ValueError):
        estimate_g([0.5, 0.1], cfg, 1000)
    with pytest.raises(ValueError):
        SampleBox(eps_floor=0.0)


def test_rate_lookup_is_floor():
    cfg = ProblemConfig(2, 0.5)
    g = estimate_g([0.0, 0.1, 0.2], cfg, 5000)
    assert g(0.15) == g.values[1]
    assert g(5.0) == g.values[-1]
    assert g(0.0) == 0.0
