import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drdyn.dynamics import PerturbationProfile, simulate_perturbed
from drdyn.errors import InsufficientData, NoAdmissibleGain, RegionError
from drdyn.geometry import ProblemConfig
from drdyn.io import jsonable
from drdyn.lyapunov import eval_V
from drdyn.stability import (
    calibrate_gain,
    certify,
    boundary_experiments,
    check_lyapunov_conditions,
    fit_kl_envelope,
    grid_compact,
    heldout_exceedance,
    inflated_v_bound,
    uniform_convergence_curve,
    verify_uniform_convergence,
)

CFG = ProblemConfig(2, 0.5)
K_SMALL = grid_compact([(0.5, 1.5, 3), (-1, 1, 3)])


@pytest.fixture(scope="module")
def ensemble():
    prof = PerturbationProfile(c=0.05, mode="adversarial", m=8)
    return simulate_perturbed(K_SMALL, CFG, prof, n=400, runs_per_start=4, seed=3)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.7, 0.9])
def test_lyapunov_conditions_hold(lam):
    res = check_lyapunov_conditions(ProblemConfig(2, lam), sample_budget=5000)
    assert res["between"]["passed"]
    assert res["decrease"]["passed"], res["decrease"]
    assert res["zero_set"]["passed"], res["zero_set"]
    assert res["violations"] == []


def test_envelope_dominates_its_own_data(ensemble):
    env = fit_kl_envelope(ensemble)
    assert env.is_kl_shaped()
    held = heldout_exceedance(env, ensemble, np.arange(len(ensemble)))
    assert held["exceedances"] == 0
    # beta(s, 0) >= s at every level reached by some start
    v0 = ensemble.V[:, 0]
    for i, s in enumerate(env.s_grid):
        if np.any(v0 <= s):
            assert env.beta_hat[i, 0] >= v0[v0 <= s].max()


def test_envelope_zero_level_and_constant_trajectory():
    prof = PerturbationProfile(c=0.1)
    ens = simulate_perturbed([CFG.x_star], CFG, prof, n=30, runs_per_start=2, seed=0)
    env = fit_kl_envelope(ens, s_grid=[0.0, 0.1])
    assert np.all(env.beta_hat == 0.0)
    assert env.is_kl_shaped()


def test_envelope_errors(ensemble):
    with pytest.raises(InsufficientData):
        fit_kl_envelope(ensemble, indices=[])
    with pytest.raises(InsufficientData):
        fit_kl_envelope(ensemble, s_grid=[1e-9])


def _synthetic(V):
    ens = simulate_perturbed(np.ones((V.shape[0], 2)), CFG, PerturbationProfile(c=0.0), n=V.shape[1] - 1, seed=0)
    ens.V = V
    return ens


@settings(max_examples=25, deadline=None)
@given(
    v0=st.lists(st.floats(0.01, 5), min_size=8, max_size=8),
    rest=st.lists(st.lists(st.floats(-1, 5), min_size=5, max_size=5), min_size=8, max_size=8),
)
def test_envelope_regularization_is_kl_and_dominates(v0, rest):
    # arbitrary V values for trajectories that start off the zero set
    V = np.column_stack([v0, rest])
    ens = _synthetic(V)
    env = fit_kl_envelope(ens, s_grid=np.unique(np.concatenate([[0.0], v0])))
    assert env.is_kl_shaped()
    assert np.all(env.beta_hat >= env.raw)
    assert heldout_exceedance(env, ens, np.arange(8))["exceedances"] == 0


def test_envelope_reports_data_that_no_kl_bound_fits():
    # starting at V = 0 and leaving the zero set contradicts beta(0, n) = 0
    V = np.zeros((2, 4))
    V[1, -1] = 1.0
    env = fit_kl_envelope(_synthetic(V), s_grid=[0.0])
    assert not env.is_kl_shaped()


def test_heldout_above_grid_counts_as_exceedance(ensemble):
    env = fit_kl_envelope(ensemble, s_grid=[0.0, float(ensemble.V[:, 0].min())])
    held = heldout_exceedance(env, ensemble, np.arange(len(ensemble)))
    assert held["trajectories_above_grid"] > 0
    assert held["rate"] > 0


def test_grid_compact():
    pts = grid_compact([(0.5, 1.5, 10), (-1, 1, 5)])
    assert pts.shape == (50, 2)
    assert pts[:, 0].min() == 0.5 and pts[:, 1].max() == 1.0
    assert grid_compact([(1, 1, 1)], d=3).tolist() == [[1.0, 0.0, 0.0]]
    with pytest.raises(RegionError):
        grid_compact([(0.0, 1.0, 3)])
    with pytest.raises(RegionError):
        grid_compact([(0.2, 1.0, 3)], e1_floor=0.5)
    with pytest.raises(ValueError):
        grid_compact([(0.5, 1.0, 0)])
    with pytest.raises(ValueError):
        grid_compact([])


def test_inflated_bound_covers_centres():
    prof = PerturbationProfile(c=0.1)
    M = inflated_v_bound(K_SMALL, CFG, prof)
    assert M >= eval_V(K_SMALL, CFG).max()
    assert inflated_v_bound([CFG.x_star], CFG, prof) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_exact_uniform_convergence(lam):
    cfg = ProblemConfig(2, lam)
    uc, _ = verify_uniform_convergence(K_SMALL, cfg, PerturbationProfile(c=0.0), n=300, runs=1)
    assert uc.passed
    assert uc.final_sup < 1e-8


def test_uniform_convergence_at_fixed_point_is_zero():
    uc, _ = verify_uniform_convergence([CFG.x_star], CFG, PerturbationProfile(c=0.1), n=20, runs=2)
    assert np.all(uc.sup_distance <= 1e-15)
    assert uc.passed


def test_uniform_convergence_rejects_bad_sets():
    with pytest.raises(RegionError):
        verify_uniform_convergence([[0.0, 1.0]], CFG, PerturbationProfile())


def test_uniform_curve_flags_non_monotone_tail(ensemble):
    uc = uniform_convergence_curve(ensemble, target=10.0, burn_in=0)
    curve = ensemble.dist_to_fixed.max(axis=0)
    assert uc.tail_monotone == bool(np.all(np.diff(curve) <= 0))


def test_calibration_accepts_zero_gain_and_rejects_impossible_target():
    cal = calibrate_gain(CFG, K_SMALL, c_candidates=[0.0], n=200, runs=1)
    assert cal.c == 0.0 and cal.candidates[0]["admissible"]
    with pytest.raises(NoAdmissibleGain) as info:
        calibrate_gain(CFG, K_SMALL, c_candidates=[0.2, 0.1], target_dist=0.0, n=50, runs=2)
    assert [r["c"] for r in info.value.results] == [0.2, 0.1]
    with pytest.raises(ValueError):
        calibrate_gain(CFG, K_SMALL, c_candidates=[0.01, 0.1])


def test_boundary_cases():
    rng = np.random.default_rng(0)
    hplus = np.column_stack([rng.uniform(0.05, 3, 5), rng.uniform(-3, 3, 5)])
    cases = [
        (ProblemConfig(2, 1.0), hplus),
        (ProblemConfig(2, 1.5), hplus),
        (ProblemConfig(2, 0.5), np.array([[0.0, 2.0], [0.0, -1.3]])),
    ]
    res = boundary_experiments(cases, n=10_000)
    one, above, h0 = res[:5], res[5:10], res[10:]
    assert all(r.converged and r.limit_on_axis for r in one)
    assert not any(r.converged for r in above)
    assert all(r.non_convergent for r in above)
    assert h0[0].origin_hit and h0[0].non_convergent
    assert all(r.stayed_in_h0 for r in h0)


def test_certify_report_is_json_clean():
    report = certify(CFG, K_SMALL, PerturbationProfile(c=0.05, mode="adversarial", m=4), n=300, runs=4,
                     sample_budget=2000, rate_budget=20_000)
    data = report.to_dict()
    json.dumps(jsonable(data), allow_nan=False)
    checks = report.checks
    assert checks["lyapunov"]["decrease"]["passed"]
    assert checks["envelope"]["kl_shaped"]
    assert checks["perturbation_invariants"]["region_violations"] == 0
    assert [c["name"] for c in data["curves"]] == ["exact", "perturbed"]
