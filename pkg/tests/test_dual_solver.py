import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ias import distributions as D
from ias import dual_solver as S
from ias import mechanisms as X
from ias import model as M

from conftest import small_instance

UNCONSTRAINED = M.LayoutConstraints()


def two_by_two() -> M.Scenario:
    items = [
        M.Item(1, M.AD, 1.0, 2.0, D.uniform(10.0)),
        M.Item(2, M.AD, 1.2, 1.0, D.piecewise_table([0.0, 2.0, 6.0], [0.0, 0.5, 1.0])),
        M.Item(3, M.ORGANIC, 1.0, 6.0),
        M.Item(4, M.ORGANIC, 1.0, 3.0),
    ]
    return M.Scenario.build([1.0, 0.6], items)


def all_organic() -> M.Scenario:
    items = [M.Item(i, M.ORGANIC, w, g) for i, w, g in [(1, 1.0, 4.0), (2, 2.0, 1.0), (3, 1.0, 3.0)]]
    return M.Scenario.build([1.0, 0.5], items)


def test_config_validation():
    with pytest.raises(ValueError):
        S.DualConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        S.DualConfig(mc_samples=0)


@pytest.mark.parametrize("lam,alpha", [(0.0, 1.0), (1.0, 0.5), (3.0, 0.25)])
def test_lambda_to_alpha(lam, alpha):
    assert S.lambda_to_alpha(lam) == alpha


def test_all_organic_volume_is_exact():
    sc = all_organic()
    expect = 4.0 * 1.0 + 3.0 * 0.5
    for lam in (0.0, 1.0, 50.0):
        assert S.estimate_volume(sc, UNCONSTRAINED, lam, 20, seed=1) == expect


def test_all_organic_solution_is_zero_multiplier():
    res = S.solve_constrained(all_organic(), UNCONSTRAINED, 5.5, S.DualConfig(mc_samples=10))
    assert (res.lam, res.alpha, res.volume) == (0.0, 1.0, 5.5)


def test_zero_floor_gives_revenue_maximizer():
    res = S.solve_constrained(two_by_two(), UNCONSTRAINED, 0.0, S.DualConfig(mc_samples=200))
    assert (res.lam, res.alpha) == (0.0, 1.0)


def test_large_multiplier_reaches_volume_ranking():
    sc = two_by_two()
    values = X.draw_values(sc, 400, 3)
    est = S.VolumeEstimator(sc, UNCONSTRAINED, values)
    assert est.volume(1e9) == pytest.approx(float(np.mean(est.gmv_samples(0.0))), rel=1e-12)


def test_feasibility_examples():
    sc = two_by_two()
    assert S.feasibility_check(sc, UNCONSTRAINED, 0.0, 300, 5)
    bound = sum(b * g for b, g in zip(sc.exposures, sorted((it.gw for it in sc.items), reverse=True)))
    assert not S.feasibility_check(sc, UNCONSTRAINED, bound + 1e-6, 300, 5)
    top = S.estimate_volume(sc, UNCONSTRAINED, math.inf, 300, 5)
    assert S.feasibility_check(sc, UNCONSTRAINED, 0.99 * top, 300, 5)


def test_infeasible_floor_names_max_volume():
    sc = two_by_two()
    with pytest.raises(S.InfeasibleThreshold) as err:
        S.solve_constrained(sc, UNCONSTRAINED, 100.0, S.DualConfig(mc_samples=50))
    assert err.value.max_volume == pytest.approx(
        S.estimate_volume(sc, UNCONSTRAINED, math.inf, 50, 0), rel=1e-12
    )
    assert "max achievable GMV" in str(err.value)


def test_matches_grid_scan():
    """Smallest multiplier on a grid of step eps/10 that meets the floor agrees within eps."""
    sc = two_by_two()
    cfg = S.DualConfig(epsilon=0.01, mc_samples=300, seed=9, with_revenue=False)
    values = X.draw_values(sc, cfg.mc_samples, cfg.seed)
    est = S.VolumeEstimator(sc, UNCONSTRAINED, values)
    lo, hi = est.volume(0.0), est.volume(math.inf)
    v0 = lo + 0.6 * (hi - lo)
    res = S.solve_constrained(sc, UNCONSTRAINED, v0, cfg)
    assert res.lam > 0
    grid = np.arange(0.0, res.lam + 2 * cfg.epsilon, cfg.epsilon / 10)
    first = next(g for g in grid if est.volume(float(g)) >= v0)
    assert abs(res.lam - first) <= cfg.epsilon
    assert res.volume >= v0


@given(st.integers(0, 10**6), st.sampled_from([M.NONE, M.BUDGET, M.ROW_SPARSE, M.COLUMN_SPARSE]))
@settings(max_examples=25)
def test_volume_monotone_in_multiplier(seed, variant):
    sc, _ = small_instance(seed)
    cons = M.LayoutConstraints() if variant == M.NONE else (
        M.LayoutConstraints(variant, 1) if variant == M.BUDGET else M.LayoutConstraints(variant, 1, min(2, sc.K))
    )
    est = S.VolumeEstimator(sc, cons, X.draw_values(sc, 100, seed))
    vols = [est.volume(lam) for lam in np.arange(0.0, 8.25, 0.25)]
    assert all(b >= a for a, b in zip(vols, vols[1:]))


@given(st.integers(0, 10**6), st.floats(0.05, 0.95))
@settings(max_examples=25)
def test_complementary_slackness(seed, frac):
    sc, _ = small_instance(seed)
    cfg = S.DualConfig(mc_samples=100, seed=seed, with_revenue=False)
    est = S.VolumeEstimator(sc, UNCONSTRAINED, X.draw_values(sc, cfg.mc_samples, cfg.seed))
    lo, hi = est.volume(0.0), est.volume(math.inf)
    v0 = lo + frac * (hi - lo)
    res = S.solve_constrained(sc, UNCONSTRAINED, v0, cfg)
    if res.lam == 0.0:
        assert res.volume >= v0
    elif res.at_cap:
        assert res.alpha == 0.0 and res.volume >= v0
    else:
        assert v0 <= res.volume <= v0 + res.step_gap
        assert res.bracket <= cfg.epsilon


def test_dual_objective_convex_on_grid():
    """R(lam) + lam * (V(lam) - V0) has nonnegative second differences beyond 3 SE."""
    sc, _ = small_instance(77)
    values = X.draw_values(sc, 4000, 1)
    lams = np.arange(0.0, 4.01, 0.5)
    v0 = 0.0
    per = []
    for lam in lams:
        res = X.batch_unconstrained(sc, values, X.lambda_to_alpha(lam))
        per.append(res.revenue() + lam * (res.gmv() - v0))
    per = np.array(per)
    d2 = per[:-2] - 2 * per[1:-1] + per[2:]
    se = d2.std(axis=1, ddof=1) / math.sqrt(values.shape[0])
    assert (d2.mean(axis=1) >= -3 * se - 1e-12).all()
