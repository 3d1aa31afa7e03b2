import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ias import distributions as D
from ias import flow_oracle as F
from ias import mechanisms as X
from ias import model as M

from conftest import small_instance

FAMILY_NAMES = list(X.FAMILIES)


def second_price_instance():
    ads = [M.Item(1, M.AD, 1.0, 0.0, D.uniform(1.0)), M.Item(2, M.AD, 1.0, 0.0, D.uniform(1.0))]
    sc = M.Scenario.build([1.0], ads + [M.Item(3, M.ORGANIC, 1.0, 0.0)])
    return sc, M.BidProfile({1: 0.8, 2: 0.6})


def spec_for(family: str, sc: M.Scenario, rng: np.random.Generator, **param) -> X.MechanismSpec:
    """Family spec with randomly drawn layout parameters that fit ``sc``."""
    K = sc.K
    if family == M.BUDGET:
        return X.MechanismSpec(family, c=int(rng.integers(1, K + 1)), **param)
    if family in (M.ROW_SPARSE, M.COLUMN_SPARSE):
        l = int(rng.integers(1, K + 1))
        return X.MechanismSpec(family, c=int(rng.integers(1, l + 1)), l=l, **param)
    return X.MechanismSpec(family, **param)


# scores


def test_organic_score():
    org = M.Item(1, M.ORGANIC, 1.0, 100.0)
    assert X.revised_score(org, 0.0, 0.5) == 50.0


def test_ad_score():
    ad = M.Item(1, M.AD, 1.0, 90.0, D.uniform(100.0))
    assert X.revised_score(ad, 11.0, 0.5) == 6.0


def test_alpha_zero_ignores_bid():
    ad = M.Item(1, M.AD, 2.0, 3.0, D.uniform(10.0))
    assert X.revised_score(ad, 0.0, 0.0) == X.revised_score(ad, 9.0, 0.0) == 6.0


def test_lambda_scores():
    ad = M.Item(1, M.AD, 1.5, 4.0, D.uniform(10.0))
    assert X.revised_score_lambda(ad, 7.0, 1.0) == X.revised_score(ad, 7.0, 0.5)
    assert X.revised_score_lambda(ad, 7.0, 0.0) == X.revised_score(ad, 7.0, 1.0)


@pytest.mark.parametrize("lam,alpha", [(0.0, 1.0), (1.0, 0.5), (3.0, 0.25), (math.inf, 0.0)])
def test_lambda_to_alpha(lam, alpha):
    assert X.lambda_to_alpha(lam) == alpha


def test_spec_requires_one_parameter():
    with pytest.raises(ValueError):
        X.MechanismSpec()
    with pytest.raises(ValueError):
        X.MechanismSpec(alpha=0.5, lam=1.0)
    with pytest.raises(ValueError):
        X.MechanismSpec("grid", alpha=0.5)


def test_singular_density_scores_minus_inf():
    ad = M.Item(1, M.AD, 1.0, 1.0, D.lognormal(0.0, 1.0))
    sc = M.Scenario.build([1.0], [ad, M.Item(2, M.ORGANIC, 1.0, 1.0)])
    assert X.item_scores(sc, M.BidProfile({1: 0.0}), 0.5)[1] == -math.inf


# allocation


def test_all_organic_volume_order():
    items = [M.Item(i, M.ORGANIC, w, g) for i, w, g in [(1, 1.0, 3.0), (2, 2.0, 2.0), (3, 1.0, 5.0)]]
    sc = M.Scenario.build([1.0, 0.5, 0.2], items)
    for alpha in (0.0, 0.3, 1.0):
        alloc = X.allocate(sc, M.BidProfile({}), X.MechanismSpec(alpha=alpha))
        assert alloc.assignment == (3, 2, 1)


def test_organic_ties_follow_volume_at_alpha_one():
    items = [M.Item(1, M.ORGANIC, 1.0, 1.0), M.Item(2, M.ORGANIC, 1.0, 7.0)]
    sc = M.Scenario.build([1.0, 0.5], items)
    assert X.allocate(sc, M.BidProfile({}), X.MechanismSpec(alpha=1.0)).assignment == (2, 1)


def test_negative_score_ad_fills_page():
    ad = M.Item(1, M.AD, 1.0, 0.0, D.uniform(1.0))
    sc = M.Scenario.build([1.0, 0.5], [ad, M.Item(2, M.ORGANIC, 1.0, 1.0)])
    alloc = X.allocate(sc, M.BidProfile({1: 0.1}), X.MechanismSpec(alpha=1.0))
    assert alloc.assignment == (2, 1)


def test_budget_zero_shows_organics():
    sc, prof = small_instance(11)
    alloc = X.allocate(sc, prof, X.MechanismSpec(M.BUDGET, alpha=1.0, c=0))
    assert all(not sc.item(i).is_ad for i in alloc.assignment)


def test_infeasible_page():
    ads = [M.Item(1, M.AD, 1.0, 1.0, D.uniform(1.0)), M.Item(2, M.AD, 1.0, 1.0, D.uniform(1.0))]
    sc = M.Scenario.build([1.0, 0.5], ads)
    with pytest.raises(M.InfeasibleAllocation):
        X.allocate(sc, M.BidProfile({1: 0.5, 2: 0.5}), X.MechanismSpec(M.BUDGET, alpha=1.0, c=1))


def test_score_override_hook():
    sc = M.Scenario.build([1.0, 0.5], [M.Item(1, M.ORGANIC, 1, 1), M.Item(2, M.ORGANIC, 1, 2)])
    alloc = X.allocate_by_scores(sc, {1: 5.0, 2: 1.0}, M.LayoutConstraints())
    assert alloc.assignment == (1, 2)


# payments


def test_second_price_payment():
    sc, prof = second_price_instance()
    spec = X.MechanismSpec(alpha=1.0)
    assert X.allocate(sc, prof, spec).assignment == (1,)
    assert X.critical_thresholds(sc, prof, spec, 1) == [pytest.approx(0.6, abs=1e-12)]
    assert X.payment(sc, prof, spec, 1) == pytest.approx(0.6, abs=1e-12)
    assert X.payment(sc, prof, spec, 2) == 0.0
    assert X.payment(sc, prof, spec, 3) == 0.0


def test_alpha_zero_payments_vanish():
    sc, prof = small_instance(5)
    out = X.run(sc, prof, X.MechanismSpec(alpha=0.0))
    assert all(p == 0.0 for p in out.payments.values())


def test_no_thresholds_when_ad_always_wins():
    ad = M.Item(1, M.AD, 1.0, 50.0, D.uniform(1.0))
    orgs = [M.Item(i, M.ORGANIC, 1.0, 1.0) for i in (2, 3)]
    sc = M.Scenario.build([1.0, 0.5], [ad, *orgs])
    prof = M.BidProfile({1: 0.3})
    spec = X.MechanismSpec(alpha=0.5)
    assert X.critical_thresholds(sc, prof, spec, 1) == []
    assert X.payment(sc, prof, spec, 1) == 0.0


def test_utility_zero_report_alpha_one():
    sc, prof = second_price_instance()
    u = X.expected_utility(sc, X.MechanismSpec(alpha=1.0), 1, 0.8, 0.0, 50, seed=3)
    assert u == 0.0


# vectorized path


@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_batch_matches_scalar(seed, alpha):
    sc, _ = small_instance(seed)
    values = X.draw_values(sc, 6, seed)
    res = X.batch_unconstrained(sc, values, alpha)
    spec = X.MechanismSpec(alpha=alpha)
    for r, row in enumerate(values):
        out = X.run(sc, X.profile_from_row(sc, row), spec)
        assert X.allocation_from_positions(sc, res.positions[r]) == out.allocation
        for a, ad in enumerate(sc.ads):
            assert res.payments[r, a] == pytest.approx(out.payments[ad.id], abs=1e-9)
        assert res.revenue()[r] == pytest.approx(out.revenue, abs=1e-9)
        assert res.gmv()[r] == pytest.approx(out.gmv, abs=1e-9)


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(FAMILY_NAMES[1:]))
def test_batch_positions_match_scalar(seed, alpha, family):
    sc, _ = small_instance(seed)
    spec = spec_for(family, sc, np.random.default_rng(seed), alpha=alpha)
    values = X.draw_values(sc, 5, seed)
    pos = X.batch_positions(sc, X.virtual_values(sc, values), alpha, spec.constraints)
    for r, row in enumerate(values):
        expect = X.allocate(sc, X.profile_from_row(sc, row), spec)
        assert X.allocation_from_positions(sc, pos[r]) == expect


# properties


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(FAMILY_NAMES))
def test_allocation_feasible_and_organics_ordered(seed, alpha, family):
    sc, prof = small_instance(seed)
    spec = spec_for(family, sc, np.random.default_rng(seed), alpha=alpha)
    alloc = X.allocate(sc, prof, spec)
    assert M.validate_allocation(sc, alloc, spec.constraints).ok
    orgs = [sc.item(i) for i in alloc.assignment if not sc.item(i).is_ad]
    assert orgs == sorted(orgs, key=lambda it: (-it.gw, it.id))


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(FAMILY_NAMES),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_exposure_monotone_in_own_bid(seed, alpha, family, q1, q2):
    sc, prof = small_instance(seed)
    spec = spec_for(family, sc, np.random.default_rng(seed), alpha=alpha)
    ad = sc.ads[seed % len(sc.ads)]
    lo, hi = sorted((q1 * ad.dist.upper, q2 * ad.dist.upper))
    x_lo = X.allocate(sc, prof.replace(ad.id, lo), spec).exposure(sc, ad.id)
    x_hi = X.allocate(sc, prof.replace(ad.id, hi), spec).exposure(sc, ad.id)
    assert x_lo <= x_hi


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(FAMILY_NAMES))
def test_payment_bounds(seed, alpha, family):
    sc, prof = small_instance(seed)
    spec = spec_for(family, sc, np.random.default_rng(seed), alpha=alpha)
    out = X.run(sc, prof, spec)
    for ad in sc.ads:
        p = out.payments[ad.id]
        assert 0.0 <= p <= prof[ad.id]
        if out.allocation.slot_of(ad.id) is None:
            assert p == 0.0


@given(st.integers(0, 10**6), st.floats(0.0, 10.0), st.sampled_from(FAMILY_NAMES))
def test_lambda_alpha_consistency(seed, lam, family):
    sc, prof = small_instance(seed)
    rng = np.random.default_rng(seed)
    by_lam = spec_for(family, sc, rng, lam=lam)
    by_alpha = X.MechanismSpec(family, alpha=1.0 / (1.0 + lam), c=by_lam.c, l=by_lam.l)
    assert X.run(sc, prof, by_lam) == X.run(sc, prof, by_alpha)


@given(st.integers(0, 10**6), st.floats(0.0, 1.0))
def test_unconstrained_allocation_is_optimal(seed, alpha):
    sc, prof = small_instance(seed)
    scores = X.item_scores(sc, prof, alpha)
    got = X.allocate(sc, prof, X.MechanismSpec(alpha=alpha))
    best = F.brute_force_by_scores(sc, scores, M.LayoutConstraints())
    assert X.objective(sc, got, scores) == X.objective(sc, best, scores)


@given(st.integers(0, 10**6), st.floats(0.0, 1.0), st.sampled_from(FAMILY_NAMES))
def test_payment_reproduces_integral_identity(seed, alpha, family):
    """p * x(b) equals b * x(b) minus the area under the own-bid exposure curve."""
    sc, prof = small_instance(seed)
    spec = spec_for(family, sc, np.random.default_rng(seed), alpha=alpha)
    ad = sc.ads[0]
    b = prof[ad.id]
    x = X.allocate(sc, prof, spec).exposure(sc, ad.id)
    if x == 0.0:
        return
    # midpoint rule on a fine grid, away from the exact thresholds
    grid = np.linspace(0.0, b, 801)
    mids = 0.5 * (grid[1:] + grid[:-1])
    area = sum(X.allocate(sc, prof.replace(ad.id, s), spec).exposure(sc, ad.id) for s in mids) * (b / 800)
    p = X.payment(sc, prof, spec, ad.id)
    assert p * x == pytest.approx(b * x - area, abs=2 * b / 800)


@given(st.integers(0, 10**6))
def test_truthful_report_individually_rational(seed):
    sc, prof = small_instance(seed, max_ads=3, max_organics=3, max_slots=3)
    ad = sc.ads[0]
    u = X.utility_samples(sc, X.MechanismSpec(alpha=0.7), ad.id, prof[ad.id], prof[ad.id], 10, seed)
    assert (u >= -1e-12).all()


def test_myerson_identity_small():
    """Expected payment revenue matches expected virtual surplus of ads."""
    sc, _ = small_instance(2024)
    values = X.draw_values(sc, 20_000, 7)
    phi = X.virtual_values(sc, values)
    res = X.batch_unconstrained(sc, values, 1.0, phi=phi)
    diff = res.revenue() - res.virtual_surplus(phi)
    assert abs(diff.mean()) <= 3 * diff.std(ddof=1) / math.sqrt(len(diff))
