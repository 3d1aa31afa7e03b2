"""Baselines, synthetic scenario generators and the experiment pipelines.

Every pipeline draws its bid profiles once and reuses them across the grid
it sweeps (common random numbers), so differences between grid points are
free of sampling noise.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr

from . import distributions as D
from . import mechanisms as X
from .dual_solver import DualConfig, InfeasibleThreshold, solve_constrained
from .model import (
    AD,
    ORGANIC,
    Allocation,
    BidProfile,
    InfeasibleAllocation,
    Item,
    LayoutConstraints,
    Outcome,
    Scenario,
    make_outcome,
)

Mapper = Callable[[Callable, Iterable], Iterable]


# configs and results


@dataclass(frozen=True)
class SyntheticFamily:
    """Desk-scale stand-in for a keyword's auction."""

    n_slots: int = 20
    decay: float = 0.25  # beta_k = 1 / (1 + decay * (k - 1))
    n_ads: int = 12
    n_organics: int = 30
    volume_mu: float = 3.5
    volume_sigma: float = 0.6
    value_mu: float = 0.3
    value_sigma: float = 0.8


@dataclass(frozen=True)
class WeightDistribution:
    """Quality factor ``scale * Beta(a, b)``; the defaults have mean 1."""

    a: float = 2.0
    b: float = 5.0
    scale: float = 3.5

    def ppf(self, u):
        return self.scale * stats.beta.ppf(u, self.a, self.b)

    def sample(self, rng: np.random.Generator, size=None):
        return self.scale * rng.beta(self.a, self.b, size)


@dataclass
class ExperimentConfig:
    experiment: int = 1
    alphas: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(11))
    v0_points: int = 11
    v0_grid: tuple[float, ...] | None = None
    m_list: tuple[int, ...] = tuple(range(1, 9))
    r_list: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    reps: int = 5000
    mc_samples: int = 500
    seed: int = 0
    family: str = X.UNCONSTRAINED
    c: int | None = None
    l: int | None = None
    out: str | None = None

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.experiment == 1 and not self.alphas:
            raise ValueError("alpha grid is empty")
        if self.experiment in (3, 4) and not self.m_list:
            raise ValueError("m list is empty")
        if self.experiment == 4 and not self.r_list:
            raise ValueError("correlation list is empty")

    @property
    def constraints(self) -> LayoutConstraints:
        return X.MechanismSpec(self.family, alpha=1.0, c=self.c, l=self.l).constraints

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class CurvePoint:
    abscissa: float
    mean_revenue: float
    se_revenue: float
    mean_gmv: float
    se_gmv: float
    extra: dict = field(default_factory=dict)


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(np.mean(x)), se


# scenario generators


def synthetic_scenario(
    seed: int | np.random.Generator, family: SyntheticFamily = SyntheticFamily()
) -> Scenario:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    K = family.n_slots
    beta = [1.0 / (1.0 + family.decay * k) for k in range(K)]
    vol = rng.lognormal(family.volume_mu, family.volume_sigma, family.n_ads + family.n_organics)
    dist = D.lognormal(family.value_mu, family.value_sigma)
    items = [Item(i + 1, AD, 1.0, float(vol[i]), dist) for i in range(family.n_ads)]
    items += [
        Item(family.n_ads + j + 1, ORGANIC, 1.0, float(vol[family.n_ads + j]))
        for j in range(family.n_organics)
    ]
    return Scenario.build(beta, items)


def random_small_instance(
    rng: np.random.Generator,
    max_ads: int = 4,
    max_organics: int = 4,
    max_slots: int = 4,
    organics_cover: bool = True,
) -> tuple[Scenario, BidProfile]:
    """Small random instance with uniform value laws and a sampled bid profile.

    With ``organics_cover`` there are at least K organics, so every layout
    variant can fill the page whatever the ad count.
    """
    K = int(rng.integers(1, max_slots + 1))
    n1 = int(rng.integers(1, max_ads + 1))
    n2 = int(rng.integers(K if organics_cover else max(0, K - n1), max_organics + 1))
    ads = [
        Item(i + 1, AD, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.0, 10.0)),
             D.uniform(float(rng.uniform(1.0, 10.0))))
        for i in range(n1)
    ]
    orgs = [
        Item(n1 + j + 1, ORGANIC, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.0, 10.0)))
        for j in range(n2)
    ]
    beta = np.sort(rng.uniform(0.1, 1.0, K))[::-1]
    scenario = Scenario.build([float(b) for b in beta], ads + orgs)
    profile = BidProfile({a.id: float(rng.uniform(0.0, a.dist.upper)) for a in ads})
    return scenario, profile


# baselines


def _organic_fill(scenario: Scenario, taken: list[int]) -> list[int]:
    orgs = sorted(scenario.organics, key=lambda it: (-it.gw, it.id))
    need = scenario.K - len(taken)
    if len(orgs) < need:
        raise InfeasibleAllocation(f"{len(orgs)} organics cannot fill {need} slots")
    return taken + [it.id for it in orgs[:need]]


def gsp_fixed_slots(scenario: Scenario, profile: BidProfile, m: int) -> Outcome:
    """Top ``m`` slots auctioned to ads by bid at next-price; organics fill the rest."""
    ads = scenario.ads
    if m > len(ads):
        raise ValueError(f"m={m} exceeds the {len(ads)} ads")
    if m > scenario.K:
        raise ValueError(f"m={m} exceeds the {scenario.K} slots")
    ranked = sorted(ads, key=lambda a: (-profile[a.id], -a.gw, a.id))
    winners = ranked[:m]
    pays = {a.id: 0.0 for a in ads}
    for j, a in enumerate(winners):
        pays[a.id] = profile[ranked[j + 1].id] if j + 1 < len(ranked) else 0.0
    alloc = Allocation(tuple(_organic_fill(scenario, [a.id for a in winners])))
    return make_outcome(scenario, alloc, pays)


def heuristic_scores(scenario: Scenario, profile: BidProfile) -> dict[int, float]:
    return {
        it.id: 0.5 * (profile[it.id] if it.is_ad else 0.0) + 0.5 * it.volume for it in scenario.items
    }


def integrated_heuristic(scenario: Scenario, profile: BidProfile) -> Outcome:
    """Rank every item by ``0.5 * bid + 0.5 * volume``; ads pay the price that keeps their slot."""
    scores = heuristic_scores(scenario, profile)
    alloc = X.allocate_by_scores(scenario, scores, LayoutConstraints())
    order = sorted(scenario.items, key=lambda it: X.tie_key(it, scores[it.id]))
    pays = {a.id: 0.0 for a in scenario.ads}
    for pos, item_id in enumerate(alloc.assignment):
        it = scenario.item(item_id)
        if not it.is_ad:
            continue
        nxt = scores[order[pos + 1].id] if pos + 1 < len(order) else 0.0
        pays[it.id] = min(max(2.0 * nxt - it.volume, 0.0), profile[it.id])
    return make_outcome(scenario, alloc, pays)


def _reserve(dist: D.ValueDistribution) -> float:
    return D.inverse_virtual_value(dist, 0.0).value


def myerson_fixed_slots(scenario: Scenario, profile: BidProfile, m: int) -> Outcome:
    """Top ``m`` slots to ads by ``w * phi`` with reserve ``phi >= 0``; organics fill the rest."""
    if m > scenario.K:
        raise ValueError(f"m={m} exceeds the {scenario.K} slots")
    beta = scenario.exposures
    phi = {a.id: X._score(a, profile[a.id], 1.0) / a.weight for a in scenario.ads}
    eligible = [a for a in scenario.ads if phi[a.id] >= 0.0]
    ranked = sorted(eligible, key=lambda a: X.tie_key(a, a.weight * phi[a.id]))
    winners = ranked[:m]
    pays = {a.id: 0.0 for a in scenario.ads}
    for q, a in enumerate(winners):
        others = [o for o in ranked if o.id != a.id]
        reserve = _reserve(a.dist)
        px = 0.0
        for j in range(q + 1, m + 1):
            drop = beta[j - 1] - (beta[j] if j < m else 0.0)
            t = reserve
            if j - 1 < len(others):
                o = others[j - 1]
                t = max(reserve, D.inverse_virtual_value(a.dist, o.weight * phi[o.id] / a.weight).value)
            px += drop * t
        pays[a.id] = min(px / beta[q], profile[a.id])
    alloc = Allocation(tuple(_organic_fill(scenario, [a.id for a in winners])))
    return make_outcome(scenario, alloc, pays)


@dataclass
class BaselineBatch:
    revenue: np.ndarray
    gmv: np.ndarray


def myerson_fixed_slots_batch(
    scenario: Scenario,
    values: np.ndarray,
    m: int,
    weights: np.ndarray | None = None,
    phi: np.ndarray | None = None,
) -> BaselineBatch:
    """Vectorized :func:`myerson_fixed_slots` over the rows of ``values``."""
    R = values.shape[0]
    K = scenario.K
    if m > K:
        raise ValueError(f"m={m} exceeds the {K} slots")
    W = np.asarray(X.weight_matrix(scenario, R, weights))
    ad_cols = np.array([k for k, it in enumerate(scenario.items) if it.is_ad], dtype=int)
    org_cols = np.array([k for k, it in enumerate(scenario.items) if not it.is_ad], dtype=int)
    g = np.array([it.volume for it in scenario.items])
    ids = np.array([it.id for it in scenario.items])
    beta = np.array(scenario.exposures)
    if phi is None:
        phi = X.virtual_values(scenario, values)
    n1 = ad_cols.size
    wa = W[:, ad_cols]
    with np.errstate(invalid="ignore"):
        s = np.where(phi >= 0.0, wa * phi, -np.inf)
    order = np.lexsort(
        (np.broadcast_to(ids[ad_cols], (R, n1)), -(g[ad_cols] * wa), -s), axis=-1
    )
    rows = np.arange(R)[:, None]
    rank = np.empty((R, n1), dtype=int)
    rank[rows, order] = np.arange(n1)
    eligible = np.isfinite(s)
    shown = np.minimum(eligible.sum(axis=1), m)
    placed = eligible & (rank < m)
    sorted_s = np.concatenate([np.take_along_axis(s, order, axis=1), np.full((R, 1), -np.inf)], axis=1)
    mm = min(m, K)
    delta = beta[:mm] - np.append(beta[1:mm], 0.0)
    j_idx = np.arange(mm)[None, :]
    revenue = np.zeros(R)
    gmv = np.zeros(R)
    for a, col in enumerate(ad_cols):
        ad = scenario.items[col]
        q = np.where(placed[:, a], rank[:, a], K)[:, None]
        comp = sorted_s[rows, np.minimum(j_idx + (j_idx >= q), n1)]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = D.inverse_virtual_value_array(ad.dist, comp / wa[:, a][:, None])
        t = np.maximum(t, _reserve(ad.dist))
        t = np.minimum(t, values[:, a][:, None])
        px = (delta[None, :] * t * (j_idx >= q)).sum(axis=1)
        x = np.where(placed[:, a], beta[np.minimum(rank[:, a], K - 1)], 0.0)
        revenue += np.where(placed[:, a], px * wa[:, a], 0.0)
        gmv += g[col] * wa[:, a] * x
    # organics fill slots shown .. K-1 in descending g*w order
    wo = W[:, org_cols]
    gw_o = g[org_cols] * wo
    o_order = np.lexsort((np.broadcast_to(ids[org_cols], gw_o.shape), -gw_o), axis=-1)
    if R and org_cols.size < K - int(shown.min()):
        raise InfeasibleAllocation("not enough organics to fill the page")
    gw_sorted = np.take_along_axis(gw_o, o_order, axis=1)
    for j in range(min(K, org_cols.size)):
        slot = shown + j
        ok = slot < K
        gmv += np.where(ok, gw_sorted[:, j] * beta[np.minimum(slot, K - 1)], 0.0)
    return BaselineBatch(revenue, gmv)


# experiments


def _map(mapper: Mapper | None):
    return mapper if mapper is not None else map


def sweep_alpha(
    scenario: Scenario,
    alphas: Sequence[float],
    reps: int,
    seed: int,
    mapper: Mapper | None = None,
) -> list[CurvePoint]:
    """Experiment 1: revenue and GMV of the unconstrained mechanism along an alpha grid."""
    values = X.draw_values(scenario, reps, seed)
    phi = X.virtual_values(scenario, values)

    def cell(alpha: float) -> CurvePoint:
        res = X.batch_unconstrained(scenario, values, alpha, phi=phi)
        rev, rev_se = mean_se(res.revenue())
        gmv, gmv_se = mean_se(res.gmv())
        vs, vs_se = mean_se(res.virtual_surplus(phi))
        return CurvePoint(alpha, rev, rev_se, gmv, gmv_se, {"virtual_surplus": vs, "se_virtual_surplus": vs_se})

    return list(_map(mapper)(cell, alphas))


def max_volume(scenario: Scenario, constraints: LayoutConstraints, values: np.ndarray) -> float:
    phi = X.virtual_values(scenario, values)
    return float(np.mean(X.batch_gmv(scenario, X.batch_positions(scenario, phi, 0.0, constraints))))


@dataclass
class ThresholdPoint:
    v0: float
    alpha: float
    lam: float
    feasible: bool
    volume: float
    revenue: float | None
    at_cap: bool


def sweep_threshold(
    scenario: Scenario,
    v0_grid: Sequence[float] | None,
    config: DualConfig = DualConfig(),
    constraints: LayoutConstraints = LayoutConstraints(),
    points: int = 11,
    mapper: Mapper | None = None,
) -> list[ThresholdPoint]:
    """Experiment 2: alpha* along a grid of volume floors, all solves on one sample.

    Without an explicit grid, ``points`` floors run evenly from 0 to the
    max achievable volume on that sample.
    """
    values = X.draw_values(scenario, config.mc_samples, config.seed)
    if v0_grid is None:
        top = max_volume(scenario, constraints, values)
        v0_grid = [top * k / (points - 1) for k in range(points)] if points > 1 else [top]

    def cell(v0: float) -> ThresholdPoint:
        try:
            res = solve_constrained(scenario, constraints, v0, config, values=values)
        except InfeasibleThreshold:
            return ThresholdPoint(v0, math.nan, math.nan, False, math.nan, None, False)
        return ThresholdPoint(v0, res.alpha, res.lam, True, res.volume, res.revenue, res.at_cap)

    return list(_map(mapper)(cell, v0_grid))


def compare_baseline(
    scenario: Scenario,
    m_list: Sequence[int],
    reps: int,
    seed: int,
    dual: DualConfig | None = None,
    weights: np.ndarray | None = None,
    values: np.ndarray | None = None,
    mapper: Mapper | None = None,
) -> list[CurvePoint]:
    """Experiment 3: fixed-slot Myerson baseline against the volume-constrained mechanism.

    For each ``m`` the baseline's mean GMV becomes the volume floor, and the
    floor is solved on the same ``reps`` profiles the baseline ran on, so
    the two revenues are paired draw by draw.
    """
    if values is None:
        values = X.draw_values(scenario, reps, seed)
    dual = dual or DualConfig(mc_samples=reps, seed=seed, with_revenue=False)
    phi = X.virtual_values(scenario, values)

    def cell(m: int) -> CurvePoint:
        base = myerson_fixed_slots_batch(scenario, values, m, weights, phi)
        v0 = float(np.mean(base.gmv))
        res = solve_constrained(
            scenario, LayoutConstraints(), v0, dual, values=values, weights=weights, phi=phi
        )
        ias = X.batch_unconstrained(scenario, values, res.alpha, weights=weights, phi=phi)
        rev, gmv = ias.revenue(), ias.gmv()
        gap, gap_se = mean_se(rev - base.revenue)
        r_m, r_se = mean_se(rev)
        g_m, g_se = mean_se(gmv)
        b_r, b_r_se = mean_se(base.revenue)
        b_g, b_g_se = mean_se(base.gmv)
        return CurvePoint(m, r_m, r_se, g_m, g_se, {
            "base_revenue": b_r, "se_base_revenue": b_r_se,
            "base_gmv": b_g, "se_base_gmv": b_g_se,
            "v0": v0, "gap": gap, "se_gap": gap_se,
            "alpha_star": res.alpha, "lambda_star": res.lam,
        })

    return list(_map(mapper)(cell, m_list))


def correlated_samples(
    value_dist: D.ValueDistribution,
    weight_dist: WeightDistribution,
    r: float,
    rng: np.random.Generator,
    size,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-copula draws of ``(value, weight)`` with normal-score correlation ``r``.

    ``r = 1`` and ``r = -1`` give the exact comonotone and antimonotone couplings.
    """
    if not -1.0 <= r <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    zw = r * z1 + math.sqrt(1.0 - r * r) * z2
    eps = 1e-12
    u_v = np.clip(ndtr(z1), eps, 1.0 - eps)
    u_w = np.clip(ndtr(zw), eps, 1.0 - eps)
    return D.quantile(value_dist, u_v), weight_dist.ppf(u_w)


def correlated_sample(value_dist, weight_dist, r: float, rng: np.random.Generator) -> tuple[float, float]:
    v, w = correlated_samples(value_dist, weight_dist, r, rng, None)
    return float(v), float(w)


def correlated_profiles(
    scenario: Scenario, r: float, reps: int, rng: np.random.Generator,
    weight_dist: WeightDistribution = WeightDistribution(),
) -> tuple[np.ndarray, np.ndarray]:
    """``(reps, n1)`` values and ``(reps, n)`` weights; ad weights follow their values."""
    n = len(scenario.items)
    values = np.zeros((reps, len(scenario.ads)))
    weights = np.zeros((reps, n))
    a = 0
    for col, it in enumerate(scenario.items):
        if it.is_ad:
            values[:, a], weights[:, col] = correlated_samples(it.dist, weight_dist, r, rng, reps)
            a += 1
        else:
            weights[:, col] = weight_dist.ppf(np.clip(rng.uniform(size=reps), 1e-12, 1 - 1e-12))
    return values, weights


def run_experiment4(
    scenario: Scenario,
    r_list: Sequence[float],
    m_list: Sequence[int],
    reps: int,
    seed: int,
    dual: DualConfig | None = None,
    mapper: Mapper | None = None,
) -> list[CurvePoint]:
    """Experiment 3 repeated per value-weight correlation; one profile sample per ``r``."""
    dual = dual or DualConfig(mc_samples=reps, seed=seed, with_revenue=False)

    def cell(args) -> list[CurvePoint]:
        k, r = args
        values, weights = correlated_profiles(scenario, r, reps, np.random.default_rng([seed, k]))
        pts = compare_baseline(scenario, m_list, reps, seed, dual, weights=weights, values=values)
        for p in pts:
            p.extra = {"r": r, **p.extra}
        return pts

    out: list[CurvePoint] = []
    for pts in _map(mapper)(cell, list(enumerate(r_list))):
        out.extend(pts)
    return out


# Example 1


EXAMPLE1_SLOTS = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]
EXAMPLE1_ADS = [(1, 70.0, 15.0), (2, 75.0, 12.0), (3, 90.0, 11.0)]  # id, volume, bid
EXAMPLE1_ORGANICS = [(4, 100.0), (5, 90.0), (6, 85.0), (7, 80.0), (8, 75.0), (9, 70.0), (10, 68.0)]
EXAMPLE1_NAMES = {1: "A1", 2: "A2", 3: "A3", **{i: f"O{i - 3}" for i in range(4, 11)}}


def example1_scenario() -> tuple[Scenario, BidProfile]:
    """Three ads and seven organics on ten slots; ad values on a nominal uniform[0, 20]."""
    dist = D.uniform(20.0)
    items = [Item(i, AD, 1.0, g, dist) for i, g, _ in EXAMPLE1_ADS]
    items += [Item(i, ORGANIC, 1.0, g) for i, g in EXAMPLE1_ORGANICS]
    return Scenario.build(EXAMPLE1_SLOTS, items), BidProfile({i: b for i, _, b in EXAMPLE1_ADS})


def outcome_json(scenario: Scenario, outcome: Outcome, names: dict[int, str] | None = None) -> dict:
    names = names or {}
    page = []
    for k, item_id in enumerate(outcome.allocation.assignment, start=1):
        it = scenario.item(item_id)
        ctr = it.weight * scenario.slots[k - 1].exposure
        row = {"slot": k, "id": item_id, "kind": it.kind, "ctr": ctr, "gmv": it.volume * ctr}
        if item_id in names:
            row["name"] = names[item_id]
        if it.is_ad:
            row["payment"] = outcome.payment(item_id)
            row["actual_payment"] = outcome.payment(item_id) * ctr
        page.append(row)
    return {"page": page, "revenue": outcome.revenue, "gmv": outcome.gmv}


def example1(m: int = 3) -> dict:
    scenario, profile = example1_scenario()
    gsp = gsp_fixed_slots(scenario, profile, m)
    heur = integrated_heuristic(scenario, profile)
    return {
        "gsp": outcome_json(scenario, gsp, EXAMPLE1_NAMES),
        "heuristic": outcome_json(scenario, heur, EXAMPLE1_NAMES),
    }


# CSV output


BASE_COLUMNS = ["abscissa", "mean_revenue", "se_revenue", "mean_gmv", "se_gmv"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def curve_csv(points: Sequence[CurvePoint], config: dict) -> str:
    extra_cols: list[str] = []
    for p in points:
        for key in p.extra:
            if key not in extra_cols:
                extra_cols.append(key)
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BASE_COLUMNS + extra_cols)
    for p in points:
        base = [p.abscissa, p.mean_revenue, p.se_revenue, p.mean_gmv, p.se_gmv]
        writer.writerow([_fmt(v) for v in base] + [_fmt(p.extra.get(k, "")) for k in extra_cols])
    return buf.getvalue()


def threshold_points_to_curve(points: Sequence[ThresholdPoint]) -> list[CurvePoint]:
    nan = math.nan
    return [
        CurvePoint(
            p.v0, p.revenue if p.revenue is not None else nan, nan, p.volume, nan,
            {"alpha_star": p.alpha, "lambda_star": p.lam, "feasible": int(p.feasible), "at_cap": int(p.at_cap)},
        )
        for p in points
    ]
