"""Truthful integrated-page mechanisms.

All four families rank items by the revised virtual value

    psi_i(v_i) = (alpha * phi_i(v_i) + (1 - alpha) * g_i) * w_i

and fill slots greedily from the top; they differ only in when an ad may
take a slot:

* ``unconstrained``: always;
* ``budget``: while fewer than ``c`` ads are on the page;
* ``row-sparse``: while the current aligned block of ``l`` slots holds
  fewer than ``c`` ads;
* ``column-sparse``: while the previous ``l - 1`` slots hold fewer than
  ``c`` ads.

Payments are critical-value (Myerson) payments, evaluated exactly from the
piecewise-constant exposure an ad receives as a function of its own bid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import distributions as D
from .model import (
    BUDGET,
    COLUMN_SPARSE,
    NONE,
    ROW_SPARSE,
    Allocation,
    BidProfile,
    InfeasibleAllocation,
    Item,
    LayoutConstraints,
    Outcome,
    Scenario,
    make_outcome,
)

UNCONSTRAINED = "unconstrained"
FAMILIES = {UNCONSTRAINED: NONE, BUDGET: BUDGET, ROW_SPARSE: ROW_SPARSE, COLUMN_SPARSE: COLUMN_SPARSE}
TIE_BREAK = "higher g*w, then lower id"


def lambda_to_alpha(lam: float) -> float:
    if lam < 0:
        raise ValueError("multiplier must be non-negative")
    if math.isinf(lam):
        return 0.0
    return 1.0 / (1.0 + lam)


@dataclass(frozen=True)
class MechanismSpec:
    """Mechanism family plus its trade-off parameter.

    Exactly one of ``alpha`` and ``lam`` is given; ``lam`` is converted with
    ``alpha = 1 / (1 + lam)`` so that both parameterizations rank identically.
    """

    family: str = UNCONSTRAINED
    alpha: float | None = None
    lam: float | None = None
    c: int | None = None
    l: int | None = None
    tie_break: str = TIE_BREAK

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown mechanism family {self.family!r}")
        if (self.alpha is None) == (self.lam is None):
            raise ValueError("give exactly one of alpha and lam")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")
        self.constraints  # validates c and l

    @property
    def coefficient(self) -> float:
        return self.alpha if self.alpha is not None else lambda_to_alpha(self.lam)

    @property
    def constraints(self) -> LayoutConstraints:
        return LayoutConstraints(FAMILIES[self.family], self.c, self.l)

    @classmethod
    def for_constraints(cls, constraints: LayoutConstraints, **param) -> "MechanismSpec":
        family = {v: f for f, v in FAMILIES.items()}[constraints.variant]
        return cls(family, c=constraints.c, l=constraints.l, **param)


# scores


def revised_score(item: Item, bid: float, alpha: float) -> float:
    if not item.is_ad or alpha == 0.0:
        return (1.0 - alpha) * item.volume * item.weight
    phi = D.virtual_value(item.dist, bid)
    return (alpha * phi + (1.0 - alpha) * item.volume) * item.weight


def revised_score_lambda(item: Item, bid: float, lam: float) -> float:
    return revised_score(item, bid, lambda_to_alpha(lam))


def _score(item: Item, bid: float, alpha: float) -> float:
    try:
        return revised_score(item, bid, alpha)
    except D.SingularityError:
        return -math.inf


def item_scores(scenario: Scenario, profile: BidProfile, alpha: float) -> dict[int, float]:
    return {
        it.id: _score(it, profile[it.id] if it.is_ad else 0.0, alpha) for it in scenario.items
    }


def tie_key(item: Item, score: float) -> tuple:
    return (-score, -item.gw, item.id)


def allocate_by_scores(
    scenario: Scenario, scores: Mapping[int, float], constraints: LayoutConstraints
) -> Allocation:
    """Greedy slot filling by descending score under ``constraints``.

    This is also the score-override hook: callers may pass any rank key.
    """
    order = sorted(scenario.items, key=lambda it: tie_key(it, scores[it.id]))
    K = scenario.K
    variant, c, l = constraints.variant, constraints.c, constraints.l
    placed: list[int] = []
    ad_flags: list[bool] = []
    used: set[int] = set()
    for k in range(K):
        if variant == NONE:
            ad_ok = True
        elif variant == BUDGET:
            ad_ok = sum(ad_flags) < c
        elif variant == ROW_SPARSE:
            ad_ok = sum(ad_flags[(k // l) * l : k]) < c
        else:
            ad_ok = sum(ad_flags[max(0, k - l + 1) : k]) < c
        for it in order:
            if it.id in used or (it.is_ad and not ad_ok):
                continue
            used.add(it.id)
            placed.append(it.id)
            ad_flags.append(it.is_ad)
            break
        else:
            raise InfeasibleAllocation(
                f"no admissible item for slot {k + 1} under {variant} constraints"
            )
    return Allocation(tuple(placed))


def allocate(scenario: Scenario, profile: BidProfile, spec: MechanismSpec) -> Allocation:
    scores = item_scores(scenario, profile, spec.coefficient)
    return allocate_by_scores(scenario, scores, spec.constraints)


def objective(scenario: Scenario, alloc: Allocation, scores: Mapping[int, float]) -> float:
    """Score-weighted exposure, summed in slot order."""
    return sum(scores[i] * s.exposure for i, s in zip(alloc.assignment, scenario.slots))


# own-bid exposure curve and payments


@dataclass(frozen=True)
class ExposureCurve:
    """Exposure of one ad as a step function of its own bid on ``[0, upper]``.

    ``levels[j]`` holds on ``(breaks[j-1], breaks[j])`` with ``breaks[-1]``
    and ``breaks[len]`` read as 0 and ``upper``.
    """

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    def at(self, bid: float) -> float:
        j = int(np.searchsorted(self.breaks, bid, side="right"))
        return self.levels[j]


def _own_exposure(scenario, scores, constraints, ad: Item, alpha: float, bid: float) -> float:
    trial = dict(scores)
    trial[ad.id] = _score(ad, bid, alpha)
    return allocate_by_scores(scenario, trial, constraints).exposure(scenario, ad.id)


def _crossings(scenario: Scenario, scores: Mapping[int, float], ad: Item, alpha: float) -> list[float]:
    if alpha == 0.0:
        return []
    upper = ad.dist.upper
    out = set()
    for other in scenario.items:
        y = scores[other.id]
        if other.id == ad.id or not math.isfinite(y):
            continue
        target = (y / ad.weight - (1.0 - alpha) * ad.volume) / alpha
        t, clamped = D.inverse_virtual_value(ad.dist, target)
        if not clamped and 0.0 < t < upper:
            out.add(t)
    return sorted(out)


def exposure_curve(
    scenario: Scenario, profile: BidProfile, spec: MechanismSpec, ad_id: int
) -> ExposureCurve:
    ad = scenario.item(ad_id)
    alpha = spec.coefficient
    constraints = spec.constraints
    scores = item_scores(scenario, profile, alpha)
    cands = _crossings(scenario, scores, ad, alpha)
    edges = [0.0, *cands, ad.dist.upper]
    levels = [
        _own_exposure(scenario, scores, constraints, ad, alpha, 0.5 * (a + b))
        for a, b in zip(edges, edges[1:])
    ]
    breaks, kept = [], [levels[0]]
    for t, lvl in zip(cands, levels[1:]):
        if lvl != kept[-1]:
            breaks.append(t)
            kept.append(lvl)
    return ExposureCurve(tuple(breaks), tuple(kept))


def critical_thresholds(
    scenario: Scenario, profile: BidProfile, spec: MechanismSpec, ad_id: int
) -> list[float]:
    """Own-bid values at which the ad's exposure changes."""
    return list(exposure_curve(scenario, profile, spec, ad_id).breaks)


def _payment_from_curve(curve: ExposureCurve, bid: float, exposure: float) -> float:
    if exposure <= 0.0:
        return 0.0
    # p * x(b) = sum over jumps below b of (jump size * jump location) + b * (x(b) - x(b-))
    total = 0.0
    below = curve.levels[0]
    for t, lvl in zip(curve.breaks, curve.levels[1:]):
        if t >= bid:
            break
        total += (lvl - below) * t
        below = lvl
    total += bid * (exposure - below)
    return min(max(total / exposure, 0.0), bid)


def payment(scenario: Scenario, profile: BidProfile, spec: MechanismSpec, ad_id: int) -> float:
    """Per-click critical-value payment of ``ad_id``."""
    ad = scenario.item(ad_id)
    if not ad.is_ad:
        return 0.0
    x = allocate(scenario, profile, spec).exposure(scenario, ad_id)
    if x == 0.0:
        return 0.0
    curve = exposure_curve(scenario, profile, spec, ad_id)
    return _payment_from_curve(curve, profile[ad_id], x)


def run(scenario: Scenario, profile: BidProfile, spec: MechanismSpec) -> Outcome:
    """Allocation plus payments for every placed ad."""
    alloc = allocate(scenario, profile, spec)
    pays = {}
    for ad in scenario.ads:
        x = alloc.exposure(scenario, ad.id)
        if x > 0:
            curve = exposure_curve(scenario, profile, spec, ad.id)
            pays[ad.id] = _payment_from_curve(curve, profile[ad.id], x)
        else:
            pays[ad.id] = 0.0
    return make_outcome(scenario, alloc, pays)


def sample_profile(scenario: Scenario, rng: np.random.Generator) -> BidProfile:
    return BidProfile({ad.id: float(D.sample(ad.dist, rng)) for ad in scenario.ads})


def utility_samples(
    scenario: Scenario,
    spec: MechanismSpec,
    ad_id: int,
    true_value: float,
    reported: float,
    mc_samples: int,
    seed: int,
) -> np.ndarray:
    """Per-draw utilities ``(v - p) * w * x`` over opponent draws.

    Opponent bids are drawn up front from ``seed`` in scenario order, so any
    two calls with the same seed face identical opponents.
    """
    ad = scenario.item(ad_id)
    rng = np.random.default_rng(seed)
    others = [a for a in scenario.ads if a.id != ad_id]
    draws = {a.id: D.sample(a.dist, rng, mc_samples) for a in others}
    out = np.empty(mc_samples)
    for r in range(mc_samples):
        bids = {a.id: float(draws[a.id][r]) for a in others}
        bids[ad_id] = reported
        profile = BidProfile(bids)
        x = allocate(scenario, profile, spec).exposure(scenario, ad_id)
        p = payment(scenario, profile, spec, ad_id) if x > 0 else 0.0
        out[r] = (true_value - p) * ad.weight * x
    return out


def expected_utility(
    scenario: Scenario,
    spec: MechanismSpec,
    ad_id: int,
    true_value: float,
    reported: float,
    mc_samples: int,
    seed: int,
) -> float:
    return float(
        np.mean(utility_samples(scenario, spec, ad_id, true_value, reported, mc_samples, seed))
    )


# vectorized unconstrained family


@dataclass
class BatchResult:
    """Outcomes of one mechanism over ``R`` bid profiles.

    Columns follow ``scenario.items`` order; ``payments`` has one column per
    ad in ``scenario.ads`` order.
    """

    scores: np.ndarray  # (R, n)
    positions: np.ndarray  # (R, n), 0-based slot or -1
    exposures: np.ndarray  # (R, n)
    payments: np.ndarray | None  # (R, n1)
    weights: np.ndarray  # (R, n)
    volumes: np.ndarray  # (n,)
    ad_columns: np.ndarray  # (n1,)

    def gmv(self) -> np.ndarray:
        return (self.volumes * self.weights * self.exposures).sum(axis=1)

    def revenue(self) -> np.ndarray:
        if self.payments is None:
            raise ValueError("payments were not computed")
        cols = self.ad_columns
        return (self.payments * self.weights[:, cols] * self.exposures[:, cols]).sum(axis=1)

    def virtual_surplus(self, phi: np.ndarray) -> np.ndarray:
        cols = self.ad_columns
        contrib = np.where(self.exposures[:, cols] > 0, phi * self.weights[:, cols] * self.exposures[:, cols], 0.0)
        return contrib.sum(axis=1)


def weight_matrix(scenario: Scenario, R: int, weights: np.ndarray | None = None) -> np.ndarray:
    if weights is not None:
        return np.asarray(weights, dtype=float)
    return np.broadcast_to(np.array([it.weight for it in scenario.items]), (R, len(scenario.items)))


def virtual_values(scenario: Scenario, values: np.ndarray) -> np.ndarray:
    """Virtual values of the ad columns of a ``(R, n1)`` value matrix."""
    return np.column_stack(
        [D.virtual_value_array(ad.dist, values[:, a]) for a, ad in enumerate(scenario.ads)]
    ) if scenario.ads else np.zeros((values.shape[0], 0))


def batch_scores(
    scenario: Scenario, phi: np.ndarray, alpha: float, weights: np.ndarray
) -> np.ndarray:
    R = weights.shape[0]
    g = np.array([it.volume for it in scenario.items])
    scores = np.broadcast_to((1.0 - alpha) * g, (R, g.size)).copy()
    if alpha > 0.0:
        cols = [n for n, it in enumerate(scenario.items) if it.is_ad]
        with np.errstate(invalid="ignore"):
            scores[:, cols] = alpha * phi + (1.0 - alpha) * g[cols]
    return scores * weights


def rank_order(scenario: Scenario, scores: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-row item order under the tie-break policy, best first."""
    R, n = scores.shape
    g = np.array([it.volume for it in scenario.items])
    ids = np.broadcast_to(np.array([it.id for it in scenario.items]), (R, n))
    return np.lexsort((ids, -(g * weights), -scores), axis=-1)


def batch_unconstrained(
    scenario: Scenario,
    values: np.ndarray,
    alpha: float,
    weights: np.ndarray | None = None,
    with_payments: bool = True,
    phi: np.ndarray | None = None,
) -> BatchResult:
    """Run the unconstrained mechanism on every row of ``values`` (shape ``(R, n1)``)."""
    values = np.asarray(values, dtype=float)
    R = values.shape[0]
    n, K = len(scenario.items), scenario.K
    W = weight_matrix(scenario, R, weights)
    if phi is None:
        phi = virtual_values(scenario, values)
    scores = batch_scores(scenario, phi, alpha, W)
    order = rank_order(scenario, scores, W)
    rows = np.arange(R)[:, None]
    positions = np.full((R, n), -1)
    positions[rows, order[:, :K]] = np.arange(K)
    beta = np.array(scenario.exposures)
    exposures = np.where(positions >= 0, beta[np.maximum(positions, 0)], 0.0)
    ad_cols = np.array([k for k, it in enumerate(scenario.items) if it.is_ad], dtype=int)
    pays = None
    if with_payments:
        pays = np.zeros((R, len(ad_cols)))
        if alpha > 0.0 and len(ad_cols):
            sorted_scores = np.concatenate(
                [np.take_along_axis(scores, order, axis=1), np.full((R, 1), -np.inf)], axis=1
            )
            g = np.array([it.volume for it in scenario.items])
            delta = beta - np.append(beta[1:], 0.0)
            r_idx = np.arange(K)[None, :]
            for a, col in enumerate(ad_cols):
                ad = scenario.items[col]
                q = positions[:, col]
                placed = q >= 0
                if not placed.any():
                    continue
                qq = np.where(placed, q, K)[:, None]
                # r-th best competitor skips the ad's own rank
                comp = sorted_scores[rows, np.minimum(r_idx + (r_idx >= qq), n)]
                w_i = W[:, col][:, None]
                with np.errstate(invalid="ignore"):
                    target = (comp / w_i - (1.0 - alpha) * g[col]) / alpha
                t = D.inverse_virtual_value_array(ad.dist, target)
                t = np.minimum(t, values[:, a][:, None])
                beaten = r_idx >= qq
                px = (delta[None, :] * t * beaten).sum(axis=1)
                x = exposures[:, col]
                pays[:, a] = np.where(placed, px / np.where(x > 0, x, 1.0), 0.0)
    return BatchResult(
        scores, positions, exposures, pays, np.asarray(W),
        np.array([it.volume for it in scenario.items]), ad_cols,
    )


def profile_from_row(scenario: Scenario, row: np.ndarray) -> BidProfile:
    return BidProfile({ad.id: float(row[a]) for a, ad in enumerate(scenario.ads)})


def allocation_from_positions(scenario: Scenario, positions: np.ndarray) -> Allocation:
    slots = [None] * scenario.K
    for col, k in enumerate(positions):
        if k >= 0:
            slots[k] = scenario.items[col].id
    return Allocation(tuple(slots))


def draw_values(scenario: Scenario, R: int, seed: int | np.random.Generator) -> np.ndarray:
    """``(R, n1)`` value matrix, one column per ad in scenario order."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if not scenario.ads:
        return np.zeros((R, 0))
    return np.column_stack([D.sample(ad.dist, rng, R) for ad in scenario.ads])


def batch_positions(
    scenario: Scenario,
    phi: np.ndarray,
    alpha: float,
    constraints: LayoutConstraints,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """``(R, n)`` slot positions (0-based, -1 when unplaced) for any family."""
    R = phi.shape[0]
    n, K = len(scenario.items), scenario.K
    W = weight_matrix(scenario, R, weights)
    scores = batch_scores(scenario, phi, alpha, W)
    order = rank_order(scenario, scores, W)
    positions = np.full((R, n), -1)
    if constraints.variant == NONE:
        positions[np.arange(R)[:, None], order[:, :K]] = np.arange(K)
        return positions
    is_ad = [it.is_ad for it in scenario.items]
    variant, c, l = constraints.variant, constraints.c, constraints.l
    for r in range(R):
        flags: list[bool] = []
        used = np.zeros(n, dtype=bool)
        for k in range(K):
            if variant == BUDGET:
                ad_ok = sum(flags) < c
            elif variant == ROW_SPARSE:
                ad_ok = sum(flags[(k // l) * l : k]) < c
            else:
                ad_ok = sum(flags[max(0, k - l + 1) : k]) < c
            for col in order[r]:
                if used[col] or (is_ad[col] and not ad_ok):
                    continue
                used[col] = True
                positions[r, col] = k
                flags.append(is_ad[col])
                break
            else:
                raise InfeasibleAllocation(f"no admissible item for slot {k + 1}")
    return positions


def batch_gmv(scenario: Scenario, positions: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    W = weight_matrix(scenario, positions.shape[0], weights)
    beta = np.array(scenario.exposures)
    g = np.array([it.volume for it in scenario.items])
    exposures = np.where(positions >= 0, beta[np.maximum(positions, 0)], 0.0)
    return (g * W * exposures).sum(axis=1)


def batch_revenue(
    scenario: Scenario, values: np.ndarray, spec: MechanismSpec, weights: np.ndarray | None = None
) -> np.ndarray:
    """Per-profile revenue; vectorized for the unconstrained family."""
    if spec.family == UNCONSTRAINED:
        return batch_unconstrained(scenario, values, spec.coefficient, weights).revenue()
    if weights is not None:
        raise NotImplementedError("per-profile weights are only supported for the unconstrained family")
    return np.array([run(scenario, profile_from_row(scenario, row), spec).revenue for row in values])
