"""Auction-instance data model: items, slots, bid profiles, allocations, outcomes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from . import distributions as D

AD = "ad"
ORGANIC = "organic"

NONE = "none"
BUDGET = "budget"
ROW_SPARSE = "row-sparse"
COLUMN_SPARSE = "column-sparse"
VARIANTS = (NONE, BUDGET, ROW_SPARSE, COLUMN_SPARSE)


class ScenarioError(ValueError):
    """Malformed scenario or scenario file."""


class InfeasibleAllocation(ValueError):
    """No allocation satisfies the layout constraints."""


@dataclass(frozen=True)
class Slot:
    index: int  # 1-based
    exposure: float


@dataclass(frozen=True)
class Item:
    id: int
    kind: str
    weight: float
    volume: float
    dist: D.ValueDistribution = field(default_factory=D.degenerate_zero)

    def __post_init__(self) -> None:
        if self.kind not in (AD, ORGANIC):
            raise ScenarioError(f"item {self.id}: unknown kind {self.kind!r}")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ScenarioError(f"item {self.id}: weight must be positive and finite")
        if not (math.isfinite(self.volume) and self.volume >= 0):
            raise ScenarioError(f"item {self.id}: volume must be non-negative and finite")
        if self.kind == ORGANIC and self.dist.kind != D.DEGENERATE_ZERO:
            raise ScenarioError(f"organic item {self.id} must have a degenerate-zero value")
        if self.kind == AD and self.dist.kind == D.DEGENERATE_ZERO:
            raise ScenarioError(f"ad item {self.id} needs a value distribution")

    @property
    def is_ad(self) -> bool:
        return self.kind == AD

    @property
    def gw(self) -> float:
        return self.volume * self.weight


@dataclass(frozen=True)
class LayoutConstraints:
    variant: str = NONE
    c: int | None = None
    l: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ScenarioError(f"unknown constraint variant {self.variant!r}")
        if self.variant != NONE and (self.c is None or self.c < 0):
            raise ScenarioError(f"{self.variant} needs a non-negative ad budget c")
        if self.variant in (ROW_SPARSE, COLUMN_SPARSE) and (self.l is None or self.l < 1):
            raise ScenarioError(f"{self.variant} needs a window length l >= 1")

    def to_json(self) -> dict:
        out: dict = {"variant": self.variant}
        if self.c is not None:
            out["c"] = self.c
        if self.l is not None:
            out["l"] = self.l
        return out


@dataclass(frozen=True)
class Scenario:
    items: tuple[Item, ...]
    slots: tuple[Slot, ...]
    constraints: LayoutConstraints = LayoutConstraints()

    def __post_init__(self) -> None:
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ScenarioError("item ids must be unique")
        if not self.slots:
            raise ScenarioError("scenario needs at least one slot")
        for k, s in enumerate(self.slots, start=1):
            if s.index != k:
                raise ScenarioError("slot indices must be 1..K in order")
            if not s.exposure > 0:
                raise ScenarioError("slot exposures must be positive")
        for a, b in zip(self.slots, self.slots[1:]):
            if not a.exposure > b.exposure:
                raise ScenarioError("slot exposures must be strictly decreasing")
        if len(self.items) < len(self.slots):
            raise ScenarioError(
                f"{len(self.items)} items cannot fill {len(self.slots)} slots"
            )
        object.__setattr__(self, "_by_id", MappingProxyType({it.id: it for it in self.items}))

    @classmethod
    def build(cls, exposures, items, constraints: LayoutConstraints | None = None) -> "Scenario":
        slots = tuple(Slot(k, float(b)) for k, b in enumerate(exposures, start=1))
        return cls(tuple(items), slots, constraints or LayoutConstraints())

    @property
    def K(self) -> int:
        return len(self.slots)

    @property
    def exposures(self) -> list[float]:
        return [s.exposure for s in self.slots]

    @property
    def ads(self) -> list[Item]:
        return [it for it in self.items if it.is_ad]

    @property
    def organics(self) -> list[Item]:
        return [it for it in self.items if not it.is_ad]

    def item(self, item_id: int) -> Item:
        return self._by_id[item_id]  # type: ignore[attr-defined]

    def with_constraints(self, constraints: LayoutConstraints) -> "Scenario":
        return Scenario(self.items, self.slots, constraints)

    def with_weights(self, weights: Mapping[int, float]) -> "Scenario":
        items = tuple(
            Item(it.id, it.kind, float(weights.get(it.id, it.weight)), it.volume, it.dist)
            for it in self.items
        )
        return Scenario(items, self.slots, self.constraints)

    def to_json(self) -> dict:
        items = []
        for it in self.items:
            d = {"id": it.id, "kind": it.kind, "w": it.weight, "g": it.volume}
            if it.is_ad:
                d["dist"] = it.dist.to_json()
            items.append(d)
        return {
            "slots": self.exposures,
            "items": items,
            "constraints": self.constraints.to_json(),
        }


@dataclass(frozen=True)
class BidProfile:
    bids: Mapping[int, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bids", MappingProxyType(dict(self.bids)))

    def __getitem__(self, ad_id: int) -> float:
        return self.bids[ad_id]

    def replace(self, ad_id: int, bid: float) -> "BidProfile":
        new = dict(self.bids)
        new[ad_id] = bid
        return BidProfile(new)

    def validate(self, scenario: Scenario) -> None:
        for ad in scenario.ads:
            if ad.id not in self.bids:
                raise ScenarioError(f"missing bid for ad {ad.id}")
            b = self.bids[ad.id]
            if not (0.0 <= b <= ad.dist.upper):
                raise D.DomainError(f"bid {b} of ad {ad.id} outside [0, {ad.dist.upper}]")


@dataclass(frozen=True)
class Allocation:
    """Slot k (1-based) holds item ``assignment[k-1]``."""

    assignment: tuple[int, ...]

    def slot_of(self, item_id: int) -> int | None:
        try:
            return self.assignment.index(item_id) + 1
        except ValueError:
            return None

    def indicator(self, item_id: int, k: int) -> int:
        return int(self.assignment[k - 1] == item_id)

    def exposure(self, scenario: Scenario, item_id: int) -> float:
        k = self.slot_of(item_id)
        return 0.0 if k is None else scenario.slots[k - 1].exposure


@dataclass(frozen=True)
class Outcome:
    allocation: Allocation
    payments: Mapping[int, float]  # per-click, ads only
    revenue: float
    gmv: float

    def payment(self, item_id: int) -> float:
        return self.payments.get(item_id, 0.0)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def ctr(item: Item, slot: Slot) -> float:
    return item.weight * slot.exposure


def _blocks(K: int, l: int) -> list[range]:
    return [range(s, min(s + l, K)) for s in range(0, K, l)]


def _windows(K: int, l: int) -> list[range]:
    if l >= K:
        return [range(0, K)]
    return [range(s, s + l) for s in range(0, K - l + 1)]


def constraint_groups(K: int, constraints: LayoutConstraints) -> list[range]:
    """0-based slot groups, each allowed at most ``c`` ads."""
    if constraints.variant == BUDGET:
        return [range(0, K)]
    if constraints.variant == ROW_SPARSE:
        return _blocks(K, constraints.l)
    if constraints.variant == COLUMN_SPARSE:
        return _windows(K, constraints.l)
    return []


def validate_allocation(
    scenario: Scenario, alloc: Allocation, constraints: LayoutConstraints | None = None
) -> ValidationReport:
    constraints = constraints or scenario.constraints
    report = ValidationReport()
    K = scenario.K
    if len(alloc.assignment) != K:
        report.violations.append(f"slot multiplicity: {len(alloc.assignment)} entries for {K} slots")
    seen: set[int] = set()
    for k, item_id in enumerate(alloc.assignment, start=1):
        if item_id not in scenario._by_id:  # type: ignore[attr-defined]
            report.violations.append(f"slot {k}: unknown item {item_id}")
        elif item_id in seen:
            report.violations.append(f"item multiplicity: item {item_id} placed twice")
        seen.add(item_id)
    is_ad = [
        item_id in scenario._by_id and scenario.item(item_id).is_ad  # type: ignore[attr-defined]
        for item_id in alloc.assignment
    ]
    for group in constraint_groups(len(is_ad), constraints):
        n_ads = sum(is_ad[k] for k in group)
        if n_ads > constraints.c:
            slots = f"{{{group.start + 1}..{group.stop}}}"
            label = {BUDGET: "ad-count budget", ROW_SPARSE: "row-sparse block",
                     COLUMN_SPARSE: "column-sparse window"}[constraints.variant]
            report.violations.append(f"{label} {slots}: {n_ads} ads > c={constraints.c}")
    return report


def realized_gmv(scenario: Scenario, alloc: Allocation) -> float:
    report = validate_allocation(scenario, alloc, LayoutConstraints())
    if not report.ok:
        raise InfeasibleAllocation("; ".join(report.violations))
    return sum(
        scenario.item(i).volume * scenario.item(i).weight * s.exposure
        for i, s in zip(alloc.assignment, scenario.slots)
    )


def realized_revenue(scenario: Scenario, outcome: Outcome) -> float:
    total = 0.0
    for i, s in zip(outcome.allocation.assignment, scenario.slots):
        it = scenario.item(i)
        if it.is_ad:
            total += outcome.payment(i) * it.weight * s.exposure
    return total


def make_outcome(scenario: Scenario, alloc: Allocation, payments: Mapping[int, float]) -> Outcome:
    pays = {i: float(p) for i, p in payments.items() if scenario.item(i).is_ad}
    draft = Outcome(alloc, MappingProxyType(pays), 0.0, 0.0)
    return Outcome(
        alloc, draft.payments, realized_revenue(scenario, draft), realized_gmv(scenario, alloc)
    )


# scenario files


def scenario_from_json(doc: dict) -> Scenario:
    try:
        slots = doc["slots"]
        raw_items = doc["items"]
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"scenario missing field {exc}") from None
    items = []
    for n, d in enumerate(raw_items):
        where = f"items[{n}]"
        try:
            kind = d["kind"]
            dist = D.from_json(d["dist"]) if kind == AD else D.degenerate_zero()
            items.append(Item(int(d["id"]), kind, float(d.get("w", 1.0)), float(d["g"]), dist))
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing field {exc}") from None
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{where}: {exc}") from None
    cons = doc.get("constraints") or {"variant": NONE}
    try:
        constraints = LayoutConstraints(cons.get("variant", NONE), cons.get("c"), cons.get("l"))
    except ScenarioError as exc:
        raise ScenarioError(f"constraints: {exc}") from None
    try:
        return Scenario.build(slots, items, constraints)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return scenario_from_json(doc)
