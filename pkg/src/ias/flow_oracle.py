"""Exact per-profile optimizers for constrained page layouts.

The objective for a bid profile and multiplier ``lam`` is

    sum over placed items of (phi_i + lam * g_i) * w_i * beta_k

with organics contributing ``lam * g_i * w_i * beta_k``. Three oracles solve
it: a min-cost max-flow on a bipartite network for the ad-count budget, a
layered shortest-path network for row and column sparsity, and exhaustive
enumeration for small instances.

The layered networks rest on an exchange argument: once the ad/organic
pattern of the page is fixed, the best filling places ads in descending score
order and organics in descending score order. A path through the layered
network therefore only has to decide, slot by slot, whether the next slot
takes the next-best ad or the next-best organic, while its node carries the
state the sparsity constraint needs.

``construction="split"`` builds the capacity-splitting gadget instead: ad
flow into a slot is split between the slot and the slot's constraint groups.
It is a relaxation. Flow decomposition lets the two halves travel
independently, so its optimum can beat every feasible page; it is kept for
reporting and never used as an authority.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from . import distributions as D
from . import mechanisms as X
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
    Scenario,
    constraint_groups,
    validate_allocation,
)

COST_TOL = 1e-12
BRUTE_FORCE_LIMIT = 10**7
LAYERED_NODE_LIMIT = 10**6


class FlowInfeasible(ValueError):
    """The sink cannot be reached from the source."""


class InstanceTooLarge(ValueError):
    """The instance exceeds the size guard of an exhaustive or layered oracle."""


class NonIntegralFlow(ValueError):
    """A flow value is not integral where an assignment is expected."""


@dataclass(frozen=True)
class Arc:
    tail: str
    head: str
    cap: int
    cost: float
    label: tuple[int, int] | None = None  # (item id, 1-based slot) for placement arcs


@dataclass
class FlowNetwork:
    source: str
    sink: str
    nodes: list[str] = field(default_factory=list)
    arcs: list[Arc] = field(default_factory=list)
    kind: str = "bipartite"
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def add_node(self, name: str) -> str:
        if name not in self._index:
            self._index[name] = len(self.nodes)
            self.nodes.append(name)
        return name

    def add_arc(self, tail: str, head: str, cap: int, cost: float = 0.0, label=None) -> None:
        if cap < 0:
            raise ValueError(f"arc {tail}->{head} has negative capacity")
        if not math.isfinite(cost):
            raise ValueError(f"arc {tail}->{head} has non-finite cost")
        self.add_node(tail)
        self.add_node(head)
        self.arcs.append(Arc(tail, head, int(cap), float(cost), label))

    def index(self, name: str) -> int:
        return self._index[name]

    def dump(self) -> str:
        lines = [f"node {n}" for n in self.nodes]
        lines += [f"arc {a.tail} {a.head} {a.cap} {a.cost!r}" for a in self.arcs]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())


@dataclass(frozen=True)
class IntegralFlow:
    flows: tuple[int, ...]  # one per arc, in network order
    value: int
    cost: float


# solver


class _Residual:
    def __init__(self, net: FlowNetwork):
        n = len(net.nodes)
        self.n = n
        self.head: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]
        for a in net.arcs:
            u, v = net.index(a.tail), net.index(a.head)
            self._push(u, v, a.cap, a.cost)
            self._push(v, u, 0, -a.cost)

    def _push(self, u: int, v: int, cap: int, cost: float) -> None:
        self.adj[u].append(len(self.head))
        self.head.append(v)
        self.cap.append(cap)
        self.cost.append(cost)

    def label_correcting(self, s: int) -> list[float]:
        """Shortest distances from ``s`` over positive-capacity arcs (SPFA)."""
        dist = [math.inf] * self.n
        dist[s] = 0.0
        queue = deque([s])
        queued = [False] * self.n
        queued[s] = True
        relax = [0] * self.n
        while queue:
            u = queue.popleft()
            queued[u] = False
            for e in self.adj[u]:
                if self.cap[e] <= 0:
                    continue
                v = self.head[e]
                nd = dist[u] + self.cost[e]
                if nd < dist[v] - COST_TOL:
                    dist[v] = nd
                    if not queued[v]:
                        relax[v] += 1
                        if relax[v] > self.n:
                            raise ValueError("negative-cost cycle in network")
                        queued[v] = True
                        queue.append(v)
        return dist


def min_cost_max_flow(net: FlowNetwork) -> IntegralFlow:
    """Successive shortest augmenting paths with node potentials.

    One label-correcting pass sets the initial potentials (arc costs may be
    negative); every later search is Dijkstra on reduced costs.
    """
    res = _Residual(net)
    s, t = net.index(net.source), net.index(net.sink)
    pot = res.label_correcting(s)
    if math.isinf(pot[t]):
        raise FlowInfeasible("sink is not reachable from source")
    pot = [p if math.isfinite(p) else 0.0 for p in pot]
    value, cost = 0, 0.0
    while True:
        dist = [math.inf] * res.n
        prev = [-1] * res.n
        dist[s] = 0.0
        heap = [(0.0, s)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for e in res.adj[u]:
                if res.cap[e] <= 0:
                    continue
                v = res.head[e]
                # reduced costs are non-negative up to rounding
                nd = d + max(res.cost[e] + pot[u] - pot[v], 0.0)
                if nd < dist[v] - COST_TOL:
                    dist[v] = nd
                    prev[v] = e
                    heapq.heappush(heap, (nd, v))
        if math.isinf(dist[t]):
            break
        for v in range(res.n):
            if math.isfinite(dist[v]):
                pot[v] += dist[v]
        push = math.inf
        v = t
        while v != s:
            e = prev[v]
            push = min(push, res.cap[e])
            v = res.head[e ^ 1]
        v = t
        while v != s:
            e = prev[v]
            res.cap[e] -= push
            res.cap[e ^ 1] += push
            cost += push * res.cost[e]
            v = res.head[e ^ 1]
        value += push
    flows = tuple(res.cap[2 * k + 1] for k in range(len(net.arcs)))
    total = sum(f * a.cost for f, a in zip(flows, net.arcs))
    return IntegralFlow(flows, value, total)


def has_negative_residual_cycle(net: FlowNetwork, flow: IntegralFlow) -> bool:
    """Optimality certificate check: Bellman-Ford from a virtual root on the residual graph."""
    n = len(net.nodes)
    edges = []
    for a, f in zip(net.arcs, flow.flows):
        u, v = net.index(a.tail), net.index(a.head)
        if f < a.cap:
            edges.append((u, v, a.cost))
        if f > 0:
            edges.append((v, u, -a.cost))
    dist = [0.0] * n
    for _ in range(n):
        changed = False
        for u, v, c in edges:
            if dist[u] + c < dist[v] - 1e-9:
                dist[v] = dist[u] + c
                changed = True
        if not changed:
            return False
    return True


# scores and objective


def lambda_scores(scenario: Scenario, profile: BidProfile, lam: float) -> dict[int, float]:
    """Per-item ``(phi + lam * g) * w``; organics get ``lam * g * w``."""
    out = {}
    for it in scenario.items:
        if it.is_ad:
            phi = D.virtual_value(it.dist, profile[it.id])
            out[it.id] = (phi + lam * it.volume) * it.weight
        else:
            out[it.id] = lam * it.volume * it.weight
    return out


def allocation_value(scenario: Scenario, alloc: Allocation, scores) -> float:
    """Objective of an allocation, summed in slot order."""
    return sum(scores[i] * s.exposure for i, s in zip(alloc.assignment, scenario.slots))


def _policy_order(scenario: Scenario, scores) -> list[Item]:
    return sorted(scenario.items, key=lambda it: (-scores[it.id], -it.gw, it.id))


# builders


def build_budget_network(
    scenario: Scenario, profile: BidProfile, lam: float, c: int | None
) -> FlowNetwork:
    """Bipartite items-to-slots network with an ad gate of capacity ``c``.

    ``c=None`` removes the gate (capacity K), which gives the linear
    relaxation of the unconstrained assignment.
    """
    K = scenario.K
    scores = lambda_scores(scenario, profile, lam)
    net = FlowNetwork("S", "T", kind="bipartite")
    net.add_node("S")
    net.add_arc("S", "A", K if c is None else min(c, K))
    net.add_arc("S", "O", K)
    for it in scenario.items:
        gate, node = ("A", f"a{it.id}") if it.is_ad else ("O", f"o{it.id}")
        net.add_arc(gate, node, 1)
        for s in scenario.slots:
            net.add_arc(node, f"s{s.index}", 1, -scores[it.id] * s.exposure, (it.id, s.index))
    for s in scenario.slots:
        net.add_arc(f"s{s.index}", "T", 1)
    return net


def _layered(scenario: Scenario, profile: BidProfile, lam: float, constraints) -> FlowNetwork:
    K = scenario.K
    c, l = constraints.c, constraints.l
    scores = lambda_scores(scenario, profile, lam)
    order = _policy_order(scenario, scores)
    ads = [it for it in order if it.is_ad]
    orgs = [it for it in order if not it.is_ad]
    row = constraints.variant == ROW_SPARSE
    width = 1 if row else max(l - 1, 0)
    mask = (1 << width) - 1

    def ad_ok(state) -> bool:
        k, a, w = state
        return w < c if row else bin(w).count("1") < c

    def step(state, is_ad: bool):
        k, a, w = state
        nk = k + 1
        if row:
            nw = 0 if nk % l == 0 else w + is_ad
        else:
            nw = ((w << 1) | is_ad) & mask
        return (nk, a + is_ad, nw)

    def name(state) -> str:
        return "n{}_{}_{}".format(*state)

    net = FlowNetwork("S", "T", kind="layered")
    net.add_node("S")
    start = (0, 0, 0)
    net.add_arc("S", name(start), 1)
    frontier = {start}
    count = 1
    for k in range(K):
        nxt = set()
        beta = scenario.slots[k].exposure
        for state in sorted(frontier):
            _, a, _ = state
            o = k - a
            if a < len(ads) and ad_ok(state):
                tgt = step(state, True)
                it = ads[a]
                net.add_arc(name(state), name(tgt), 1, -scores[it.id] * beta, (it.id, k + 1))
                nxt.add(tgt)
            if o < len(orgs):
                tgt = step(state, False)
                it = orgs[o]
                net.add_arc(name(state), name(tgt), 1, -scores[it.id] * beta, (it.id, k + 1))
                nxt.add(tgt)
        count += len(nxt)
        if count > LAYERED_NODE_LIMIT:
            raise InstanceTooLarge(f"layered network exceeds {LAYERED_NODE_LIMIT} nodes")
        frontier = nxt
    for state in sorted(frontier):
        net.add_arc(name(state), "T", 1)
    return net


def _split(scenario: Scenario, profile: BidProfile, lam: float, constraints) -> FlowNetwork:
    K, c = scenario.K, constraints.c
    scores = lambda_scores(scenario, profile, lam)
    groups = constraint_groups(K, constraints)
    member = {k: [g for g, grp in enumerate(groups) if k in grp] for k in range(K)}
    # every slot must be filled; a bonus larger than any score total forces it
    bonus = 1.0 + 2.0 * sum(abs(v) for v in scores.values()) * scenario.slots[0].exposure
    net = FlowNetwork("S0", "T", kind="split")
    net.add_node("S0")
    supply = sum(1 + len(member[k]) for k in range(K)) * len(scenario.items)
    net.add_arc("S0", "S", supply)
    net.add_arc("S", "T", supply)
    for it in scenario.items:
        if it.is_ad:
            width = max(1 + len(member[k]) for k in range(K))
            net.add_arc("S", f"a{it.id}", width)
            for s in scenario.slots:
                d = len(member[s.index - 1])
                net.add_arc(
                    f"a{it.id}", f"s2_{s.index}", 1 + d,
                    -scores[it.id] * s.exposure / (1 + d), (it.id, s.index),
                )
        else:
            net.add_arc("S", f"o{it.id}", 1)
            for s in scenario.slots:
                net.add_arc(f"o{it.id}", f"s1_{s.index}", 1, -scores[it.id] * s.exposure, (it.id, s.index))
    for s in scenario.slots:
        k = s.index
        net.add_arc(f"s1_{k}", f"s{k}", 1)
        net.add_arc(f"s2_{k}", f"s{k}", 1)
        for g in member[k - 1]:
            net.add_arc(f"s2_{k}", f"k{g}", 1)
        net.add_arc(f"s{k}", "T", 1, -bonus)
    for g in range(len(groups)):
        net.add_arc(f"k{g}", "T", c)
    net.bonus = bonus  # type: ignore[attr-defined]
    return net


def build_row_sparse_network(
    scenario: Scenario, profile: BidProfile, lam: float, c: int, l: int, construction: str = "layered"
) -> FlowNetwork:
    cons = LayoutConstraints(ROW_SPARSE, c, l)
    if construction == "layered":
        return _layered(scenario, profile, lam, cons)
    if construction == "split":
        return _split(scenario, profile, lam, cons)
    raise ValueError(f"unknown construction {construction!r}")


def build_col_sparse_network(
    scenario: Scenario, profile: BidProfile, lam: float, c: int, l: int, construction: str = "layered"
) -> FlowNetwork:
    cons = LayoutConstraints(COLUMN_SPARSE, c, l)
    if construction == "layered":
        return _layered(scenario, profile, lam, cons)
    if construction == "split":
        return _split(scenario, profile, lam, cons)
    raise ValueError(f"unknown construction {construction!r}")


def build_network(
    scenario: Scenario, profile: BidProfile, lam: float, constraints: LayoutConstraints,
    construction: str = "layered",
) -> FlowNetwork:
    v = constraints.variant
    if v == NONE:
        return build_budget_network(scenario, profile, lam, None)
    if v == BUDGET:
        return build_budget_network(scenario, profile, lam, constraints.c)
    if v == ROW_SPARSE:
        return build_row_sparse_network(scenario, profile, lam, constraints.c, constraints.l, construction)
    return build_col_sparse_network(scenario, profile, lam, constraints.c, constraints.l, construction)


def flow_to_allocation(net: FlowNetwork, flow: IntegralFlow) -> Allocation:
    """Read the page off the placement arcs carrying at least one unit."""
    placed: dict[int, int] = {}
    for a, f in zip(net.arcs, flow.flows):
        if a.label is None or f < 1:
            continue
        if f != int(f):
            raise NonIntegralFlow(f"flow {f} on {a.tail}->{a.head}")
        item_id, k = a.label
        if k in placed:
            raise InfeasibleAllocation(f"slot {k} receives more than one item")
        placed[k] = item_id
    n_slots = max(placed, default=0)
    if sorted(placed) != list(range(1, n_slots + 1)):
        raise InfeasibleAllocation("flow leaves a slot empty")
    return Allocation(tuple(placed[k] for k in range(1, n_slots + 1)))


@dataclass(frozen=True)
class OracleSolution:
    allocation: Allocation
    value: float  # objective of the allocation, summed in slot order
    flow_cost: float
    integral: bool


def solve_flow(
    scenario: Scenario, profile: BidProfile, lam: float, constraints: LayoutConstraints,
    construction: str = "layered",
) -> OracleSolution:
    net = build_network(scenario, profile, lam, constraints, construction)
    flow = min_cost_max_flow(net)
    alloc = flow_to_allocation(net, flow)
    if len(alloc.assignment) != scenario.K:
        raise InfeasibleAllocation(f"flow fills {len(alloc.assignment)} of {scenario.K} slots")
    scores = lambda_scores(scenario, profile, lam)
    integral = all(float(f).is_integer() for f in flow.flows) and all(
        f in (0, 1) for a, f in zip(net.arcs, flow.flows) if a.label is not None
    )
    return OracleSolution(alloc, allocation_value(scenario, alloc, scores), flow.cost, integral)


def split_relaxation_value(
    scenario: Scenario, profile: BidProfile, lam: float, constraints: LayoutConstraints
) -> float:
    """Optimum of the split gadget, in objective units (bonus removed)."""
    net = build_network(scenario, profile, lam, constraints, "split")
    flow = min_cost_max_flow(net)
    filled = sum(
        f for a, f in zip(net.arcs, flow.flows) if a.head == "T" and a.tail.startswith("s")
    )
    return -(flow.cost + net.bonus * filled)  # type: ignore[attr-defined]


def brute_force_by_scores(
    scenario: Scenario, scores, constraints: LayoutConstraints
) -> Allocation:
    """Exhaustive search over feasible pages; ties go to the earliest page in policy order."""
    n, K = len(scenario.items), scenario.K
    if math.perm(n, K) > BRUTE_FORCE_LIMIT:
        raise InstanceTooLarge(f"{math.perm(n, K)} assignments exceed {BRUTE_FORCE_LIMIT}")
    order = [it.id for it in _policy_order(scenario, scores)]
    best, best_val = None, -math.inf
    for perm in itertools.permutations(order, K):
        alloc = Allocation(perm)
        if not validate_allocation(scenario, alloc, constraints).ok:
            continue
        val = allocation_value(scenario, alloc, scores)
        if val > best_val:
            best, best_val = alloc, val
    if best is None:
        raise InfeasibleAllocation("no feasible page exists")
    return best


def brute_force_optimal(
    scenario: Scenario, profile: BidProfile, lam: float, constraints: LayoutConstraints
) -> Allocation:
    return brute_force_by_scores(scenario, lambda_scores(scenario, profile, lam), constraints)


@dataclass(frozen=True)
class OracleComparison:
    mechanism: float | None  # None when the greedy cannot fill the page
    network: float
    brute_force: float
    split: float | None
    integral: bool

    @property
    def network_agrees(self) -> bool:
        return self.network == self.brute_force

    @property
    def mechanism_optimal(self) -> bool:
        return self.mechanism == self.brute_force


def compare_oracles(
    scenario: Scenario, profile: BidProfile, lam: float, constraints: LayoutConstraints,
    with_split: bool = False,
) -> OracleComparison:
    """Objective of the greedy mechanism, the flow network and exhaustive search."""
    scores = lambda_scores(scenario, profile, lam)
    sol = solve_flow(scenario, profile, lam, constraints)
    best = allocation_value(scenario, brute_force_optimal(scenario, profile, lam, constraints), scores)
    try:
        spec = X.MechanismSpec.for_constraints(constraints, lam=lam)
        mech = allocation_value(scenario, X.allocate(scenario, profile, spec), scores)
    except InfeasibleAllocation:
        mech = None
    split = None
    if with_split and constraints.variant in (ROW_SPARSE, COLUMN_SPARSE):
        split = split_relaxation_value(scenario, profile, lam, constraints)
    return OracleComparison(mech, sol.value, best, split, sol.integral)
