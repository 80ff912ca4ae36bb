"""Idealized key rates for layered, GHZ-schedule and EPR-relay implementations.

Rates are expected key bits per time slot when every round is a key round.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from networkx.utils import UnionFind

from .keystructure import LayeredKeyStructure, layer_key, layer_label, partition_decomposition
from .plan import ConstructionPlan


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Distribution:
    """One entangled state of local dimension ``dim`` sent to ``users``."""
    users: frozenset
    dim: int


@dataclass(frozen=True)
class Schedule:
    """Time-slot events with their probabilities; each event sends states to disjoint user sets."""
    events: tuple[tuple[float, tuple[Distribution, ...]], ...]

    def __post_init__(self):
        total = sum(p for p, _ in self.events)
        if any(p < 0 for p, _ in self.events) or abs(total - 1) > 1e-9:
            raise ScheduleError(f"event probabilities must be non-negative and sum to 1 (got {total})")
        for _, event in self.events:
            seen: set = set()
            for dist in event:
                if seen & dist.users:
                    raise ScheduleError("recipients within one event overlap")
                if dist.dim < 1 or len(dist.users) < 2:
                    raise ScheduleError("each distribution needs >= 2 users and dim >= 1")
                seen |= dist.users

    def to_json(self) -> dict:
        return {"events": [{"p": p, "distributions": [{"users": sorted(d.users), "dim": d.dim}
                                                      for d in ev]}
                           for p, ev in self.events]}

    @staticmethod
    def from_json(data: dict) -> "Schedule":
        return Schedule(tuple(
            (float(ev["p"]), tuple(Distribution(frozenset(str(u) for u in d["users"]), int(d["dim"]))
                                   for d in ev["distributions"]))
            for ev in data["events"]))


def schedule(*events: tuple[float, Iterable[tuple[Iterable, int]]]) -> Schedule:
    """Shorthand: ``schedule((p, [(users, dim), ...]), ...)``."""
    return Schedule(tuple(
        (p, tuple(Distribution(frozenset(str(u) for u in users), d) for users, d in ev))
        for p, ev in events))


@dataclass
class RateReport:
    implementation: str
    rates: dict  # layer -> bits per time slot
    notes: list = field(default_factory=list)

    def __getitem__(self, layer) -> float:
        return self.rates[frozenset(str(u) for u in layer)]

    def ordered(self) -> list[tuple[frozenset, float]]:
        return sorted(self.rates.items(), key=lambda kv: layer_key(kv[0]))

    def to_json(self) -> dict:
        return {"implementation": self.implementation,
                "rates": [{"layer": sorted(layer), "rate": r} for layer, r in self.ordered()],
                "notes": list(self.notes)}

    @staticmethod
    def from_json(data: dict) -> "RateReport":
        return RateReport(data["implementation"],
                          {frozenset(x["layer"]): float(x["rate"]) for x in data["rates"]},
                          list(data.get("notes", [])))

    def table(self) -> str:
        width = max([len("layer")] + [len(layer_label(k)) for k in self.rates])
        lines = [f"{'layer':<{width}}  rate   [{self.implementation}]"]
        lines += [f"{layer_label(k):<{width}}  {r:.6g}" for k, r in self.ordered()]
        lines += [f"# {n}" for n in self.notes]
        return "\n".join(lines)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def layered_rates(plan: ConstructionPlan) -> RateReport:
    """Rates of the state built from ``plan``.

    A layer's key is readable exactly when every superpose ancestor picked
    the branch containing it, which happens with probability Π 1/m over
    those ancestors. Superpose layers carry a log2(m)-bit symbol.
    """
    rates = {}
    for layer, above in plan.ancestors().items():
        prob = math.prod(1 / node.arity for node in above)
        node = next(n for n in plan.nodes() if n.layer == layer)
        bits = 1.0 if node.kind == "leaf" else math.log2(node.arity)
        rates[layer] = bits * prob
    return RateReport("layered", rates)


def _check_targets(structure: LayeredKeyStructure, sched: Schedule, pairs_only: bool) -> None:
    layers = set(structure.layers)
    for _, event in sched.events:
        for dist in event:
            if pairs_only and len(dist.users) != 2:
                raise ScheduleError("EPR schedules send pairs only")
            if not pairs_only and dist.users not in layers:
                raise ScheduleError(f"{layer_label(dist.users)} is not a layer of the structure")
            if not dist.users <= set(structure.users):
                raise ScheduleError(f"{layer_label(dist.users)} uses unknown users")


def ghz_schedule_rates(structure: LayeredKeyStructure, sched: Schedule) -> RateReport:
    _check_targets(structure, sched, pairs_only=False)
    rates = {layer: 0.0 for layer in structure.layers}
    for p, event in sched.events:
        for dist in event:
            rates[dist.users] += p * math.log2(dist.dim)
    return RateReport("ghz", rates)


def link_rates(sched: Schedule) -> dict[frozenset, float]:
    links: dict[frozenset, float] = {}
    for p, event in sched.events:
        for dist in event:
            links[dist.users] = links.get(dist.users, 0.0) + p * math.log2(dist.dim)
    return links


def relay_tree(layer: frozenset, links: dict[frozenset, float]) -> list[frozenset]:
    """Spanning tree over the layer's members using scheduled links.

    Maximizes the bottleneck link rate. Links along the chain of members
    in canonical order are offered first, so among equally good trees the
    chain wins.
    """
    members = sorted(layer)
    chain = [frozenset(e) for e in zip(members, members[1:])]
    rest = sorted((e for e in links if e <= layer and e not in chain), key=sorted)
    offered = [e for e in chain + rest if e in links]
    # Kruskal, heaviest first; the stable sort keeps the chain ahead on ties
    offered.sort(key=lambda e: -links[e])
    forest = UnionFind(members)
    tree = []
    for e in offered:
        a, b = sorted(e)
        if forest[a] != forest[b]:
            forest.union(a, b)
            tree.append(e)
    if len(tree) != len(members) - 1:
        raise ScheduleError(f"no relay path spans {layer_label(layer)} over scheduled links")
    return tree


def epr_schedule_rates(structure: LayeredKeyStructure, sched: Schedule,
                       priority: Optional[Callable] = None) -> RateReport:
    """Link keys from EPR pairs, converted into layer keys by one-time-pad relaying.

    One bit of an m-party key uses one bit on each of the m-1 links of a
    relay tree. Layers are converted in ``priority`` order (default: larger
    layers first, then canonical order); whatever link key is left becomes
    the rate of the matching two-user layer.
    """
    _check_targets(structure, sched, pairs_only=True)
    links = link_rates(sched)
    order = sorted(structure.layers, key=priority or layer_key)
    rates = {}
    notes = []
    for layer in order:
        if len(layer) == 2:
            continue
        tree = relay_tree(layer, links)
        r = min(links[e] for e in tree)
        for e in tree:
            links[e] -= r
        rates[layer] = r
        notes.append(f"{layer_label(layer)} relayed over "
                     + ", ".join(layer_label(e) for e in sorted(tree, key=sorted)))
    for layer in order:
        if len(layer) == 2:
            rates[layer] = max(0.0, links.get(layer, 0.0))
    return RateReport("epr", rates, notes)


def relay_cost(layer: Iterable, bits: float = 1.0) -> dict[str, float]:
    """Link-key bits each member spends to share ``bits`` of a key along the canonical chain."""
    members = sorted(str(u) for u in layer)
    cost = {u: 2 * bits for u in members}
    cost[members[0]] = cost[members[-1]] = bits
    return cost


def partition_schedule(structure: LayeredKeyStructure, pairs_only: bool = False) -> Schedule:
    """Each partition with probability 1/ℓ, sending 2^ℓ-dimensional states to its layers."""
    parts = partition_decomposition(structure)
    if not parts:
        raise ScheduleError("structure has no partition decomposition")
    ell = len(parts)
    events = []
    for part in parts:
        if pairs_only and any(len(layer) != 2 for layer in part.layers):
            raise ScheduleError("partition contains a layer larger than a pair")
        events.append((1 / ell, [(layer, 2 ** ell) for layer in part.layers]))
    return schedule(*events)


# -- three-user comparison ----------------------------------------------------

ABC = frozenset({"1", "2", "3"})
AB = frozenset({"1", "2"})


def comparison_schedules(p: float) -> tuple[Schedule, Schedule]:
    """(EPR schedule, GHZ schedule) for the {1,2,3}, {1,2} comparison.

    Both send a 4-dimensional pair to {1,2} with probability p; otherwise
    EPR sends a qubit pair to {1,3} and GHZ a qubit GHZ state to {1,2,3}.
    """
    epr = schedule((p, [(AB, 4)]), (1 - p, [({"1", "3"}, 2)]))
    ghz = schedule((p, [(AB, 4)]), (1 - p, [(ABC, 2)]))
    return epr, ghz


def comparison_reference_rates(p: float) -> dict[str, RateReport]:
    """Closed-form rates for the three implementations at mixing probability p."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    # relaying needs one {1,2} bit per tripartite bit
    epr_abc = min(1 - p, 2 * p)
    return {
        "epr": RateReport("epr", {ABC: epr_abc, AB: 2 * p - epr_abc}),
        "ghz": RateReport("ghz", {ABC: 1 - p, AB: 2 * p}),
        "layered": RateReport("layered", {ABC: 1.0, AB: 1.0}),
    }


def grid_search(evaluate: Callable[[float], RateReport], grid: Sequence[float],
                objective: Callable[[RateReport], float],
                constraint: Callable[[RateReport], bool] = lambda r: True) -> tuple[float, RateReport]:
    """Best grid point of a one-parameter schedule family (ties: first point)."""
    best = None
    for p in grid:
        report = evaluate(p)
        if not constraint(report):
            continue
        if best is None or objective(report) > objective(best[1]) + 1e-12:
            best = (p, report)
    if best is None:
        raise ValueError("no grid point satisfies the constraint")
    return best
