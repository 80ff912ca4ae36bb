"""Enumerate construction plans for a structure and compare them.

A plan is fixed by choosing, for every layer, either no parent (it is a
root of the forest) or a strictly larger layer to sit under. Children of
a layer are superposed to implement it, with one empty padding branch
when they are fewer than two or do not cover the layer. The arity of a
node counts padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .keystructure import LayeredKeyStructure, StructureError, is_connected, layer_label
from .plan import ConstructionPlan, PlanNode, padding_needed, plan_from_parents
from .rates import layered_rates

MAX_LAYERS = 12


def enumerate_plans(structure: LayeredKeyStructure, max_arity: int = 2,
                    override: bool = False) -> list[ConstructionPlan]:
    """All plans whose superpose nodes have at most ``max_arity`` branches.

    The flat plan (no parents at all) comes first. Distinct parent
    assignments give distinct plans, so the output has no duplicates.
    """
    if max_arity < 2:
        raise ValueError("max_arity must be at least 2")
    if structure.K > MAX_LAYERS and not override:
        raise StructureError("too-large", f"{structure.K} layers; enumeration above {MAX_LAYERS} "
                             "layers needs override=True")
    if not is_connected(structure):
        raise StructureError("not-connected", "enumerate plans per connected component")

    layers = structure.layers  # canonical order puts every superset before its subsets
    options = [[None] + [p for p in layers if layer < p] for layer in layers]
    parent: dict = {}
    children: dict = {layer: [] for layer in layers}
    plans = []

    def arity_ok(layer) -> bool:
        kids = children[layer]
        return not kids or len(kids) + padding_needed(layer, kids) <= max_arity

    def search(i: int) -> None:
        if i == len(layers):
            if all(arity_ok(layer) for layer in layers):
                plans.append(plan_from_parents(structure, parent))
            return
        layer = layers[i]
        for p in options[i]:
            if p is not None and len(children[p]) >= max_arity:
                continue
            parent[layer] = p
            if p is not None:
                children[p].append(layer)
            search(i + 1)
            if p is not None:
                children[p].pop()
        del parent[layer]

    search(0)
    return plans


@dataclass(frozen=True)
class PlanMetrics:
    dims: dict      # user -> local dimension
    rates: dict     # layer -> idealized rate
    support: int    # number of nonzero amplitudes

    @property
    def total_dimension(self) -> int:
        return math.prod(self.dims.values())


def _node_dims(node: PlanNode) -> tuple[dict, int]:
    if node.kind == "leaf":
        return {u: 2 for u in node.users}, 2
    if node.kind == "empty":
        return {u: 1 for u in node.users}, 1
    parts = [_node_dims(c) for c in node.children]
    dims = {}
    for u in node.users:
        dims[u] = sum(d.get(u, 1) for d, _ in parts)
    return dims, sum(s for _, s in parts)


def plan_metrics(plan: ConstructionPlan) -> PlanMetrics:
    """Dimensions, rates and support size, computed from the plan alone."""
    dims = {u: 1 for u in plan.users}
    support = 1
    for root in plan.roots:
        d, s = _node_dims(root)
        for u, x in d.items():
            dims[u] *= x
        support *= s
    return PlanMetrics(dims, layered_rates(plan).rates, support)


def dominates(a: PlanMetrics, b: PlanMetrics) -> bool:
    """a is no worse than b everywhere (smaller dims, larger rates) and better somewhere."""
    if a.dims.keys() != b.dims.keys() or a.rates.keys() != b.rates.keys():
        raise ValueError("plans for different structures are not comparable")
    no_worse = all(a.dims[u] <= b.dims[u] for u in a.dims) and \
        all(a.rates[k] >= b.rates[k] - 1e-12 for k in a.rates)
    better = any(a.dims[u] < b.dims[u] for u in a.dims) or \
        any(a.rates[k] > b.rates[k] + 1e-12 for k in a.rates)
    return no_worse and better


def pareto_front(plans: Iterable[ConstructionPlan]) -> list[ConstructionPlan]:
    """Non-dominated plans, duplicates collapsed, in first-seen order."""
    unique: dict = {}
    for plan in plans:
        unique.setdefault(plan.key(), plan)
    plans = list(unique.values())
    if not plans:
        return []
    metrics = [plan_metrics(p) for p in plans]
    users = sorted(metrics[0].dims)
    layers = sorted(metrics[0].rates, key=sorted)
    if any(m.dims.keys() != set(users) or m.rates.keys() != set(layers) for m in metrics):
        raise ValueError("plans for different structures are not comparable")
    # Same rule as dominates(): every cost is minimized, so rates enter negated,
    # scaled to integers to make the comparisons exact.
    cost = np.array([[m.dims[u] for u in users] + [-round(m.rates[k] * 2 ** 26) for k in layers]
                     for m in metrics], dtype=np.int32)
    # A dominator has a strictly smaller cost sum and dominance is transitive,
    # so each block only needs checking against the front found so far and itself.
    order = np.argsort(cost.sum(axis=1, dtype=np.int64), kind="stable")
    dominated = np.zeros(len(plans), dtype=bool)
    front = np.empty((0, cost.shape[1]), dtype=np.int32)
    for lo in range(0, len(plans), 256):
        idx = order[lo:lo + 256]
        block = cost[idx]
        cand = np.concatenate([front, block])
        le = (cand[None] <= block[:, None]).all(axis=2)
        ne = (cand[None] != block[:, None]).any(axis=2)
        dominated[idx] = (le & ne).any(axis=1)
        front = np.concatenate([front, block[~dominated[idx]]])
    return [p for p, out in zip(plans, dominated) if not out]


def tradeoff_chain_plan(structure: LayeredKeyStructure) -> ConstructionPlan:
    """Every layer under the smallest strictly larger layer, when the layers form a chain."""
    layers = sorted(structure.layers, key=len)
    for a, b in zip(layers, layers[1:]):
        if not a < b:
            raise StructureError("not-a-chain", f"{layer_label(a)} is not inside {layer_label(b)}")
    return plan_from_parents(structure, {a: b for a, b in zip(layers, layers[1:])})


def format_metrics_table(plans: Sequence[ConstructionPlan], front: Sequence[ConstructionPlan] = ()) -> str:
    keys = {p.key() for p in front}
    rows = []
    for i, plan in enumerate(plans):
        m = plan_metrics(plan)
        dims = ",".join(str(m.dims[u]) for u in plan.users)
        rates = ",".join(f"{m.rates[k]:.4g}" for k in sorted(m.rates, key=lambda k: (-len(k), sorted(k))))
        rows.append((str(i), "*" if plan.key() in keys else "", dims, rates, str(m.support), str(plan)))
    head = ("#", "P", "dims", "rates", "support", "plan")
    widths = [max(len(r[c]) for r in rows + [head]) for c in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*r).rstrip() for r in [head] + rows)
