"""Construction plans: recipe trees mapping a key structure to a state.

A plan is a forest. Each node is one of

* ``leaf``: a layer implemented by a binary GHZ state over its members,
* ``empty``: an explicit padding branch (the all-zero state on a user set),
* ``superpose``: a layer implemented by superposing its children,

and the roots are combined by tensor joins in the order given.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .keystructure import LayeredKeyStructure, layer_key, layer_label


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class PlanNode:
    kind: str  # "leaf" | "empty" | "superpose"
    users: frozenset
    children: tuple["PlanNode", ...] = ()

    def __post_init__(self):
        if self.kind not in ("leaf", "empty", "superpose"):
            raise PlanError(f"unknown node kind {self.kind!r}")
        if self.kind != "superpose" and self.children:
            raise PlanError(f"{self.kind} nodes have no children")

    @property
    def layer(self) -> Optional[frozenset]:
        return None if self.kind == "empty" else self.users

    @property
    def arity(self) -> int:
        return len(self.children)

    def walk(self) -> Iterator["PlanNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def to_json(self) -> dict:
        if self.kind == "empty":
            return {"kind": "empty", "users": sorted(self.users)}
        out = {"kind": self.kind, "layer": sorted(self.users)}
        if self.kind == "superpose":
            out["children"] = [c.to_json() for c in self.children]
        return out

    def __str__(self) -> str:
        if self.kind == "empty":
            return "∅" + layer_label(self.users)
        if self.kind == "leaf":
            return layer_label(self.users)
        return layer_label(self.users) + "(" + " ".join(str(c) for c in self.children) + ")"


def leaf(layer) -> PlanNode:
    return PlanNode("leaf", frozenset(layer))


def empty(users) -> PlanNode:
    return PlanNode("empty", frozenset(users))


def superpose(layer, children) -> PlanNode:
    return PlanNode("superpose", frozenset(layer), tuple(children))


@dataclass(frozen=True)
class ConstructionPlan:
    users: tuple[str, ...]
    roots: tuple[PlanNode, ...]

    def nodes(self) -> Iterator[PlanNode]:
        for root in self.roots:
            yield from root.walk()

    def layers(self) -> list[frozenset]:
        return [n.layer for n in self.nodes() if n.layer is not None]

    def ancestors(self) -> dict[frozenset, tuple[PlanNode, ...]]:
        """Map each layer to its superpose ancestors, nearest first."""
        out: dict[frozenset, tuple[PlanNode, ...]] = {}

        def visit(node: PlanNode, above: tuple[PlanNode, ...]) -> None:
            if node.layer is not None:
                out[node.layer] = above
            for child in node.children:
                visit(child, (node,) + above)

        for root in self.roots:
            visit(root, ())
        return out

    def is_flat(self) -> bool:
        return all(root.kind == "leaf" for root in self.roots)

    def validate(self, structure: Optional[LayeredKeyStructure] = None) -> None:
        """Check the plan invariants; with ``structure``, also check it covers it exactly."""
        everyone = frozenset(self.users)
        layers = self.layers()
        if len(set(layers)) != len(layers):
            raise PlanError("a layer appears more than once in the plan")
        for node in self.nodes():
            if not node.users <= everyone:
                raise PlanError(f"node {node} uses unknown users")
            if node.kind in ("leaf", "superpose") and len(node.users) < 2:
                raise PlanError(f"layer {layer_label(node.users)} has fewer than 2 users")
            if node.kind == "superpose":
                if node.arity < 2:
                    raise PlanError(f"superpose node {node} needs at least 2 children")
                union = frozenset().union(*(c.users for c in node.children))
                if union != node.users:
                    raise PlanError(f"children of {node} do not cover its layer")
                for c in node.children:
                    if c.kind != "empty" and not c.users < node.users:
                        raise PlanError(f"child {c} is not a proper subset of {node}")
        if structure is not None:
            if tuple(sorted(self.users)) != structure.users:
                raise PlanError("plan users differ from the structure's users")
            if set(layers) != set(structure.layers):
                raise PlanError("plan layers differ from the structure's layers")

    def key(self) -> str:
        """Canonical serialization used for deduplication."""
        return json.dumps(self.to_json(), sort_keys=True)

    def to_json(self) -> dict:
        return {"kind": "tensor", "users": list(self.users),
                "children": [r.to_json() for r in self.roots]}

    def __str__(self) -> str:
        return " ⊗ ".join(str(r) for r in self.roots)


def node_from_json(data: dict) -> PlanNode:
    kind = data.get("kind")
    if kind == "empty":
        return empty(str(u) for u in data["users"])
    if kind == "leaf":
        return leaf(str(u) for u in data["layer"])
    if kind == "superpose":
        return superpose((str(u) for u in data["layer"]),
                         [node_from_json(c) for c in data["children"]])
    raise PlanError(f"unknown node kind {kind!r}")


def plan_from_json(data: dict) -> ConstructionPlan:
    if data.get("kind") != "tensor":
        raise PlanError("a plan document must be a 'tensor' node at the top")
    plan = ConstructionPlan(tuple(sorted(str(u) for u in data["users"])),
                            tuple(node_from_json(c) for c in data["children"]))
    plan.validate()
    return plan


def load_plan(path: str | Path) -> ConstructionPlan:
    return plan_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def dump_plan(plan: ConstructionPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan.to_json(), indent=2) + "\n", encoding="utf-8")


def flat_plan(structure: LayeredKeyStructure) -> ConstructionPlan:
    """Every layer a GHZ leaf, tensor-joined in canonical order."""
    return ConstructionPlan(structure.users, tuple(leaf(layer) for layer in structure.layers))


def plan_from_parents(structure: LayeredKeyStructure, parent: dict) -> ConstructionPlan:
    """Build the plan given each layer's parent layer (None for roots).

    A layer with children becomes a superpose node; one empty branch over the
    layer's users is added when the children alone would not be a valid
    superposition (fewer than two of them, or their union falls short).
    Padding comes first among the children, then layers in canonical order.
    """
    children: dict = {layer: [] for layer in structure.layers}
    for layer in structure.layers:
        p = parent.get(layer)
        if p is not None:
            children[p].append(layer)

    def make(layer) -> PlanNode:
        kids = sorted(children[layer], key=layer_key)
        if not kids:
            return leaf(layer)
        nodes = [make(k) for k in kids]
        union = frozenset().union(*kids)
        if len(kids) < 2 or union != layer:
            nodes.insert(0, empty(layer))
        return superpose(layer, nodes)

    roots = [make(layer) for layer in structure.layers if parent.get(layer) is None]
    return ConstructionPlan(structure.users, tuple(roots))


def padding_needed(layer: frozenset, kids) -> int:
    kids = list(kids)
    if not kids:
        return 0
    union = frozenset().union(*kids)
    return 1 if len(kids) < 2 or union != layer else 0
