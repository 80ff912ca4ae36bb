"""Layered key structures and the combinatorics around them.

A structure is a set of users plus a list of layers, each layer being a
subset of at least two users that must end up sharing one secret key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import networkx as nx

Layer = frozenset  # frozenset[str]


class StructureError(ValueError):
    """Raised for malformed key structures. ``kind`` names the failure."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def layer_key(layer: Iterable[str]) -> tuple:
    """Sort key for the canonical layer order: larger layers first, then by members."""
    members = tuple(sorted(layer))
    return (-len(members), members)


def layer_label(layer: Iterable[str]) -> str:
    return "{" + ",".join(sorted(layer)) + "}"


@dataclass(frozen=True)
class LayeredKeyStructure:
    users: tuple[str, ...]
    layers: tuple[Layer, ...]

    @property
    def K(self) -> int:
        return len(self.layers)

    def layers_of(self, user: str) -> tuple[Layer, ...]:
        """Layers containing ``user``, in canonical order."""
        return tuple(layer for layer in self.layers if user in layer)

    def layer_counts(self) -> tuple[int, ...]:
        return tuple(user_layer_count(self, u) for u in self.users)

    def to_json(self) -> dict:
        return {"users": list(self.users), "layers": [sorted(layer) for layer in self.layers]}

    def __str__(self) -> str:
        return "[" + ", ".join(layer_label(layer) for layer in self.layers) + "]"


@dataclass(frozen=True)
class Partition:
    layers: tuple[Layer, ...]

    def users(self) -> frozenset:
        return frozenset().union(*self.layers)


def _label(x) -> str:
    return x if isinstance(x, str) else str(x)


def validate_structure(raw_users: Iterable, raw_layers: Iterable[Iterable]) -> LayeredKeyStructure:
    """Canonicalize and check a raw (users, layers) description.

    Labels may be strings or anything with a sensible ``str`` (ints are
    accepted for convenience). Users are sorted lexicographically by label.
    """
    users = [_label(u) for u in raw_users]
    if not users:
        raise StructureError("empty-users", "a structure needs at least one user")
    if len(set(users)) != len(users):
        raise StructureError("duplicate-user", "user labels must be unique")
    known = set(users)

    layers: list[Layer] = []
    seen: set[Layer] = set()
    for raw in raw_layers:
        members = [_label(u) for u in raw]
        layer = frozenset(members)
        if len(layer) != len(members):
            raise StructureError("duplicate-member", f"layer {members} repeats a user")
        unknown = layer - known
        if unknown:
            raise StructureError("unknown-user", f"layer {layer_label(layer)} uses {sorted(unknown)}")
        if len(layer) < 2:
            raise StructureError("small-layer", f"layer {layer_label(layer)} has fewer than 2 users")
        if layer in seen:
            raise StructureError("duplicate-layer", f"layer {layer_label(layer)} given twice")
        seen.add(layer)
        layers.append(layer)

    return LayeredKeyStructure(tuple(sorted(users)), tuple(sorted(layers, key=layer_key)))


def load_structure(path: str | Path) -> LayeredKeyStructure:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "users" not in data or "layers" not in data:
        raise StructureError("bad-file", "expected an object with 'users' and 'layers'")
    return validate_structure(data["users"], data["layers"])


def dump_structure(structure: LayeredKeyStructure, path: str | Path) -> None:
    Path(path).write_text(json.dumps(structure.to_json(), indent=2) + "\n", encoding="utf-8")


def user_layer_count(structure: LayeredKeyStructure, user) -> int:
    """Number of layers the user belongs to."""
    user = _label(user)
    if user not in structure.users:
        raise StructureError("unknown-user", f"{user} is not a user of this structure")
    return sum(1 for layer in structure.layers if user in layer)


def neighborhood_graph(structure: LayeredKeyStructure) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(structure.users)
    for layer in structure.layers:
        members = sorted(layer)
        for i, u in enumerate(members):
            for v in members[i + 1:]:
                g.add_edge(u, v)
    return g


def is_connected(structure: LayeredKeyStructure) -> bool:
    return nx.is_connected(neighborhood_graph(structure))


def connected_components(structure: LayeredKeyStructure) -> list[LayeredKeyStructure]:
    """Split into sub-structures along components of the neighborhood graph.

    Components are ordered by their smallest user label.
    """
    comps = sorted((sorted(c) for c in nx.connected_components(neighborhood_graph(structure))),
                   key=lambda c: c[0])
    out = []
    for comp in comps:
        members = set(comp)
        out.append(LayeredKeyStructure(
            tuple(comp), tuple(layer for layer in structure.layers if layer <= members)))
    return out


def partition_decomposition(structure: LayeredKeyStructure, enumerate_all: bool = False):
    """Group every layer into partitions of the user set.

    Backtracks over layers in canonical order, placing each one into an
    already open group it is disjoint from, or into a new group. Returns the
    first complete grouping (a list of Partitions), or None. With
    ``enumerate_all`` a list of all groupings is returned instead (possibly
    empty); this is meant for small instances only.
    """
    if enumerate_all and structure.K > 12:
        raise ValueError("enumerate_all is limited to structures with at most 12 layers")
    counts = set(structure.layer_counts())
    if len(counts) > 1:
        # every partition covers each user once, so unequal counts rule it out
        return [] if enumerate_all else None

    everyone = frozenset(structure.users)
    layers = structure.layers
    groups: list[list[Layer]] = []
    covered: list[frozenset] = []
    found: list[list[Partition]] = []

    def finish() -> bool:
        if all(c == everyone for c in covered):
            found.append([Partition(tuple(g)) for g in groups])
            return not enumerate_all
        return False

    def place(i: int) -> bool:
        if i == len(layers):
            return finish()
        layer = layers[i]
        for g in range(len(groups)):
            if covered[g].isdisjoint(layer):
                groups[g].append(layer)
                covered[g] = covered[g] | layer
                if place(i + 1):
                    return True
                groups[g].pop()
                covered[g] = covered[g] - layer
        groups.append([layer])
        covered.append(frozenset(layer))
        if place(i + 1):
            return True
        groups.pop()
        covered.pop()
        return False

    place(0)
    if enumerate_all:
        return found
    return found[0] if found else None


def _require_connected(structure: LayeredKeyStructure) -> None:
    if not is_connected(structure):
        raise StructureError("not-connected", "feasibility checks need a connected structure; "
                             "split it with connected_components first")


def ghz_rate1_feasible(structure: LayeredKeyStructure) -> bool:
    """Whether a GHZ schedule can reach rate 1 in every layer."""
    _require_connected(structure)
    counts = set(structure.layer_counts())
    if len(counts) != 1:
        return False
    parts = partition_decomposition(structure)
    return parts is not None and len(parts) == counts.pop()


def epr_rate1_feasible(structure: LayeredKeyStructure) -> bool:
    return ghz_rate1_feasible(structure) and all(len(layer) == 2 for layer in structure.layers)


def inclusion_graph(structure: LayeredKeyStructure) -> nx.DiGraph:
    """Layers ordered by strict inclusion; edge a -> b iff a is a proper subset of b."""
    g = nx.DiGraph()
    g.add_nodes_from(structure.layers)
    for a in structure.layers:
        for b in structure.layers:
            if a < b:
                g.add_edge(a, b)
    return g


def example_structure(name: str, n: Optional[int] = None) -> LayeredKeyStructure:
    """Named structures used throughout the docs, tests and CLI.

    ``"442"``: {1,2,3}, {1,2}. ``"k4"``: all pairs of 4 users.
    ``"subsets4"``: every subset of {1,2,3,4} with at least two users.
    ``"chain"``: nested layers {n-1,n}, {n-2,n-1,n}, ..., {1..n}.
    """
    if name == "442":
        return validate_structure([1, 2, 3], [[1, 2, 3], [1, 2]])
    if name == "k4":
        users = [1, 2, 3, 4]
        return validate_structure(users, [[a, b] for a in users for b in users if a < b])
    if name == "subsets4":
        from itertools import combinations
        users = [1, 2, 3, 4]
        return validate_structure(
            users, [list(c) for k in (2, 3, 4) for c in combinations(users, k)])
    if name == "chain":
        if n is None or n < 2:
            raise ValueError("chain needs n >= 2")
        return validate_structure(range(1, n + 1),
                                  [list(range(n - size + 1, n + 1)) for size in range(2, n + 1)])
    raise ValueError(f"unknown example structure {name!r}")
