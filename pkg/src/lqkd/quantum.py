"""Sparse pure states over qudit registers of mixed dimension.

States are built in three ways: the flat construction (one virtual qubit
per layer membership, packed into a qudit digit), the tensor join (fuse
two states' registers per shared user, dimensions multiply) and the
superpose join (direct sum of branch states, padded with bottom symbols,
dimensions add). Every construction carries

* a ``SparseState`` (layout + nonzero amplitudes),
* a ``KeyExtractionMap`` telling each layer member how to read that
  layer's key off their own symbol,
* one register tree per user recording how the register was assembled;
  measurements in test bases are derived from it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .keystructure import LayeredKeyStructure, layer_key, layer_label
from .plan import ConstructionPlan, PlanNode

BOTTOM = -1
DENSE_LIMIT = 2 ** 20
NORM_TOL = 1e-12


# ---------------------------------------------------------------------------
# symbols and layouts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Symbol:
    """One computational basis label of a user's register.

    ``digit``: plain value. ``primed``: symbol of branch ``value`` of a
    superposition, wrapping the branch's own symbol. ``bottom``: the
    filler for a user absent from branch ``value``. ``pair``: fused
    symbol of a tensor join whose inputs were not both plain digits.
    """

    kind: str
    value: int = 0
    parts: tuple = ()

    def __str__(self) -> str:
        if self.kind == "digit":
            return str(self.value)
        if self.kind == "primed":
            return f"{self.parts[0]}{'′' * self.value}"
        if self.kind == "bottom":
            return f"⊥{'′' * self.value}"
        return f"({self.parts[0]},{self.parts[1]})"

    def to_json(self):
        if self.kind == "digit":
            return self.value
        if self.kind == "primed":
            return {"branch": self.value, "of": self.parts[0].to_json()}
        if self.kind == "bottom":
            return {"bottom": self.value}
        return {"pair": [self.parts[0].to_json(), self.parts[1].to_json()]}

    @staticmethod
    def from_json(data) -> "Symbol":
        if isinstance(data, int):
            return digit(data)
        if "branch" in data:
            return primed(data["branch"], Symbol.from_json(data["of"]))
        if "bottom" in data:
            return bottom(data["bottom"])
        a, b = data["pair"]
        return Symbol("pair", 0, (Symbol.from_json(a), Symbol.from_json(b)))


def digit(v: int) -> Symbol:
    return Symbol("digit", v)


def primed(branch: int, inner: Symbol) -> Symbol:
    return Symbol("primed", branch, (inner,))


def bottom(branch: int) -> Symbol:
    return Symbol("bottom", branch)


def digits(d: int) -> tuple[Symbol, ...]:
    return tuple(digit(i) for i in range(d))


def _plain(alphabet: Sequence[Symbol]) -> bool:
    return all(s.kind == "digit" and s.value == i for i, s in enumerate(alphabet))


@dataclass(frozen=True)
class RegisterLayout:
    users: tuple[str, ...]
    alphabets: tuple[tuple[Symbol, ...], ...]

    def __post_init__(self):
        if len(self.users) != len(self.alphabets):
            raise ValueError("one alphabet per user")
        for u, alpha in zip(self.users, self.alphabets):
            if not alpha:
                raise ValueError(f"user {u} has an empty alphabet")
            if len(set(alpha)) != len(alpha):
                raise ValueError(f"user {u} has repeated symbols")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.alphabets)

    def alphabet(self, user: str) -> tuple[Symbol, ...]:
        return self.alphabets[self.users.index(user)]

    def dim(self, user: str) -> int:
        return len(self.alphabet(user))

    def labels(self, basis: Sequence[int]) -> tuple[str, ...]:
        return tuple(str(a[i]) for a, i in zip(self.alphabets, basis))


@dataclass(frozen=True, eq=False)
class SparseState:
    layout: RegisterLayout
    amplitudes: Mapping[tuple, complex]

    def __post_init__(self):
        clean = {}
        dims = self.layout.dims
        for basis, amp in self.amplitudes.items():
            basis = tuple(int(i) for i in basis)
            if len(basis) != len(dims) or any(not 0 <= i < d for i, d in zip(basis, dims)):
                raise ValueError(f"basis vector {basis} does not fit dims {dims}")
            amp = complex(amp)
            if amp != 0:
                clean[basis] = clean.get(basis, 0) + amp
        norm = sum(abs(a) ** 2 for a in clean.values())
        if abs(norm - 1) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm² = {norm!r})")
        object.__setattr__(self, "amplitudes", dict(sorted(clean.items())))

    @property
    def users(self) -> tuple[str, ...]:
        return self.layout.users

    @property
    def dims(self) -> tuple[int, ...]:
        return self.layout.dims

    @cached_property
    def support(self) -> np.ndarray:
        """Support basis vectors as an (S, n) int array, sorted."""
        return np.array(list(self.amplitudes), dtype=np.int64).reshape(len(self.amplitudes), -1)

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.array([abs(a) ** 2 for a in self.amplitudes.values()])

    def to_dense(self) -> np.ndarray:
        size = math.prod(self.dims)
        if size > DENSE_LIMIT:
            raise ValueError(f"product dimension {size} exceeds the dense limit {DENSE_LIMIT}")
        psi = np.zeros(self.dims, dtype=complex)
        for basis, amp in self.amplitudes.items():
            psi[basis] = amp
        return psi

    def equals(self, other: "SparseState", tol: float = 1e-9) -> bool:
        """Amplitude-map equality (layouts must match exactly)."""
        if self.layout != other.layout:
            return False
        keys = set(self.amplitudes) | set(other.amplitudes)
        return all(abs(self.amplitudes.get(k, 0) - other.amplitudes.get(k, 0)) <= tol for k in keys)

    def __str__(self) -> str:
        terms = [f"{a.real:+.4f}|{''.join(self.layout.labels(b))}⟩" if abs(a.imag) < 1e-15
                 else f"({a:.4f})|{''.join(self.layout.labels(b))}⟩"
                 for b, a in self.amplitudes.items()]
        return " ".join(terms)

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "users": list(self.users),
            "alphabets": {u: [s.to_json() for s in a]
                          for u, a in zip(self.users, self.layout.alphabets)},
            "amplitudes": [
                {"basis": list(self.layout.labels(b)), "index": list(b),
                 "re": a.real, "im": a.imag}
                for b, a in self.amplitudes.items()
            ],
        }

    @staticmethod
    def from_json(data: dict) -> "SparseState":
        users = tuple(data["users"])
        alphabets = tuple(tuple(Symbol.from_json(s) for s in data["alphabets"][u]) for u in users)
        amps = {tuple(t["index"]): complex(t["re"], t["im"]) for t in data["amplitudes"]}
        return SparseState(RegisterLayout(users, alphabets), amps)


def dump_state(state: SparseState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.to_json(), indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def load_state(path: str | Path) -> SparseState:
    return SparseState.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# register trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    """A GHZ factor of dimension ``dim`` (layer None: anonymous or empty)."""
    layer: Optional[frozenset]
    dim: int


@dataclass(frozen=True)
class Fused:
    """Tensor fusion; symbol index = first index + first.dim * second index."""
    first: "Register"
    second: "Register"

    @property
    def dim(self) -> int:
        return self.first.dim * self.second.dim


@dataclass(frozen=True)
class Summed:
    """Direct sum over branches; a None segment is this user's bottom symbol."""
    layer: frozenset
    segments: tuple

    @property
    def dim(self) -> int:
        return sum(1 if s is None else s.dim for s in self.segments)

    def offsets(self) -> list[int]:
        out, acc = [], 0
        for s in self.segments:
            out.append(acc)
            acc += 1 if s is None else s.dim
        return out


Register = Union[Leaf, Fused, Summed]


def register_tables(reg: Register) -> dict[frozenset, np.ndarray]:
    """Per layer, the decoded key symbol for every symbol index (BOTTOM for none)."""
    if isinstance(reg, Leaf):
        return {} if reg.layer is None else {reg.layer: np.arange(reg.dim)}
    if isinstance(reg, Fused):
        idx = np.arange(reg.dim)
        d1 = reg.first.dim
        out = {layer: t[idx % d1] for layer, t in register_tables(reg.first).items()}
        out.update({layer: t[idx // d1] for layer, t in register_tables(reg.second).items()})
        return out
    out = {reg.layer: np.empty(reg.dim, dtype=np.int64)}
    for b, (seg, off) in enumerate(zip(reg.segments, reg.offsets())):
        width = 1 if seg is None else seg.dim
        out[reg.layer][off:off + width] = b
        if seg is None:
            continue
        for layer, t in register_tables(seg).items():
            col = out.setdefault(layer, np.full(reg.dim, BOTTOM, dtype=np.int64))
            col[off:off + width] = t
    return out


def register_arities(reg: Register) -> dict[frozenset, int]:
    if isinstance(reg, Leaf):
        return {} if reg.layer is None else {reg.layer: reg.dim}
    if isinstance(reg, Fused):
        return {**register_arities(reg.first), **register_arities(reg.second)}
    out = {reg.layer: len(reg.segments)}
    for seg in reg.segments:
        if seg is not None:
            out.update(register_arities(seg))
    return out


# ---------------------------------------------------------------------------
# key extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyExtractionMap:
    """For each layer and member, the key symbol read from each symbol index."""

    users: tuple[str, ...]
    layers: tuple[frozenset, ...]
    arity: Mapping[frozenset, int]
    tables: Mapping[frozenset, Mapping[str, tuple[int, ...]]]

    def members(self, layer: frozenset) -> tuple[str, ...]:
        return tuple(sorted(self.tables[layer]))

    def table(self, layer: frozenset, user: str) -> np.ndarray:
        return np.asarray(self.tables[layer][user], dtype=np.int64)

    @staticmethod
    def from_registers(users: Sequence[str], registers: Mapping[str, Register]) -> "KeyExtractionMap":
        tables: dict = {}
        arity: dict = {}
        for u in users:
            for layer, t in register_tables(registers[u]).items():
                tables.setdefault(layer, {})[u] = tuple(int(x) for x in t)
            arity.update(register_arities(registers[u]))
        layers = tuple(sorted(tables, key=layer_key))
        return KeyExtractionMap(tuple(users), layers, {k: arity[k] for k in layers},
                                {k: dict(sorted(tables[k].items())) for k in layers})


@dataclass(frozen=True)
class KeyDecode:
    keys: Mapping[frozenset, Optional[int]]
    disagreements: frozenset

    def __getitem__(self, layer) -> Optional[int]:
        return self.keys[frozenset(layer)]


def key_extract(outcome: Sequence[int], keymap: KeyExtractionMap) -> KeyDecode:
    """Decode every layer's key symbol from one computational-basis outcome.

    A layer whose members read different symbols is reported in
    ``disagreements`` (with the first member's reading kept); that happens
    only on noisy rounds.
    """
    pos = {u: i for i, u in enumerate(keymap.users)}
    keys: dict = {}
    bad = set()
    for layer in keymap.layers:
        reads = [keymap.tables[layer][u][outcome[pos[u]]] for u in keymap.members(layer)]
        keys[layer] = None if reads[0] == BOTTOM else reads[0]
        if any(r != reads[0] for r in reads):
            bad.add(layer)
    return KeyDecode(keys, frozenset(bad))


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Construction:
    state: SparseState
    keymap: KeyExtractionMap
    registers: Mapping[str, Register]
    parents: Mapping[frozenset, Optional[frozenset]] = field(default_factory=dict)
    nodes: Mapping[frozenset, "Construction"] = field(default_factory=dict)
    root_layer: Optional[frozenset] = None

    @property
    def users(self) -> tuple[str, ...]:
        return self.state.users

    @property
    def dims(self) -> dict[str, int]:
        return dict(zip(self.state.users, self.state.dims))

    def ancestors(self, layer: frozenset) -> list[frozenset]:
        out = []
        p = self.parents.get(layer)
        while p is not None:
            out.append(p)
            p = self.parents.get(p)
        return out

    def subconstruction(self, layer: frozenset) -> "Construction":
        """The construction rooted at the superpose node implementing ``layer``."""
        layer = frozenset(layer)
        if layer == self.root_layer:
            return self
        if layer not in self.nodes:
            raise KeyError(f"no superpose node implements {layer_label(layer)}")
        return self.nodes[layer]


def _construction(layout: RegisterLayout, amps, registers, parents=None, nodes=None,
                  root_layer=None) -> Construction:
    state = SparseState(layout, amps)
    keymap = KeyExtractionMap.from_registers(layout.users, registers)
    return Construction(state, keymap, dict(registers), dict(parents or {}), dict(nodes or {}),
                        root_layer)


def ghz_state(users: Iterable, d: int) -> SparseState:
    """(1/sqrt d) Σ_i |i…i⟩ over the given users."""
    return ghz_construction(users, d, layer=None).state


def ghz_construction(users: Iterable, d: int = 2, layer: Optional[frozenset] = "auto") -> Construction:
    users = tuple(sorted(str(u) for u in users))
    if not users or d < 1:
        raise ValueError("need at least one user and d >= 1")
    if layer == "auto":
        layer = frozenset(users) if d > 1 and len(users) >= 2 else None
    layout = RegisterLayout(users, tuple(digits(d) for _ in users))
    amp = 1 / math.sqrt(d)
    regs = {u: Leaf(layer, d) for u in users}
    parents = {} if layer is None else {layer: None}
    return _construction(layout, {(i,) * len(users): amp for i in range(d)}, regs, parents)


def empty_structure_state(users: Iterable) -> SparseState:
    return empty_construction(users).state


def empty_construction(users: Iterable) -> Construction:
    return ghz_construction(users, 1, layer=None)


def flat_construct(structure: LayeredKeyStructure) -> Construction:
    """Tensor product of one binary GHZ per layer, packed per user into digits.

    User j's digit is Σ b_i 2^pos_j(i) over j's layers, with pos_j counting
    j's layers in canonical order (first layer = least significant bit).
    """
    users = structure.users
    K = structure.K
    mine = {u: structure.layers_of(u) for u in users}
    index = {layer: i for i, layer in enumerate(structure.layers)}
    amp = 2 ** (-K / 2)
    amps = {}
    for bits in itertools.product((0, 1), repeat=K):
        basis = tuple(sum(bits[index[layer]] << pos for pos, layer in enumerate(mine[u]))
                      for u in users)
        amps[basis] = amp
    layout = RegisterLayout(users, tuple(digits(2 ** len(mine[u])) for u in users))

    registers = {}
    tables: dict = {layer: {} for layer in structure.layers}
    for u in users:
        reg: Register = Leaf(None, 1)
        for pos, layer in enumerate(mine[u]):
            reg = Leaf(layer, 2) if pos == 0 else Fused(reg, Leaf(layer, 2))
            tables[layer][u] = tuple((v >> pos) & 1 for v in range(2 ** len(mine[u])))
        registers[u] = reg
    keymap = KeyExtractionMap(users, structure.layers, {layer: 2 for layer in structure.layers},
                              {k: dict(sorted(v.items())) for k, v in tables.items()})
    return Construction(SparseState(layout, amps), keymap, registers,
                        {layer: None for layer in structure.layers})


def join_tensor(a: Construction, b: Construction) -> Construction:
    """Tensor product with shared users' registers fused (dimensions multiply)."""
    clash = set(a.keymap.layers) & set(b.keymap.layers)
    if clash:
        raise ValueError(f"layers {[layer_label(c) for c in clash]} appear in both inputs")
    users = tuple(sorted(set(a.users) | set(b.users)))
    pa = {u: i for i, u in enumerate(a.users)}
    pb = {u: i for i, u in enumerate(b.users)}

    alphabets, registers = [], {}
    for u in users:
        if u in pa and u in pb:
            xa, xb = a.state.layout.alphabets[pa[u]], b.state.layout.alphabets[pb[u]]
            if _plain(xa) and _plain(xb):
                alphabets.append(digits(len(xa) * len(xb)))
            else:
                alphabets.append(tuple(Symbol("pair", 0, (sa, sb)) for sb in xb for sa in xa))
            registers[u] = Fused(a.registers[u], b.registers[u])
        elif u in pa:
            alphabets.append(a.state.layout.alphabets[pa[u]])
            registers[u] = a.registers[u]
        else:
            alphabets.append(b.state.layout.alphabets[pb[u]])
            registers[u] = b.registers[u]

    da = dict(zip(a.users, a.state.dims))
    amps = {}
    for va, aa in a.state.amplitudes.items():
        for vb, ab in b.state.amplitudes.items():
            basis = []
            for u in users:
                if u in pa and u in pb:
                    basis.append(va[pa[u]] + da[u] * vb[pb[u]])
                elif u in pa:
                    basis.append(va[pa[u]])
                else:
                    basis.append(vb[pb[u]])
            amps[tuple(basis)] = aa * ab

    nodes = {**a.nodes, **b.nodes}
    for c in (a, b):
        if c.root_layer is not None:
            nodes[c.root_layer] = c
    return _construction(RegisterLayout(users, tuple(alphabets)), amps, registers,
                         {**a.parents, **b.parents}, nodes)


def join_superpose(branches: Sequence[Construction], parent_users: Optional[Iterable] = None) -> Construction:
    """Equal superposition of m >= 2 branch states in locally distinguishable subspaces.

    A user present in branch b sees that branch's symbols relabeled as
    primed(b, ·); a user absent from branch b gets the single symbol
    bottom(b) there. The result implements a new layer over the union of
    branch users whose key is the branch index.
    """
    m = len(branches)
    if m < 2:
        raise ValueError("a superposition needs at least two branches")
    union = frozenset().union(*(set(br.users) for br in branches))
    parent = union if parent_users is None else frozenset(str(u) for u in parent_users)
    if parent != union:
        raise ValueError("parent users must equal the union of the branch users")
    for br in branches:
        if parent in br.keymap.layers:
            raise ValueError(f"layer {layer_label(parent)} already implemented inside a branch")
    seen: set = set()
    for br in branches:
        if seen & set(br.keymap.layers):
            raise ValueError("branches implement overlapping layers")
        seen |= set(br.keymap.layers)

    users = tuple(sorted(parent))
    pos = [{u: i for i, u in enumerate(br.users)} for br in branches]
    alphabets, registers, offsets = [], {}, []
    for u in users:
        alpha, segs, offs = [], [], []
        for b, br in enumerate(branches):
            offs.append(len(alpha))
            if u in pos[b]:
                alpha.extend(primed(b, s) for s in br.state.layout.alphabets[pos[b][u]])
                segs.append(br.registers[u])
            else:
                alpha.append(bottom(b))
                segs.append(None)
        alphabets.append(tuple(alpha))
        registers[u] = Summed(parent, tuple(segs))
        offsets.append(offs)

    scale = 1 / math.sqrt(m)
    amps = {}
    for b, br in enumerate(branches):
        for v, a in br.state.amplitudes.items():
            basis = tuple(offsets[j][b] + (v[pos[b][u]] if u in pos[b] else 0)
                          for j, u in enumerate(users))
            amps[basis] = a * scale

    parents: dict = {}
    nodes: dict = {}
    for br in branches:
        for layer, p in br.parents.items():
            parents[layer] = parent if p is None else p
        nodes.update(br.nodes)
        if br.root_layer is not None:
            nodes[br.root_layer] = br
    parents[parent] = None
    return _construction(RegisterLayout(users, tuple(alphabets)), amps, registers, parents, nodes,
                         root_layer=parent)


def build_node(node: PlanNode) -> Construction:
    if node.kind == "leaf":
        return ghz_construction(node.users, 2)
    if node.kind == "empty":
        return empty_construction(node.users)
    return join_superpose([build_node(c) for c in node.children], node.users)


def build_from_plan(plan: ConstructionPlan) -> Construction:
    """Fold a plan into its state: leaves to GHZ states, superpose nodes to joins,
    roots tensor-joined left to right (the first root is least significant)."""
    plan.validate()
    acc: Optional[Construction] = None
    for root in plan.roots:
        part = build_node(root)
        acc = part if acc is None else join_tensor(acc, part)
    covered = set() if acc is None else set(acc.users)
    rest = [u for u in plan.users if u not in covered]
    if rest:
        pad = empty_construction(rest)
        acc = pad if acc is None else join_tensor(acc, pad)
    return acc


def dense_distribution(state: SparseState) -> np.ndarray:
    """Exact outcome probabilities over the full product alphabet (shape = dims)."""
    psi = state.to_dense()
    return np.abs(psi) ** 2
