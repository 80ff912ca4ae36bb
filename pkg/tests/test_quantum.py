import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings

import oracles
from lqkd.keystructure import example_structure, validate_structure
from lqkd.plan import ConstructionPlan, PlanNode, flat_plan, leaf
from lqkd.planner import tradeoff_chain_plan
from lqkd.quantum import (
    BOTTOM,
    RegisterLayout,
    SparseState,
    Symbol,
    bottom,
    build_from_plan,
    dense_distribution,
    digit,
    digits,
    dump_state,
    empty_construction,
    flat_construct,
    ghz_construction,
    ghz_state,
    join_superpose,
    join_tensor,
    key_extract,
    load_state,
    primed,
)
from strategies import connected_structures, plans

ABC, AB = frozenset("123"), frozenset("12")


def test_ghz_state():
    s = ghz_state(["b", "a"], 3)
    assert s.users == ("a", "b") and s.dims == (3, 3)
    assert s.amplitudes == pytest.approx({(0, 0): 3 ** -0.5, (1, 1): 3 ** -0.5, (2, 2): 3 ** -0.5})


def test_empty_structure_is_trivial():
    c = empty_construction("123")
    assert c.state.dims == (1, 1, 1) and c.state.amplitudes == {(0, 0, 0): 1}
    assert c.keymap.layers == ()


def test_state_validation():
    layout = RegisterLayout(("1",), (digits(2),))
    with pytest.raises(ValueError, match="normalized"):
        SparseState(layout, {(0,): 1, (1,): 1})
    with pytest.raises(ValueError, match="does not fit"):
        SparseState(layout, {(2,): 1})
    with pytest.raises(ValueError, match="repeated"):
        RegisterLayout(("1",), ((digit(0), digit(0)),))


def test_dense_guard():
    s = example_structure("subsets4")
    state = flat_construct(s).state
    assert math.prod(state.dims) > 2 ** 20
    with pytest.raises(ValueError):
        state.to_dense()


def test_tensor_of_ghz_matches_kron():
    a = ghz_construction("12")
    b = ghz_construction("23")
    c = join_tensor(a, b)
    assert c.state.dims == (2, 4, 2)
    # user 2 digit = bit(a) + 2 * bit(b)
    expected = np.zeros((2, 4, 2))
    for x, y in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        expected[x, x + 2 * y, y] = 0.5
    assert np.allclose(c.state.to_dense(), expected)


def test_superpose_labels_and_layout():
    c = build_from_plan(tradeoff_chain_plan(example_structure("442")))
    labels = [[str(s) for s in c.state.layout.alphabet(u)] for u in c.users]
    assert labels == [["0", "0′", "1′"], ["0", "0′", "1′"], ["0", "⊥′"]]
    assert np.allclose(c.state.to_dense(), oracles.psi332())


def test_superpose_rejects_bad_input():
    g = ghz_construction("12")
    with pytest.raises(ValueError, match="two branches"):
        join_superpose([g])
    with pytest.raises(ValueError, match="union"):
        join_superpose([g, empty_construction("12")], "123")
    with pytest.raises(ValueError, match="both inputs"):
        join_tensor(g, ghz_construction("12"))


def test_key_extract_on_332():
    c = build_from_plan(tradeoff_chain_plan(example_structure("442")))
    k = key_extract((2, 2, 1), c.keymap)
    assert (k[ABC], k[AB]) == (1, 1) and not k.disagreements
    k = key_extract((0, 0, 0), c.keymap)
    assert (k[ABC], k[AB]) == (0, None)
    assert key_extract((1, 2, 1), c.keymap).disagreements == {AB}


def test_symbol_json_round_trip():
    syms = [digit(3), primed(1, digit(0)), bottom(2), primed(0, bottom(1)),
            Symbol("pair", 0, (digit(1), primed(1, digit(0))))]
    for s in syms:
        assert Symbol.from_json(s.to_json()) == s


def test_state_file_round_trip(tmp_path):
    for plan in [flat_plan(example_structure("442")), tradeoff_chain_plan(example_structure("chain", 4))]:
        state = build_from_plan(plan).state
        dump_state(state, tmp_path / "s.json")
        back = load_state(tmp_path / "s.json")
        assert back.equals(state, tol=0) and back.layout == state.layout


@pytest.mark.parametrize("name", ["442", "k4", "chain"])
def test_flat_matches_kron_oracle(name):
    s = example_structure(name, 4 if name == "chain" else None)
    dense, dims = oracles.flat_oracle(s.users, s.layers)
    state = flat_construct(s).state
    assert state.dims == dims
    assert np.allclose(state.to_dense(), dense, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(connected_structures())
def test_flat_equals_tensor_of_leaves(s):
    a, b = flat_construct(s), build_from_plan(flat_plan(s))
    assert a.state.equals(b.state)
    assert a.keymap == b.keymap


@settings(max_examples=60, deadline=None)
@given(plans())
def test_normalized(plan):
    p = build_from_plan(plan).state.probabilities
    assert abs(p.sum() - 1) < 1e-12


def _expected_dims(node: PlanNode, users):
    if node.kind == "leaf":
        return {u: 2 for u in node.users}
    if node.kind == "empty":
        return {u: 1 for u in node.users}
    parts = [_expected_dims(c, users) for c in node.children]
    return {u: sum(d.get(u, 1) for d in parts) for u in node.users}


@settings(max_examples=60, deadline=None)
@given(plans())
def test_dims_rules(plan):
    """Tensor joins multiply local dimensions, superpositions add them (absent user counts 1)."""
    want = {u: 1 for u in plan.users}
    for root in plan.roots:
        for u, d in _expected_dims(root, plan.users).items():
            want[u] *= d
    assert build_from_plan(plan).dims == want


@settings(max_examples=60, deadline=None)
@given(plans())
def test_keys_agree_on_every_support_vector(plan):
    c = build_from_plan(plan)
    for basis in c.state.amplitudes:
        k = key_extract(basis, c.keymap)
        assert not k.disagreements


@settings(max_examples=60, deadline=None)
@given(plans())
def test_local_distinguishability(plan):
    """Each member's own symbol fixes the branch of every superposition it belongs to."""
    c = build_from_plan(plan)
    km = c.keymap
    for layer in km.layers:
        if km.arity[layer] == 2 and not any(n.layer == layer and n.kind == "superpose" for n in plan.nodes()):
            continue
        for u in km.members(layer):
            table = km.table(layer, u)
            seen: dict = {}
            for basis in c.state.amplitudes:
                sym = basis[c.users.index(u)]
                branch = key_extract(basis, km)[layer]
                assert seen.setdefault(sym, branch) == branch
                assert (None if table[sym] == BOTTOM else table[sym]) == branch


@settings(max_examples=40, deadline=None)
@given(plans(max_layers=4))
def test_readable_keys_are_uniform_and_independent(plan):
    """Exact check on the dense distribution.

    The superposition keys decide which layers are readable. Given all of
    them, the readable leaf keys are uniform and mutually independent; each
    superposition key is uniform over its arity whenever it is readable.
    """
    c = build_from_plan(plan)
    probs = dense_distribution(c.state)
    km = c.keymap
    inner = [n.layer for n in plan.nodes() if n.kind == "superpose"]
    leaves = [n.layer for n in plan.nodes() if n.kind == "leaf"]
    groups: dict = {}
    marginals = {layer: Counter() for layer in inner}
    for idx in zip(*np.nonzero(probs)):
        k = key_extract(idx, km)
        p = probs[idx]
        for layer in inner:
            if k[layer] is not None:
                marginals[layer][k[layer]] += p
        head = tuple(k[layer] for layer in inner)
        groups.setdefault(head, Counter())[tuple(k[layer] for layer in leaves)] += p
    for layer, dist in marginals.items():
        total = sum(dist.values())
        assert len(dist) == km.arity[layer]
        assert all(abs(v / total - 1 / km.arity[layer]) < 1e-9 for v in dist.values())
    for dist in groups.values():
        readable = sum(v is not None for v in next(iter(dist)))
        total = sum(dist.values())
        assert len(dist) == 2 ** readable
        assert all(abs(v / total - 2.0 ** -readable) < 1e-9 for v in dist.values())


def test_bottom_only_for_non_members():
    c = build_from_plan(tradeoff_chain_plan(example_structure("chain", 4)))
    for layer in c.keymap.layers:
        for u in c.keymap.members(layer):
            assert set(c.keymap.table(layer, u)) <= set(range(c.keymap.arity[layer])) | {BOTTOM}


def test_roots_cover_missing_users():
    plan = ConstructionPlan(("1", "2", "3"), (leaf("12"),))
    c = build_from_plan(plan)
    assert c.dims == {"1": 2, "2": 2, "3": 1}


def test_subconstruction():
    c = build_from_plan(tradeoff_chain_plan(example_structure("chain", 4)))
    root = frozenset("1234")
    assert c.subconstruction(root) is c
    inner = c.subconstruction(frozenset("234"))
    assert set(inner.users) == set("234")
    with pytest.raises(KeyError):
        c.subconstruction(frozenset("34"))
    assert c.ancestors(frozenset("34")) == [frozenset("234"), root]


def test_validate_structure_accepts_chars():
    s = validate_structure("ab", ["ab"])
    assert flat_construct(s).state.dims == (2, 2)
