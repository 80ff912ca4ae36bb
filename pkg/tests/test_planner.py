import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lqkd.keystructure import StructureError, example_structure, validate_structure
from lqkd.plan import (
    ConstructionPlan,
    PlanError,
    dump_plan,
    empty,
    flat_plan,
    leaf,
    load_plan,
    plan_from_json,
    superpose,
)
from lqkd.planner import (
    PlanMetrics,
    dominates,
    enumerate_plans,
    format_metrics_table,
    pareto_front,
    plan_metrics,
    tradeoff_chain_plan,
)
from lqkd.quantum import build_from_plan

S442 = example_structure("442")
ABC, AB = frozenset("123"), frozenset("12")


def test_442_has_two_plans():
    plans = enumerate_plans(S442)
    assert [str(p) for p in plans] == ["{1,2,3} ⊗ {1,2}", "{1,2,3}(∅{1,2,3} {1,2})"]
    assert plans[0].is_flat()


def test_metrics_of_442_plans():
    flat, trade = (plan_metrics(p) for p in enumerate_plans(S442))
    assert flat.dims == {"1": 4, "2": 4, "3": 2} and flat.support == 4
    assert trade.dims == {"1": 3, "2": 3, "3": 2} and trade.support == 3
    assert trade.rates == {ABC: 1.0, AB: 0.5}
    assert flat.total_dimension == 32


def test_both_442_plans_on_front():
    plans = enumerate_plans(S442)
    assert [p.key() for p in pareto_front(plans)] == [p.key() for p in plans]


def test_duplicates_collapse():
    p = flat_plan(S442)
    assert len(pareto_front([p, p])) == 1


def test_dominance_constructed():
    a = PlanMetrics({"1": 2, "2": 2}, {AB: 1.0}, 2)
    b = PlanMetrics({"1": 3, "2": 2}, {AB: 1.0}, 3)
    assert dominates(a, b) and not dominates(b, a) and not dominates(a, a)


def test_arity_bound():
    s = example_structure("subsets4")
    two = enumerate_plans(s, 2)
    three = enumerate_plans(s, 3)
    assert len(two) == 11124 and len(three) == 32508
    assert all(n.arity <= 2 for p in two for n in p.nodes() if n.kind == "superpose")
    with pytest.raises(ValueError):
        enumerate_plans(s, 1)


def test_enumeration_guards():
    many = validate_structure(range(1, 8), [[1, k] for k in range(2, 8)] + [[2, k] for k in range(3, 8)]
                              + [[3, 4], [3, 5]])
    assert many.K == 13
    with pytest.raises(StructureError, match="too-large"):
        enumerate_plans(many)
    with pytest.raises(StructureError, match="not-connected"):
        enumerate_plans(validate_structure("1234", [["1", "2"], ["3", "4"]]))


def test_enumeration_is_duplicate_free():
    plans = enumerate_plans(example_structure("subsets4"), 3)
    keys = [p.key() for p in plans]
    assert len(keys) == len(set(keys))


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_chain_tradeoff(n):
    s = example_structure("chain", n)
    m = plan_metrics(tradeoff_chain_plan(s))
    assert m.dims[str(n)] == m.dims[str(n - 1)] == n
    assert all(m.dims[str(i)] == i + 1 for i in range(1, n - 1))
    for layer, r in m.rates.items():
        assert r == 2.0 ** -(n - len(layer))


def test_tradeoff_needs_chain():
    with pytest.raises(StructureError, match="not-a-chain"):
        tradeoff_chain_plan(example_structure("k4"))


def test_plan_json_round_trip(tmp_path):
    for p in enumerate_plans(example_structure("subsets4"))[:200:7]:
        dump_plan(p, tmp_path / "p.json")
        assert load_plan(tmp_path / "p.json") == p


def test_plan_document_format():
    doc = enumerate_plans(S442)[1].to_json()
    assert doc == {"kind": "tensor", "users": ["1", "2", "3"], "children": [
        {"kind": "superpose", "layer": ["1", "2", "3"], "children": [
            {"kind": "empty", "users": ["1", "2", "3"]}, {"kind": "leaf", "layer": ["1", "2"]}]}]}


@pytest.mark.parametrize("doc, msg", [
    ({"kind": "leaf"}, "tensor"),
    ({"kind": "tensor", "users": ["1", "2"], "children": [{"kind": "bogus"}]}, "unknown node kind"),
    ({"kind": "tensor", "users": ["1", "2", "3"], "children": [
        {"kind": "superpose", "layer": ["1", "2", "3"], "children": [{"kind": "leaf", "layer": ["1", "2"]}]}]},
     "at least 2 children"),
    ({"kind": "tensor", "users": ["1", "2", "3"], "children": [
        {"kind": "superpose", "layer": ["1", "2", "3"], "children": [
            {"kind": "leaf", "layer": ["1", "2"]}, {"kind": "leaf", "layer": ["1", "3"]}]},
        {"kind": "leaf", "layer": ["1", "2"]}]},
     "more than once"),
])
def test_plan_validation(doc, msg):
    with pytest.raises(PlanError, match=msg):
        plan_from_json(doc)


def test_plan_must_match_structure():
    p = ConstructionPlan(("1", "2", "3"), (leaf("123"),))
    with pytest.raises(PlanError, match="layers differ"):
        p.validate(S442)


def test_metrics_table_marks_front():
    plans = enumerate_plans(S442)
    table = format_metrics_table(plans, plans[:1]).splitlines()
    assert table[0].split() == ["#", "P", "dims", "rates", "support", "plan"]
    assert table[1].split()[1] == "*" and "*" not in table[2].split()[1]


def test_arity_counts_padding():
    node = superpose("123", [empty("123"), leaf("12")])
    assert node.arity == 2
    trade = enumerate_plans(validate_structure("1234", [["1", "2", "3", "4"], ["1", "2"], ["3", "4"]]))
    no_pad = [p for p in trade if any(n.kind == "superpose" and not any(c.kind == "empty" for c in n.children)
                                      for n in p.nodes())]
    assert no_pad, "two children covering the parent need no padding"
    assert plan_metrics(no_pad[0]).rates[frozenset("12")] == 0.5


@pytest.fixture(scope="module")
def subsets4_small():
    plans = enumerate_plans(example_structure("subsets4"))
    return [p for p in plans if plan_metrics(p).support <= 64]


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_built_dims_match_metrics(subsets4_small, data):
    plan = data.draw(st.sampled_from(subsets4_small))
    m = plan_metrics(plan)
    c = build_from_plan(plan)
    assert c.dims == m.dims
    assert len(c.state.amplitudes) == m.support


def test_flat_plan_on_front_of_subsets4():
    plans = enumerate_plans(example_structure("subsets4"))
    front = pareto_front(plans)
    keys = {p.key() for p in front}
    assert plans[0].key() in keys
    # spot-check both directions against the scalar dominance rule
    rng = random.Random(5)
    on = [plan_metrics(p) for p in rng.sample(front, 150)]
    assert not any(dominates(a, b) for a in on for b in on)
    front_m = [plan_metrics(p) for p in front]
    for p in rng.sample([p for p in plans if p.key() not in keys], 20):
        m = plan_metrics(p)
        assert any(dominates(f, m) for f in front_m)


def test_rates_follow_ancestor_arity():
    for plan in enumerate_plans(example_structure("subsets4"), 3)[::997]:
        rates = plan_metrics(plan).rates
        for layer, above in plan.ancestors().items():
            node = next(n for n in plan.nodes() if n.layer == layer)
            bits = 1.0 if node.kind == "leaf" else math.log2(node.arity)
            assert rates[layer] == pytest.approx(bits / math.prod(a.arity for a in above))
