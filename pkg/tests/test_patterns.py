"""Tree patterns: surface syntax, compilation, matching, dynamic constraints."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from oi.minijs import minijs_spec
from oi.parser import parse_source
from oi.patterns import (AncestorDescendant, AnyNode, Atom, Binding, DynamicConstraint, EndemicName,
                         HeadNonterminal, NonterminalPosition, ParentChild, PatternError, SliceName,
                         WholeProduction, compile_pattern, eval_constraints, format_pattern, match_nodes,
                         parse_pattern, target_from_dict, target_to_dict)
from oracles import brute_anchors, random_target, random_tree

SPEC = minijs_spec()
ADD = WholeProduction("miniJS.AddSyntax", "Add")


def _match(src, bindings, text):
    tree = parse_source(src, SPEC)
    return tree, match_nodes(tree, compile_pattern(bindings, text), SPEC)


def test_parse_shapes_constraints_filter():
    shape, cs, flt = parse_pattern('a[val==4, name!="x"] << b[+<val>=2>+] | b')
    assert shape == AncestorDescendant(Atom("a"), Atom("b"))
    assert cs == (DynamicConstraint("a", "val", "==", 4.0), DynamicConstraint("a", "name", "!=", "x"),
                  DynamicConstraint("b", "val", ">=", 2.0))
    assert flt == "b"
    assert parse_pattern("a < b")[0] == ParentChild(Atom("a"), Atom("b"))
    assert parse_pattern("flag[on==true]")[1] == (DynamicConstraint("flag", "on", "==", True),)


@pytest.mark.parametrize("text", ["", "a <", "a[val 4]", "a[val==]", "a | ", "a b", "a[val<\"s\"]", "a # b"])
def test_malformed_patterns(text):
    with pytest.raises(PatternError):
        parse_pattern(text)


def test_compile_checks_identifiers():
    b = [Binding("a", ADD), Binding("s", SliceName("miniJS.AddEval")), Binding("e", EndemicName("Heap"))]
    with pytest.raises(PatternError):
        compile_pattern(b, "z")
    with pytest.raises(PatternError):
        compile_pattern(b, "s")  # slices are not tree nodes
    with pytest.raises(PatternError):
        compile_pattern(b, "a < a")
    with pytest.raises(PatternError):
        compile_pattern(b, "a | e")


def test_whole_production_matches_each_occurrence():
    tree, m = _match("print(1+2+3);", [Binding("a", ADD)], "a")
    assert len(m) == 2
    by_id = {n.id: n for n in tree.walk()}
    assert {by_id[a].production.label for a in m.anchors} == {"Add"}
    assert m.anchors == sorted(m.anchors)


def test_nonterminal_position_selects_child():
    src = "print(1+(2+3));"
    tree, m = _match(src, [Binding("r", NonterminalPosition("miniJS.AddSyntax", "Add", 2))], "r")
    assert [src[slice(*n.span)] for n in tree.walk() if n.id in m.anchors] == ["(2+3)", "3"]


def test_parent_child_and_filter():
    src = "print(2+(4+3));"
    b = [Binding("h", ADD), Binding("l", NonterminalPosition("miniJS.AddSyntax", "Add", 1))]
    tree, m = _match(src, b, "h < l | h")
    assert len(m) == 2
    _, unfiltered = _match(src, b, "h < l")
    assert len(unfiltered) == 4  # both heads and both left operands


def test_ancestor_descendant():
    b = [Binding("p", WholeProduction("miniJS.PrintSyntax", "Print")), Binding("n", HeadNonterminal("Expr"))]
    _, m = _match("print(1+2);", b, "p << n | n")
    assert len(m) == 3


def test_any_node_matches_everything():
    tree, m = _match("print(1);", [Binding("n", AnyNode())], "n")
    assert m.anchors == [n.id for n in tree.walk()]


def test_unknown_production_matches_nothing():
    _, m = _match("print(1);", [Binding("x", WholeProduction("nope.Syntax", "Add"))], "x")
    assert len(m) == 0


def test_dynamic_constraints_evaluated_on_attributes():
    from oi.vm import Interpreter
    vm = Interpreter(SPEC, "print(2+(4+3));")
    vm.run()
    b = [Binding("h", ADD), Binding("l", NonterminalPosition("miniJS.AddSyntax", "Add", 1))]
    pattern = compile_pattern(b, "h < l[val==4] | h")
    hits = [e.anchor for e in match_nodes(vm.tree, pattern, SPEC).entries
            if eval_constraints(pattern, e.env, vm.tree, "evaluation", SPEC.role_order)]
    assert len(hits) == 1
    assert vm.source[slice(*vm.node(hits[0]).span)] == "4+3"
    never = compile_pattern(b, "h < l[missing==1] | h")
    assert not any(eval_constraints(never, e.env, vm.tree, "evaluation", SPEC.role_order)
                   for e in match_nodes(vm.tree, never, SPEC).entries)


def test_target_wire_round_trip():
    for t in (ADD, NonterminalPosition("m", "L", 2), HeadNonterminal("Expr"), AnyNode()):
        assert target_from_dict(target_to_dict(t)) == t
    with pytest.raises(PatternError):
        target_from_dict({"kind": "weird"})


# -- oracle checks --------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matcher_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    tree = random_tree(rng, rng.randint(1, 80))
    targets = {"a": random_target(rng), "b": random_target(rng)}
    kind = rng.choice([Atom, ParentChild, AncestorDescendant])
    shape = Atom("a") if kind is Atom else kind(Atom("a"), Atom("b"))
    flt = rng.choice([None, "a"] if kind is Atom else [None, "a", "b"])
    pattern = compile_pattern([Binding(k, v) for k, v in targets.items()], format_pattern(shape, (), flt))
    got = match_nodes(tree, pattern)
    assert set(got.anchors) == brute_anchors(tree, shape, targets, flt)
    for e in got.entries:  # every environment binds nodes that really are related
        assert e.anchor in e.env.values()


_ident = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True).filter(lambda s: s not in ("true", "false"))
_const = st.one_of(st.integers(-100, 100).map(float), st.booleans(),
                   st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=6))


@st.composite
def _patterns(draw):
    a, b = draw(st.lists(_ident, min_size=2, max_size=2, unique=True))
    kind = draw(st.sampled_from([Atom, ParentChild, AncestorDescendant]))
    shape = Atom(a) if kind is Atom else kind(Atom(a), Atom(b))
    atoms = [a] if kind is Atom else [a, b]
    cs = []
    for atom in atoms:
        for _ in range(draw(st.integers(0, 2))):
            v = draw(_const)
            op = draw(st.sampled_from(["==", "!="] if isinstance(v, (str, bool)) else ["==", "!=", "<", "<=", ">", ">="]))
            cs.append(DynamicConstraint(atom, draw(_ident), op, v))
    flt = draw(st.sampled_from([None] + atoms))
    return shape, tuple(cs), flt


@settings(max_examples=200, deadline=None)
@given(_patterns())
def test_pattern_text_round_trip(p):
    shape, cs, flt = p
    text = format_pattern(shape, cs, flt)
    assert parse_pattern(text) == (shape, cs, flt)
