"""The reflective API: snapshots, introspection, intercession, batches."""

import json

import pytest
from hypothesis import given, settings, strategies as st

from oi import mop
from oi.minijs import minijs_spec
from oi.mop import MOP, NodeInfo, ProductionInfo, RoleInfo, SemanticActionInfo, SliceInfo
from oi.patterns import Binding, WholeProduction, compile_pattern
from oi.vm import FunctionAgent, Interpreter, InterpreterError

SPEC = minijs_spec()
SUB_KEY = ("miniJS.SubtractAddEval", "Add", "evaluation")


def _vm(src="print(1+2+3);", run=True):
    vm = Interpreter(SPEC, src)
    if run:
        vm.run()
    return vm


def _add_ids(vm):
    return [n.id for n in vm.tree.walk() if n.production.label == "Add"]


def _json_round_trip(info):
    return type(info).from_dict(json.loads(json.dumps(info.to_dict())))


def test_tree_snapshot_round_trips_and_is_immutable():
    vm = _vm()
    tree = MOP(vm).get_tree()
    assert _json_round_trip(tree) == tree
    outer = next(n for n in tree.walk() if n.production == ("miniJS.AddSyntax", "Add"))
    assert outer.attr("val") == 6.0
    vm.set_override(outer.id, "evaluation", SUB_KEY)
    vm.redo_role("evaluation")
    assert outer.attr("val") == 6.0  # the snapshot did not change
    assert MOP(vm).get_node(outer.id).attr("val") == 0.0  # (1+2)-3: only the outer node changed
    assert vm.stdout == "6\n0\n"
    assert MOP(vm).get_node(outer.id).has_override("evaluation")


def test_get_action_and_production():
    vm = _vm()
    m = MOP(vm)
    add = _add_ids(vm)[0]
    a = m.get_action(add, "evaluation")
    assert a == SemanticActionInfo(("miniJS.AddEval", "Add", "evaluation"), ("val",),
                                   ((0, "val"), (1, "val")))
    assert _json_round_trip(a) == a
    p = m.get_production(add)
    assert (p.module, p.label, p.head, p.nonterminals) == ("miniJS.AddSyntax", "Add", "Expr", ["Expr", "Expr"])
    assert _json_round_trip(p) == p
    assert m.get_action(0, "evaluation").key is None  # Program visits its children
    with pytest.raises(InterpreterError):
        m.get_action(add, "nope")


def test_roles_and_idle_role():
    vm = _vm()
    m = MOP(vm)
    assert m.get_roles() == [RoleInfo("syntax", 0), RoleInfo("evaluation", 1)]
    assert m.get_role().idle
    seen = []
    vm.register(compile_pattern([Binding("a", WholeProduction("miniJS.AddSyntax", "Add"))], "a"), "before",
                "evaluation", FunctionAgent(lambda vm, e: seen.append(MOP(vm).get_role())))
    vm.redo_role("evaluation")
    assert seen == [RoleInfo("evaluation", 1)] * 2


def test_grammar_and_slices():
    m = MOP(_vm())
    labels = {(p.module, p.label) for p in m.get_grammar_productions()}
    assert ("miniJS.AddSyntax", "Add") in labels and len(labels) == len(SPEC.productions)
    slices = m.get_slices()
    names = {s.name for s in slices}
    assert "miniJS.AddEval" in names and "miniJS.SubtractAddEval" not in names
    assert any(s.endemic and s.binding_id == "Heap" for s in slices)
    for s in slices:
        assert _json_round_trip(s) == s
    registry = {s.name for s in m.get_slice_registry()}
    assert {"miniJS.SubtractAddEval", "miniJS.FloatAddEval"} <= registry


def test_find_action():
    m = MOP(_vm())
    assert m.find_action("miniJS.SubtractAddEval", "Add", "evaluation").key == SUB_KEY
    with pytest.raises(InterpreterError):
        m.find_action("miniJS.Nope", "Add", "evaluation")


def test_attributes_get_set_with_role_fallback():
    vm = _vm()
    m = MOP(vm)
    add = _add_ids(vm)[0]
    assert m.get_attr(add, "val", "evaluation") == 6.0
    m.set_attr(add, "note", "hello", "syntax")
    assert m.get_attr(add, "note", "evaluation") == "hello"  # later roles see earlier ones
    assert m.get_attr(add, "note", "syntax") == "hello"
    with pytest.raises(InterpreterError):  # earlier roles do not see later ones
        m.get_attr(add, "val", "syntax")


def test_replace_slice_and_redo():
    vm = _vm()
    m = MOP(vm)
    m.replace_slice("miniJS.AddEval", "miniJS.SubtractAddEval")
    m.redo_role("evaluation")
    assert vm.stdout == "6\n-4\n"
    assert vm.state.spec_version == 1
    with pytest.raises(InterpreterError) as e:
        m.replace_slice("miniJS.SubtractAddEval", "miniJS.MulEval")
    assert e.value.code == "SyntaxMismatch"


def test_endemic_call():
    vm = _vm('function P() {} a = new P(); print("x");')
    assert MOP(vm).endemic_call("Heap", "count") == 1.0


def test_execute_validates_before_running():
    vm = _vm()
    for bad in ({"op": "nope"}, {"op": "getNode", "args": {"node": 999}},
                {"op": "getAction", "args": {"node": 0, "role": "nope"}},
                {"op": "replaceSlice", "args": {"old": "miniJS.AddEval", "new": "x"}},
                {"op": "endemicCall", "args": {"endemic": "Heap", "op": "drop"}},
                {"op": "getAttr", "args": {}}):
        with pytest.raises(InterpreterError):
            mop.execute(vm, bad)


def test_batch_is_all_or_nothing():
    vm = _vm()
    add = _add_ids(vm)[0]
    cmds = [{"op": "setSpecializedAction", "args": {"node": add, "action": list(SUB_KEY), "role": "evaluation"}},
            {"op": "replaceSlice", "args": {"old": "miniJS.AddEval", "new": "miniJS.FloatAddEval"}},
            {"op": "replaceSlice", "args": {"old": "miniJS.AddEval", "new": "miniJS.SubtractAddEval"}}]
    with pytest.raises(InterpreterError):  # the third fails: AddEval is gone by then
        mop.execute_batch(vm, cmds)
    assert vm.overrides == {} and vm.spec is SPEC and vm.state.spec_version == 0


def test_batch_result_references():
    vm = _vm()
    add = _add_ids(vm)[0]
    results = mop.execute_batch(vm, [
        {"op": "getAttr", "args": {"node": add, "name": "val", "role": "evaluation"}},
        {"op": "setAttr", "args": {"node": add, "name": "copy", "value": {"$ref": 0}, "role": "evaluation"}},
        {"op": "getAttr", "args": {"node": add, "name": "copy", "role": "evaluation"}}])
    assert results[0] == results[2] == {"t": "num", "v": 6.0}
    with pytest.raises(InterpreterError):
        mop.execute_batch(vm, [{"op": "getAttr", "args": {"node": {"$ref": 0}, "name": "val"}}])


def test_intercession_during_hook_affects_rest_of_run():
    vm = _vm("print(1+2); print(1+2);", run=False)
    adds = _add_ids(vm)

    def hook(vm, e):
        if e.anchor == adds[0]:
            MOP(vm).replace_slice("miniJS.AddEval", "miniJS.SubtractAddEval")
    vm.register(compile_pattern([Binding("a", WholeProduction("miniJS.AddSyntax", "Add"))], "a"),
                "after", "evaluation", FunctionAgent(hook))
    vm.run()
    assert vm.stdout == "3\n-1\n"


_values = st.one_of(st.none(), st.booleans(), st.floats(allow_nan=False), st.text(max_size=8))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["syntax", "evaluation"]),
                          st.from_regex(r"[a-z]{1,6}", fullmatch=True), _values), max_size=5))
def test_node_info_json_round_trip(attrs):
    info = NodeInfo(3, ("m.Syntax", "L"), "Expr", (4, 5), (0, 7), tuple(attrs),
                    (("evaluation", ("m.Eval", "L", "evaluation")),))
    assert _json_round_trip(info) == info


def test_production_info_of_spec_round_trips():
    for p in SPEC.productions:
        info = ProductionInfo.of(p)
        assert _json_round_trip(info) == info


def test_slice_info_of_registry_round_trips():
    for s in MOP(_vm()).get_slice_registry():
        assert isinstance(s, SliceInfo) and _json_round_trip(s) == s
