"""MiniJS semantics, instantiation strategies, migration and persistence."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from oi.minijs import minijs_spec
from oi.minijs.objects import Heap, StoreError, reachable
from oi.minijs.runtime import add_dispatch, div, equals, render, truthy
from oi.values import FunctionRef, ObjectRef, decode, encode, format_number
from oi.vm import Interpreter
from support import CORPUS, run_closed


def _out(src, **opts):
    r = run_closed(src, **opts)
    assert r.error is None, r.error
    return r.stdout


# -- values -----------------------------------------------------------------------

@pytest.mark.parametrize("x, text", [(6.0, "6"), (11.5, "11.5"), (-0.0, "0"), (1e21, "1e+21"), (0.1, "0.1"),
                                     (math.inf, "Infinity"), (-math.inf, "-Infinity"), (math.nan, "NaN")])
def test_format_number(x, text):
    assert format_number(x) == text


_runtime_values = st.one_of(st.none(), st.booleans(), st.floats(allow_nan=False), st.text(max_size=10),
                            st.builds(ObjectRef, st.integers(1, 10**6)),
                            st.builds(FunctionRef, st.integers(0, 10**6), st.text(max_size=5)))


@settings(max_examples=200, deadline=None)
@given(_runtime_values)
def test_value_encoding_round_trip(v):
    assert decode(encode(v)) == v


def test_nan_encoding():
    assert math.isnan(decode(encode(math.nan)))


def test_operator_semantics():
    assert add_dispatch(1.0, 2.0) == 3.0
    assert add_dispatch("a", 1.0) == "a1"
    assert add_dispatch(True, None) == 1.0
    assert div(1.0, 0.0) == math.inf and div(-1.0, 0.0) == -math.inf and math.isnan(div(0.0, 0.0))
    assert div(1.0, -0.0) == -math.inf
    assert equals(1.0, 1.0) and not equals(1.0, "1") and not equals(True, 1.0)
    assert [truthy(v) for v in (0.0, "", None, math.nan, "0", 2.0)] == [False, False, False, False, True, True]
    assert render((1.0, "a", None)) == "1,a,null"


# -- programs ---------------------------------------------------------------------

def test_arith_corpus():
    assert _out(CORPUS["arith"]) == "6\n11.5\nab\ntotal: 3\nInfinity\n-Infinity\nNaN\n-5\ntrue\ntrue\ntrue\n"


def test_functions_recursion_and_scopes():
    assert _out(CORPUS["loops"]).splitlines()[:3] == ["fact(0) = 1", "fact(1) = 1", "fact(2) = 2"]
    assert _out("x = 1; function f() { x = 2; y = 3; } f(); print(x);") == "2\n"
    assert _out("function f(a) { x = a; } print(f(1));") == "null\n"


def test_objects_and_this():
    assert _out(CORPUS["linked"]) == "25\n16\n9\n4\n1\nsum 55\n"
    assert _out("function P(x) { this.x = x; } p = new P(3); p.x = p.x + 1; print(p.x); print(p);") == \
        "4\n[object P]\n"


@pytest.mark.parametrize("src, message", [
    ("print(y);", "y"),
    ('fail("custom");', "custom"),
    ("f(1);", "f"),
    ("function P() {} p = new P(); print(p + 1);", "+"),
    ("x = 3; print(x.y);", "field of number"),
])
def test_runtime_errors(src, message):
    r = run_closed(src)
    assert r.error is not None and message in r.error


def test_float_add_slice_rejects_strings():
    assert run_closed("print(1+2);", add="float").stdout == "3\n"
    assert "float addition" in run_closed('print("a"+1);', add="float").error


def test_subtract_add_slice():
    assert run_closed("print(10+4);", add="subtract").stdout == "6\n"


# -- instantiation strategies -----------------------------------------------------

@pytest.mark.parametrize("name", ["persons", "linked"])
@pytest.mark.parametrize("strategy", ["arraylike", "persistent"])
def test_strategies_are_observationally_equivalent(name, strategy):
    assert _out(CORPUS[name], instance=strategy) == _out(CORPUS[name])


def test_arraylike_layout_fixed_after_constructor():
    src = "function P() { this.a = 1; } p = new P(); p.a = 2; print(p.a); p.b = 3;"
    r = run_closed(src, instance="arraylike")
    assert r.stdout == "2\n" and "layout is fixed" in r.error
    assert run_closed(src).error is None  # hash maps grow freely


_fields = st.dictionaries(st.from_regex(r"[a-z]{1,6}", fullmatch=True),
                          st.one_of(st.none(), st.booleans(), st.floats(allow_nan=False), st.text(max_size=8)),
                          max_size=6)


@settings(max_examples=60, deadline=None)
@given(_fields, st.sampled_from(["hashmap", "arraylike", "persistent"]))
def test_field_round_trip(tmp_path_factory, fields, strategy):
    heap = Heap(tmp_path_factory.mktemp("store"))
    inst = heap.allocate("P", strategy)
    for k, v in fields.items():
        inst.set(k, v)
    inst.seal()
    assert inst.fields() == fields
    if strategy == "persistent":  # a fresh heap on the same store sees the same fields
        again = Heap(heap.store.root).allocate("P", "persistent", seed=inst.seed)
        assert again.fields() == fields


def test_persistent_references_by_seed(tmp_path):
    heap = Heap(tmp_path)
    a = heap.allocate("Node", "persistent")
    b = heap.allocate("Node", "persistent")
    b.set("next", ObjectRef(a.id))
    fresh = Heap(tmp_path)
    nb = fresh.allocate("Node", "persistent", seed=b.seed)
    ref = nb.get("next")
    assert fresh.get(ref).seed == a.seed


def test_corrupt_store_file_reported(tmp_path):
    heap = Heap(tmp_path)
    inst = heap.allocate("P", "persistent")
    heap.store.path(inst.seed).write_text("{broken")
    with pytest.raises(StoreError):
        inst.get("x")


# -- migration --------------------------------------------------------------------

def _run(src):
    vm = Interpreter(minijs_spec(), src)
    vm.run()
    return vm


def test_migration_moves_reachable_objects_only():
    vm = _run("function P(x) { this.x = x; } a = new P(1); b = new P(2); new P(3); a.other = b;")
    heap, st_ = vm.get_endemic("Heap"), vm.get_endemic("SymbolTable")
    assert len(reachable(heap, st_)) == 2
    moved = vm.endemic_call("miniJS.SymbolTable", "migrateInstances", ("P", "ArrayLikeInstance"))
    assert moved == 2.0
    assert vm.endemic_call("miniJS.SymbolTable", "migrateInstances", ("P", "ArrayLikeInstance")) == 0.0
    strategies = sorted(o.strategy for o in heap.objects.values())
    assert strategies == ["ArrayLikeInstance", "ArrayLikeInstance", "HashMapInstance"]
    a = heap.get(st_.globals["a"])
    assert heap.get(a.get("other")).get("x") == 2.0


def test_migration_keeps_identity_and_forwards_old_ids():
    vm = _run("function P() {} a = new P(); b = a;")
    heap, st_ = vm.get_endemic("Heap"), vm.get_endemic("SymbolTable")
    old = st_.globals["a"]
    seed = heap.get(old).seed
    vm.endemic_call("miniJS.SymbolTable", "migrateInstances", ("P", "arraylike"))
    new = st_.globals["a"]
    assert new != old and heap.get(old) is heap.get(new)  # the stale id still resolves
    assert heap.get(new).seed == seed and equals(new, st_.globals["b"], heap)


def test_program_output_unchanged_after_migration_and_redo():
    vm = _run(CORPUS["persons"])
    first = vm.stdout
    vm.endemic_call("miniJS.SymbolTable", "migrateInstances", ("Position", "ArrayLikeInstance"))
    vm.redo_role("evaluation")
    assert vm.stdout == first * 2
