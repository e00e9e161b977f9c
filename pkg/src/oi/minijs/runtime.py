"""MiniJS value semantics: rendering, truthiness, and operator dispatch."""

from __future__ import annotations

import math

from oi.values import FunctionRef, ObjectRef, format_number, is_number
from oi.vm import Unwind


class MiniJSError(Exception):
    """Raised by runtime helpers; actions turn it into a runtime fault."""


class MiniJSTypeError(MiniJSError):
    pass


class ReturnSignal(Unwind):
    """Unwinds a function body up to its call site."""

    def __init__(self, value):
        super().__init__()
        self.value = value


def render(v, heap=None) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if is_number(v):
        return format_number(float(v))
    if isinstance(v, str):
        return v
    if isinstance(v, ObjectRef):
        proto = "Object"
        if heap is not None:
            inst = heap.get(v)
            if inst is not None:
                proto = inst.proto
        return "[object %s]" % proto
    if isinstance(v, FunctionRef):
        return "[function %s]" % (v.name or "anonymous")
    if isinstance(v, tuple):
        return ",".join(render(x, heap) for x in v)
    return str(v)


def truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    if is_number(v):
        return v != 0 and not math.isnan(v)
    if isinstance(v, str):
        return v != ""
    return v is not None


def _numeric(v, op):
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if is_number(v):
        return float(v)
    if v is None:
        return 0.0
    raise MiniJSTypeError("operator %s cannot be applied to %s" % (op, type_name(v)))


def type_name(v):
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "boolean"
    if is_number(v):
        return "number"
    if isinstance(v, str):
        return "string"
    if isinstance(v, ObjectRef):
        return "object"
    if isinstance(v, FunctionRef):
        return "function"
    return type(v).__name__


def add_dispatch(l, r):
    """Runtime dispatch on operand types: numbers add, strings concatenate."""
    if is_number(l) and is_number(r) and not isinstance(l, bool) and not isinstance(r, bool):
        return float(l) + float(r)
    for v in (l, r):
        if isinstance(v, (ObjectRef, FunctionRef)):
            raise MiniJSTypeError("operator + cannot be applied to %s" % type_name(v))
    if isinstance(l, str) or isinstance(r, str):
        return render(l) + render(r)
    return _numeric(l, "+") + _numeric(r, "+")


def float_add(l, r):
    """Unchecked numeric sum: no coercion, numbers only."""
    if type(l) is not float or type(r) is not float:
        raise MiniJSTypeError("float addition expects numbers, got %s and %s" % (type_name(l), type_name(r)))
    return l + r


def sub(l, r):
    return _numeric(l, "-") - _numeric(r, "-")


def mul(l, r):
    return _numeric(l, "*") * _numeric(r, "*")


def div(l, r):
    a, b = _numeric(l, "/"), _numeric(r, "/")
    if b == 0:
        if a == 0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def less(l, r):
    if isinstance(l, str) and isinstance(r, str):
        return l < r
    return _numeric(l, "<") < _numeric(r, "<")


def greater(l, r):
    return less(r, l)


def equals(l, r, heap=None):
    """Strict equality; objects compare by identity seed."""
    if isinstance(l, ObjectRef) and isinstance(r, ObjectRef):
        if heap is None:
            return l.id == r.id
        return heap.identity(l) == heap.identity(r)
    if isinstance(l, bool) or isinstance(r, bool):
        return type(l) is type(r) and l == r
    if is_number(l) and is_number(r):
        return float(l) == float(r)
    if type(l) is not type(r):
        return False
    return l == r
