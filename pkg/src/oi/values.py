"""Runtime values and their tagged-union wire encoding.

Numbers are Python floats, strings are ``str``, booleans ``bool`` and null is
``None``.  Heap objects and functions are referenced through small frozen
records so that attribute snapshots stay immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ObjectRef:
    id: int


@dataclass(frozen=True)
class FunctionRef:
    node_id: int
    name: str = ""


def is_number(v):
    return isinstance(v, float) or (isinstance(v, int) and not isinstance(v, bool))


def format_number(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    if x == int(x) and abs(x) < 1e21:
        return str(int(x))
    return repr(float(x))


def encode(v):
    """Encode a runtime value as {"t": tag, "v": payload}."""
    if v is None:
        return {"t": "null", "v": None}
    if isinstance(v, bool):
        return {"t": "bool", "v": v}
    if is_number(v):
        x = float(v)
        return {"t": "num", "v": x if math.isfinite(x) else format_number(x)}
    if isinstance(v, str):
        return {"t": "str", "v": v}
    if isinstance(v, ObjectRef):
        return {"t": "obj", "v": v.id}
    if isinstance(v, FunctionRef):
        return {"t": "fun", "v": v.node_id, "name": v.name}
    if isinstance(v, (list, tuple)):
        return {"t": "list", "v": [encode(x) for x in v]}
    raise TypeError("cannot encode %r" % (v,))


_NONFINITE = {"Infinity": math.inf, "-Infinity": -math.inf, "NaN": math.nan}


def decode(d):
    t, v = d["t"], d.get("v")
    if t == "null":
        return None
    if t == "bool":
        return bool(v)
    if t == "num":
        return _NONFINITE[v] if isinstance(v, str) else float(v)
    if t == "str":
        return v
    if t == "obj":
        return ObjectRef(int(v))
    if t == "fun":
        return FunctionRef(int(v), d.get("name", ""))
    if t == "list":
        return tuple(decode(x) for x in v)
    raise ValueError("unknown value tag %r" % t)
