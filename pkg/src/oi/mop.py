"""Reflective API over a running interpreter.

Every query returns an immutable ``*Info`` snapshot that survives later
mutation of the interpreter and round-trips through JSON.  Commands run on
the interpreter thread: either inside a hook notification (the interpreter
is paused there) or as safe-point operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from oi import values
from oi.vm import REMOVED, Interpreter, InterpreterError


def _sym_dict(s):
    from oi.lang import Literal, Nonterminal
    if isinstance(s, Nonterminal):
        return {"nt": s.name}
    if isinstance(s, Literal):
        return {"lit": s.text}
    return {"tok": s.name}


@dataclass(frozen=True)
class ProductionInfo:
    module: str
    label: Optional[str]
    head: str
    body: tuple  # of {"nt"|"lit"|"tok": name}
    precedence: int = 0
    assoc: str = "none"

    @classmethod
    def of(cls, p):
        return cls(p.module, p.label, p.head, tuple(_freeze(_sym_dict(s)) for s in p.body),
                   p.precedence, p.assoc.value)

    @property
    def nonterminals(self):
        return [dict(s)["nt"] for s in self.body if "nt" in dict(s)]

    def to_dict(self):
        return {"module": self.module, "label": self.label, "head": self.head,
                "body": [dict(s) for s in self.body], "precedence": self.precedence, "assoc": self.assoc}

    @classmethod
    def from_dict(cls, d):
        return cls(d["module"], d["label"], d["head"], tuple(_freeze(s) for s in d["body"]),
                   d.get("precedence", 0), d.get("assoc", "none"))


def _freeze(d):
    return tuple(sorted(d.items()))


@dataclass(frozen=True)
class SemanticActionInfo:
    key: Optional[tuple]  # (module, label, role); None when no action is bound
    provides: tuple = ()
    requires: tuple = ()
    removed: bool = False

    def to_dict(self):
        return {"key": list(self.key) if self.key else None, "provides": list(self.provides),
                "requires": [list(r) for r in self.requires], "removed": self.removed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["key"]) if d["key"] else None, tuple(d["provides"]),
                   tuple(tuple(r) for r in d["requires"]), d.get("removed", False))


@dataclass(frozen=True)
class RoleInfo:
    name: Optional[str]
    index: int

    @property
    def idle(self):
        return self.name is None

    def to_dict(self):
        return {"name": self.name, "index": self.index}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["index"])


@dataclass(frozen=True)
class SliceInfo:
    name: str
    syntax_module: Optional[str]
    role_bindings: tuple  # ((role, ((label, key), ...)), ...)
    endemic: bool = False
    binding_id: Optional[str] = None
    exported_ops: tuple = ()

    def to_dict(self):
        return {"name": self.name, "syntaxModule": self.syntax_module,
                "roleBindings": {r: [[lab, list(k)] for lab, k in pairs] for r, pairs in self.role_bindings},
                "endemic": self.endemic, "bindingId": self.binding_id, "exportedOps": list(self.exported_ops)}

    @classmethod
    def from_dict(cls, d):
        rb = tuple(sorted((r, tuple((lab, tuple(k)) for lab, k in pairs))
                          for r, pairs in d["roleBindings"].items()))
        return cls(d["name"], d["syntaxModule"], rb, d.get("endemic", False), d.get("bindingId"),
                   tuple(d.get("exportedOps", ())))

    @classmethod
    def of_slice(cls, sl):
        rb = tuple(sorted((r, tuple((lab, tuple(k)) for lab, k in pairs))
                          for r, pairs in sl.role_bindings.items()))
        return cls(sl.name, sl.syntax.name, rb)

    @classmethod
    def of_endemic(cls, e):
        return cls(e.name, None, (), True, e.binding_id, tuple(sorted(e.exported_ops)))


@dataclass(frozen=True)
class NodeInfo:
    id: int
    production: tuple  # (module, label)
    head: str
    child_ids: tuple
    span: tuple
    attrs: tuple  # ((role, name, value), ...)
    overrides: tuple = ()  # ((role, action key or "removed"), ...)
    children: tuple = ()  # nested NodeInfo, filled for tree queries

    @classmethod
    def of(cls, vm: Interpreter, node, deep=False):
        spec = vm.spec
        p = spec.production_for(node.production.shape) or node.production
        attrs = tuple(sorted(((r, n, v) for (r, n), v in node.attrs.items()), key=lambda t: (t[0], t[1])))
        ovs = tuple(sorted((r, k) for (nid, r), k in vm.overrides.items() if nid == node.id))
        kids = tuple(cls.of(vm, c, True) for c in node.nodes) if deep else ()
        return cls(node.id, (p.module, p.label), p.head, tuple(c.id for c in node.nodes),
                   node.span, attrs, ovs, kids)

    def attr(self, name, role=None):
        for r, n, v in self.attrs:
            if n == name and (role is None or r == role):
                return v
        raise KeyError(name)

    def has_override(self, role):
        return any(r == role for r, _ in self.overrides)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def to_dict(self):
        return {"id": self.id, "production": list(self.production), "head": self.head,
                "childIds": list(self.child_ids), "span": list(self.span),
                "attrs": [[r, n, values.encode(v)] for r, n, v in self.attrs],
                "overrides": [[r, k if k == REMOVED else list(k)] for r, k in self.overrides],
                "children": [c.to_dict() for c in self.children]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], tuple(d["production"]), d["head"], tuple(d["childIds"]), tuple(d["span"]),
                   tuple((r, n, values.decode(v)) for r, n, v in d["attrs"]),
                   tuple((r, k if k == REMOVED else tuple(k)) for r, k in d["overrides"]),
                   tuple(cls.from_dict(c) for c in d.get("children", ())))


def action_info(vm, key):
    if key is None:
        return SemanticActionInfo(None)
    if key == REMOVED:
        return SemanticActionInfo(None, removed=True)
    a = vm.spec.catalog.actions.get(tuple(key))
    if a is None:
        return SemanticActionInfo(tuple(key))
    return SemanticActionInfo(a.key, tuple(sorted(a.provides)), tuple(sorted(a.requires)))


class MOP:
    """Introspection and intercession commands for one interpreter."""

    # Each public row of the reflective API and the method implementing it.
    ROWS = {
        "getTree": "get_tree", "getSubtree": "get_subtree", "getAction": "get_action",
        "getProduction": "get_production", "getRole": "get_role",
        "getGrammarProductions": "get_grammar_productions", "getRoles": "get_roles",
        "getSlices": "get_slices", "setSpecializedAction": "set_specialized_action",
        "resetNode": "reset_node", "redoRole": "redo_role", "replaceSlice": "replace_slice",
    }

    def __init__(self, vm: Interpreter):
        self.vm = vm

    def _current_node(self, node_id):
        if node_id is not None:
            return self.vm.node(node_id)
        hook = self.vm.current_hook
        if hook is not None:
            return hook[1]
        if self.vm.state.current_node is not None:
            return self.vm.node(self.vm.state.current_node)
        raise InterpreterError("NoCurrentNode", "no current node; pass a node id")

    # -- introspection: execution state -----------------------------------
    def get_tree(self):
        return NodeInfo.of(self.vm, self.vm.tree, deep=True)

    def get_subtree(self, node_id=None):
        return NodeInfo.of(self.vm, self._current_node(node_id), deep=True)

    def get_node(self, node_id=None):
        return NodeInfo.of(self.vm, self._current_node(node_id))

    def get_action(self, node_id=None, role=None):
        node = self._current_node(node_id)
        role = role or self.vm.state.current_role
        if role is None:
            hook = self.vm.current_hook
            role = hook[0].role if hook else None
        if role not in self.vm.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % role)
        return action_info(self.vm, self.vm.action_key(node, role))

    def get_production(self, node_id=None):
        node = self._current_node(node_id)
        p = self.vm.spec.production_for(node.production.shape) or node.production
        return ProductionInfo.of(p)

    def get_role(self):
        role = self.vm.state.current_role
        if role is None:
            return RoleInfo(None, -1)
        return RoleInfo(role, self.vm.spec.role_index(role))

    # -- introspection: implementation ------------------------------------
    def get_grammar_productions(self):
        return [ProductionInfo.of(p) for p in self.vm.spec.productions]

    def get_roles(self):
        return [RoleInfo(r, i) for i, r in enumerate(self.vm.spec.role_order)]

    def get_slices(self):
        spec = self.vm.spec
        return [SliceInfo.of_slice(s) for s in spec.slices] + [SliceInfo.of_endemic(e) for e in spec.endemics]

    def get_slice_registry(self):
        """Slices available for replacement (the build-time registry)."""
        return [SliceInfo.of_slice(s) for _, s in sorted(self.vm.spec.catalog.slices.items())]

    def find_action(self, module, label, role):
        a = self.vm.spec.catalog.actions.get((module, label, role))
        if a is None:
            raise InterpreterError("UnknownAction", "no action %s.%s in role %s" % (module, label, role))
        return action_info(self.vm, a.key)

    # -- attributes (NodeInfo get/set) ------------------------------------
    def get_attr(self, node_id, name, role=None):
        node = self.vm.node(node_id)
        role = role or self._role()
        found, value = node.get_attr(name, role, self.vm.spec.role_order)
        if not found:
            raise InterpreterError("UnknownAttribute", "node %d has no attribute %s" % (node.id, name))
        return value

    def set_attr(self, node_id, name, value, role=None):
        node = self.vm.node(node_id)
        node.attrs[(role or self._role(), name)] = value

    def _role(self):
        hook = self.vm.current_hook
        if hook is not None:
            return hook[0].role
        if self.vm.state.current_role:
            return self.vm.state.current_role
        return self.vm.spec.role_order[-1]

    # -- intercession -----------------------------------------------------
    def set_specialized_action(self, node_id, action_key, role):
        self.vm.set_override(node_id, role, action_key)

    def reset_node(self, node_id, role):
        self.vm.reset_override(node_id, role)

    def redo_role(self, role):
        self.vm.redo_role(role)

    def replace_slice(self, old_name, new_name):
        self.vm.replace_slice(old_name, new_name)

    def endemic_call(self, name, op, *args):
        return self.vm.endemic_call(name, op, args)


# -- request dispatch (wire payloads) ---------------------------------------

def _encode_result(r):
    if r is None:
        return None
    if isinstance(r, list):
        return [_encode_result(x) for x in r]
    if hasattr(r, "to_dict"):
        return r.to_dict()
    return values.encode(r)


def _dec(v):
    return values.decode(v) if isinstance(v, dict) and "t" in v else v


def _key(k):
    return None if k is None or k == REMOVED else tuple(k)


# op name -> (callable(mop, args), is intercession)
COMMANDS = {
    "getTree": (lambda m, a: m.get_tree(), False),
    "getSubtree": (lambda m, a: m.get_subtree(a.get("node")), False),
    "getNode": (lambda m, a: m.get_node(a.get("node")), False),
    "getAction": (lambda m, a: m.get_action(a.get("node"), a.get("role")), False),
    "getProduction": (lambda m, a: m.get_production(a.get("node")), False),
    "getRole": (lambda m, a: m.get_role(), False),
    "getGrammarProductions": (lambda m, a: m.get_grammar_productions(), False),
    "getRoles": (lambda m, a: m.get_roles(), False),
    "getSlices": (lambda m, a: m.get_slices(), False),
    "getSliceRegistry": (lambda m, a: m.get_slice_registry(), False),
    "findAction": (lambda m, a: m.find_action(a["module"], a["label"], a["role"]), False),
    "getAttr": (lambda m, a: m.get_attr(a["node"], a["name"], a.get("role")), False),
    "setAttr": (lambda m, a: m.set_attr(a["node"], a["name"], _dec(a["value"]), a.get("role")), True),
    "setSpecializedAction": (lambda m, a: m.set_specialized_action(a["node"], _key(a["action"]), a["role"]), True),
    "resetNode": (lambda m, a: m.reset_node(a["node"], a["role"]), True),
    "redoRole": (lambda m, a: m.redo_role(a["role"]), True),
    "replaceSlice": (lambda m, a: m.replace_slice(a["old"], a["new"]), True),
    "endemicCall": (lambda m, a: m.endemic_call(a["endemic"], a["op"], *[_dec(x) for x in a.get("args", ())]), True),
}


# arguments each command cannot do without
REQUIRED = {
    "findAction": ("module", "label", "role"), "getAttr": ("node", "name"), "setAttr": ("node", "name", "value"),
    "setSpecializedAction": ("node", "action", "role"), "resetNode": ("node", "role"), "redoRole": ("role",),
    "replaceSlice": ("old", "new"), "endemicCall": ("endemic", "op"),
}


def validate_command(vm: Interpreter, cmd):
    """Static checks run before a batch starts, so a bad batch has no effect."""
    op, args = cmd.get("op"), cmd.get("args", {})
    if op not in COMMANDS:
        raise InterpreterError("UnknownCommand", "unknown command %r" % op)
    if not isinstance(args, dict):
        raise InterpreterError("BadRequest", "arguments of %s must be an object" % op)
    missing = [a for a in REQUIRED.get(op, ()) if a not in args]
    if missing:
        raise InterpreterError("BadRequest", "%s lacks argument %s" % (op, ", ".join(missing)))
    try:
        if "node" in args and args["node"] is not None:
            vm.node(args["node"])
        if "role" in args and args["role"] is not None and args["role"] not in vm.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % args["role"])
        if op == "replaceSlice":
            if vm.spec.catalog.slices.get(args["new"]) is None:
                raise InterpreterError("UnknownSlice", "no slice named %s in the registry" % args["new"])
        if op == "setSpecializedAction" and args.get("action") not in (None, REMOVED):
            if tuple(args["action"]) not in vm.spec.catalog.actions:
                raise InterpreterError("UnknownAction", "no action %s" % (args["action"],))
        if op == "endemicCall":
            e = vm.spec.endemic_named(args["endemic"])
            if e is None or args["op"] not in e.exported_ops:
                raise InterpreterError("UnknownOperation", "no endemic operation %s.%s"
                                       % (args["endemic"], args["op"]))
    except KeyError as e:
        raise InterpreterError("BadRequest", "missing argument %s" % e) from None


def execute(vm: Interpreter, cmd):
    """Run one command document {"op": ..., "args": {...}}; returns an encoded result."""
    validate_command(vm, cmd)
    fn, _ = COMMANDS[cmd["op"]]
    return _encode_result(fn(MOP(vm), cmd.get("args", {})))


def _is_ref(v):
    return isinstance(v, dict) and set(v) == {"$ref"}


def _resolve_refs(args, results):
    def sub(v):
        if _is_ref(v):
            k = v["$ref"]
            if not isinstance(k, int) or not 0 <= k < len(results):
                raise InterpreterError("BadRequest", "result reference %r does not precede its use" % (k,))
            return results[k]
        if isinstance(v, list):
            return [sub(x) for x in v]
        return v
    return {k: sub(v) for k, v in args.items()}


def execute_batch(vm: Interpreter, cmds):
    """All commands validate first, then run inside one transaction.

    An argument ``{"$ref": k}`` stands for the result of the k-th command of
    the same batch."""
    for cmd in cmds:
        if not any(_is_ref(v) or isinstance(v, list) for v in cmd.get("args", {}).values()):
            validate_command(vm, cmd)
        elif cmd.get("op") not in COMMANDS:
            raise InterpreterError("UnknownCommand", "unknown command %r" % cmd.get("op"))
    results = []
    with vm.transaction():
        for cmd in cmds:
            args = _resolve_refs(cmd.get("args", {}), results)
            resolved = {"op": cmd["op"], "args": args}
            validate_command(vm, resolved)
            fn, _ = COMMANDS[cmd["op"]]
            results.append(_encode_result(fn(MOP(vm), args)))
    return results
