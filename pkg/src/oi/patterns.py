"""Tree patterns for hook selection.

A pattern is a single atom, ``a < b`` (``b`` is a direct child of ``a``) or
``a << b`` (``b`` is a proper descendant of ``a``), optionally followed by a
filter ``| a`` that keeps only the nodes bound to one atom.  Atoms may carry
attribute conditions, ``left[val==4]`` or equivalently ``left[+<val==4>+]``;
these are *dynamic*: matching ignores them, and they are checked against live
attribute values each time a hook is reached.
"""

from __future__ import annotations

import json
import operator
import re
from dataclasses import dataclass, field
from typing import Optional

from oi.values import is_number


class PatternError(Exception):
    pass


# -- binding targets --------------------------------------------------------

@dataclass(frozen=True)
class WholeProduction:
    module: str
    label: str


@dataclass(frozen=True)
class NonterminalPosition:
    module: str
    label: str
    position: int  # 0 is the head, i >= 1 the i-th nonterminal of the body


@dataclass(frozen=True)
class ActionTarget:
    module: str
    label: str
    role: str


@dataclass(frozen=True)
class SliceName:
    name: str


@dataclass(frozen=True)
class EndemicName:
    name: str


@dataclass(frozen=True)
class HeadNonterminal:
    """Every node whose production has this head (debugger breakpoints)."""
    name: str


@dataclass(frozen=True)
class AnyNode:
    pass


MATCHABLE = (WholeProduction, NonterminalPosition, HeadNonterminal, AnyNode)


@dataclass(frozen=True)
class Binding:
    id: str
    target: object


# -- pattern AST ------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    id: str


@dataclass(frozen=True)
class ParentChild:
    left: Atom
    right: Atom


@dataclass(frozen=True)
class AncestorDescendant:
    left: Atom
    right: Atom


@dataclass(frozen=True)
class DynamicConstraint:
    atom: str
    attr: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise PatternError("unknown operator %s" % self.op)
        if self.op not in ("==", "!=") and not is_number(self.value):
            raise PatternError("%s needs a numeric constant" % self.op)


@dataclass(frozen=True)
class TreePattern:
    shape: object
    constraints: tuple = ()
    filter: Optional[str] = None
    bindings: tuple = ()  # (id, Binding) pairs for the atoms in shape

    def atoms(self):
        s = self.shape
        return [s.id] if isinstance(s, Atom) else [s.left.id, s.right.id]

    def binding(self, atom_id):
        return dict(self.bindings)[atom_id]


@dataclass(frozen=True)
class MatchEntry:
    anchor: int
    env: dict = field(hash=False)


@dataclass
class MatchSet:
    entries: list

    @property
    def anchors(self):
        return [e.anchor for e in self.entries]

    def __len__(self):
        return len(self.entries)


# -- surface syntax ---------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<num>-?\d+(?:\.\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<op>\[\+<|>\+\]|<<|==|!=|<=|>=|<|>|\[|\]|,|\|)
""", re.VERBOSE)


def tokenize(text):
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise PatternError("malformed pattern near %r" % text[pos:pos + 10])
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        value = m.group()
        if kind == "str":
            try:
                value = json.loads(value)
            except ValueError:
                raise PatternError("malformed string constant %s" % value) from None
        elif kind == "num":
            value = float(value)
        out.append((kind, value))
    return out


class _PatternParser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        k, v = self.peek()
        if k is None or (kind and k != kind) or (value is not None and v != value):
            raise PatternError("expected %s, found %s" % (value or kind, v if k else "end of pattern"))
        self.i += 1
        return v

    def parse(self):
        constraints = []
        left = self.term(constraints)
        shape = left
        k, v = self.peek()
        if k == "op" and v in ("<", "<<"):
            self.i += 1
            right = self.term(constraints)
            shape = ParentChild(left, right) if v == "<" else AncestorDescendant(left, right)
        flt = None
        if self.peek() == ("op", "|"):
            self.i += 1
            flt = self.take("id")
        if self.peek()[0] is not None:
            raise PatternError("unexpected %r in pattern" % (self.peek()[1],))
        return shape, tuple(constraints), flt

    def term(self, constraints):
        name = self.take("id")
        k, v = self.peek()
        if k == "op" and v in ("[", "[+<"):
            self.i += 1
            close = "]" if v == "[" else ">+]"
            while True:
                attr = self.take("id")
                op = self.take("op")
                if op not in _OPS:
                    raise PatternError("malformed condition: %s is not a relational operator" % op)
                ck, cv = self.peek()
                if ck == "id" and cv in ("true", "false"):
                    self.i += 1
                    cv = cv == "true"
                elif ck not in ("num", "str"):
                    raise PatternError("malformed condition: constant expected after %s" % op)
                else:
                    self.i += 1
                constraints.append(DynamicConstraint(name, attr, op, cv))
                if self.peek() == ("op", ","):
                    self.i += 1
                    continue
                self.take("op", close)
                break
        return Atom(name)


def parse_pattern(text):
    """Parse pattern text into (shape, constraints, filter) without binding."""
    return _PatternParser(tokenize(text)).parse()


def compile_pattern(bindings, expr: str) -> TreePattern:
    table = {}
    for b in bindings:
        table[b.id] = b
    shape, constraints, flt = parse_pattern(expr)
    atoms = [shape.id] if isinstance(shape, Atom) else [shape.left.id, shape.right.id]
    if len(set(atoms)) != len(atoms):
        raise PatternError("identifier %s used twice in one pattern" % atoms[0])
    for a in atoms:
        if a not in table:
            raise PatternError("unbound identifier %s" % a)
        if not isinstance(table[a].target, MATCHABLE):
            raise PatternError("%s does not denote tree nodes" % a)
    for c in constraints:
        if c.atom not in atoms:
            raise PatternError("condition on %s outside the pattern" % c.atom)
    if flt is not None and flt not in atoms:
        raise PatternError("filter %s does not occur in the pattern" % flt)
    return TreePattern(shape, constraints, flt, tuple((a, table[a]) for a in atoms))


def _fmt_const(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    return ("%d" % v) if float(v).is_integer() else repr(float(v))


def format_pattern(shape, constraints=(), flt=None):
    """Canonical text of a pattern (``[..]`` condition spelling)."""
    def term(atom):
        cs = [c for c in constraints if c.atom == atom.id]
        if not cs:
            return atom.id
        return "%s[%s]" % (atom.id, ", ".join("%s%s%s" % (c.attr, c.op, _fmt_const(c.value)) for c in cs))
    if isinstance(shape, Atom):
        text = term(shape)
    else:
        op = "<" if isinstance(shape, ParentChild) else "<<"
        text = "%s %s %s" % (term(shape.left), op, term(shape.right))
    if flt:
        text += " | " + flt
    return text


# -- matching ---------------------------------------------------------------

def _target_shape(target, spec):
    if spec is None:
        return None
    p = spec.lookup_production(target.module, target.label)
    if p is None:
        mod = spec.catalog.modules.get(target.module)
        p = mod.get(target.label) if mod else None
    return p.shape if p else False


def atom_predicate(target, spec=None):
    """Static node predicate for a binding target."""
    if isinstance(target, AnyNode):
        return lambda n: True
    if isinstance(target, HeadNonterminal):
        return lambda n: n.production.head == target.name
    shape = _target_shape(target, spec)
    if shape is False:
        return lambda n: False

    def same(p):
        if shape is None:
            return p.ref == (target.module, target.label)
        return p.shape == shape
    if isinstance(target, WholeProduction) or target.position == 0:
        return lambda n: same(n.production)
    k = target.position - 1

    def positional(n):
        par = n.parent
        if par is None or not same(par.production):
            return False
        kids = par.nodes
        return k < len(kids) and kids[k] is n
    return positional


def match_nodes(tree, pattern: TreePattern, spec=None) -> MatchSet:
    shape = pattern.shape
    if isinstance(shape, Atom):
        pred = atom_predicate(pattern.binding(shape.id).target, spec)
        return MatchSet([MatchEntry(n.id, {shape.id: n.id}) for n in _preorder(tree) if pred(n)])

    lid, rid = shape.left.id, shape.right.id
    lpred = atom_predicate(pattern.binding(lid).target, spec)
    rpred = atom_predicate(pattern.binding(rid).target, spec)
    direct = isinstance(shape, ParentChild)
    pairs = []
    # depth-first walk keeping the left-matching ancestors on the current path
    stack = [(tree, 0)]
    path = []
    while stack:
        node, depth = stack.pop()
        del path[depth:]
        if rpred(node):
            if direct:
                if depth and path[depth - 1][1]:
                    pairs.append((path[depth - 1][0].id, node.id))
            else:
                pairs.extend((a.id, node.id) for a, ok in path if ok)
        path.append((node, lpred(node)))
        for c in reversed(node.nodes):
            stack.append((c, depth + 1))
    pairs.sort()
    entries = {}
    for l, r in pairs:
        env = {lid: l, rid: r}
        if pattern.filter is None:
            entries.setdefault(l, env)
            entries.setdefault(r, env)
        else:
            entries.setdefault(env[pattern.filter], env)
    return MatchSet([MatchEntry(a, entries[a]) for a in sorted(entries)])


def _preorder(tree):
    return tree.walk()


_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


def _holds(op, value, const):
    if op in ("==", "!="):
        if is_number(value) and is_number(const) and not isinstance(value, bool) and not isinstance(const, bool):
            eq = float(value) == float(const)
        elif type(value) is type(const):
            eq = value == const
        else:
            eq = False
        return eq if op == "==" else not eq
    if not is_number(value) or isinstance(value, bool):
        return False
    return _OPS[op](float(value), float(const))


def eval_constraints(pattern: TreePattern, env, tree, role, role_order=()) -> bool:
    from oi.parser import node_by_id
    for c in pattern.constraints:
        node = node_by_id(tree, env.get(c.atom))
        if node is None:
            return False
        found, value = node.get_attr(c.attr, role, role_order)
        if not found or not _holds(c.op, value, c.value):
            return False
    return True


# -- wire form of binding targets -------------------------------------------

def target_to_dict(target):
    if isinstance(target, WholeProduction):
        return {"kind": "production", "module": target.module, "label": target.label}
    if isinstance(target, NonterminalPosition):
        return {"kind": "nt", "module": target.module, "label": target.label, "position": target.position}
    if isinstance(target, HeadNonterminal):
        return {"kind": "head", "name": target.name}
    if isinstance(target, AnyNode):
        return {"kind": "any"}
    raise PatternError("%r does not denote tree nodes" % (target,))


def target_from_dict(d):
    kind = d.get("kind")
    try:
        if kind == "production":
            return WholeProduction(d["module"], d["label"])
        if kind == "nt":
            return NonterminalPosition(d["module"], d["label"], int(d["position"]))
        if kind == "head":
            return HeadNonterminal(d["name"])
        if kind == "any":
            return AnyNode()
    except KeyError as e:
        raise PatternError("binding target lacks %s" % e) from None
    raise PatternError("unknown binding target kind %r" % kind)
