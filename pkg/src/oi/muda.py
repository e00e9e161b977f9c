"""µDA: a small DSL for writing agents.

A script has declarations, which bind identifiers to language concepts, and
operations, which say where to run adaptation code::

    production addition : Add from module miniJS.AddSyntax;
    nt head, left, _ : Add from module miniJS.AddSyntax;
    slice sub : miniJS.SubtractAddEval;

    after head < left[val==4] | head {
        print("left operand is", getAttr(left, "val"));
    }
    once { replaceSlice("miniJS.AddEval", sub); redoRole("evaluation"); }

Blocks are a tiny statement language (``let``, ``if``/``else``, builtin
calls, ``unregister;``).  Every builtin except ``print`` is one reflective
request to the interpreter; ``print`` writes on the agent's side.
"""

from __future__ import annotations

import json
import logging
import re
import sys
from dataclasses import dataclass
from typing import Optional

from oi import values
from oi.patterns import (ActionTarget, AnyNode, Atom, Binding, EndemicName, HeadNonterminal,
                         NonterminalPosition, PatternError, SliceName, WholeProduction, compile_pattern,
                         format_pattern, parse_pattern)
from oi.values import is_number

log = logging.getLogger(__name__)


class MudaError(Exception):
    def __init__(self, message, line=None, column=None):
        where = " at line %d, column %d" % (line, column) if line else ""
        super().__init__(message + where)
        self.line, self.column = line, column


# -- AST --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductionDecl:
    ids: tuple
    label: str
    module: str


@dataclass(frozen=True)
class NtDecl:
    ids: tuple  # "_" skips a position
    label: str
    module: str


@dataclass(frozen=True)
class ActionDecl:
    id: str
    label: str
    module: str
    role: str


@dataclass(frozen=True)
class SliceDecl:
    ids: tuple
    name: str
    endemic: bool = False


@dataclass(frozen=True)
class Const:
    value: object


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class CallExpr:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Let:
    id: str
    expr: object


@dataclass(frozen=True)
class ExprStmt:
    call: CallExpr


@dataclass(frozen=True)
class If:
    cond: object
    then: tuple
    orelse: tuple = ()


@dataclass(frozen=True)
class Unregister:
    pass


@dataclass(frozen=True)
class Operation:
    kind: str  # "before" | "after" | "once"
    pattern: Optional[tuple]  # (shape, constraints, filter) as from parse_pattern
    role: Optional[str]
    block: tuple


@dataclass(frozen=True)
class Script:
    imports: tuple = ()
    declarations: tuple = ()
    operations: tuple = ()

    def bindings(self):
        """Identifier -> declaration target (without live resolution)."""
        out = {}
        for d in self.declarations:
            for ident, target in declaration_targets(d):
                out[ident] = target
        return out


BUILTINS = {  # name -> (min args, max args or None)
    "getAttr": (2, 2), "setAttr": (3, 3), "setSpecializedAction": (2, 2), "resetNode": (2, 2),
    "replaceSlice": (2, 2), "redoRole": (1, 1), "endemicCall": (2, None), "print": (0, None),
}
KEYWORDS = {"import", "production", "nt", "action", "slice", "endemic", "from", "module", "role",
            "before", "after", "once", "let", "if", "else", "unregister", "true", "false", "null"}
RELOPS = ("==", "!=", "<", "<=", ">", ">=")


def declaration_targets(d):
    if isinstance(d, ProductionDecl):
        return [(i, WholeProduction(d.module, d.label)) for i in d.ids]
    if isinstance(d, NtDecl):
        return [(i, NonterminalPosition(d.module, d.label, k)) for k, i in enumerate(d.ids) if i != "_"]
    if isinstance(d, ActionDecl):
        return [(d.id, ActionTarget(d.module, d.label, d.role))]
    if isinstance(d, SliceDecl):
        cls = EndemicName if d.endemic else SliceName
        return [(i, cls(d.name)) for i in d.ids]
    raise TypeError(d)


# -- lexer ------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+|//[^\n]*|/\*.*?\*/)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op>\[\+<|>\+\]|<<|==|!=|<=|>=|[<>\[\],;:{}()|=+])
""", re.VERBOSE | re.DOTALL)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    value: object
    start: int
    end: int
    line: int
    column: int


def _tokenize(text):
    out, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise MudaError("unexpected character %r" % text[pos], line, pos - line_start + 1)
        kind, lexeme = m.lastgroup, m.group()
        if kind != "ws":
            value = lexeme
            if kind == "str":
                try:
                    value = json.loads(lexeme)
                except ValueError:
                    raise MudaError("malformed string %s" % lexeme, line, pos - line_start + 1) from None
            elif kind == "num":
                value = float(lexeme)
            out.append(_Tok(kind, lexeme, value, pos, m.end(), line, pos - line_start + 1))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            line_start = pos + lexeme.rfind("\n") + 1
        pos = m.end()
    return out


# -- parser -----------------------------------------------------------------------

class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        if tok is None:
            last = self.toks[-1] if self.toks else None
            return MudaError(msg + " (found end of script)", last.line if last else 1,
                             (last.column + len(last.text)) if last else 1)
        return MudaError("%s (found %r)" % (msg, tok.text), tok.line, tok.column)

    def at(self, text):
        t = self.peek()
        return t is not None and t.kind in ("id", "op") and t.text == text

    def expect(self, text):
        if not self.at(text):
            raise self.error("expected %r" % text)
        self.i += 1

    def ident(self, what="identifier", allow_keyword=False, qualified=False):
        t = self.peek()
        if t is None or t.kind != "id" or (not allow_keyword and t.text in KEYWORDS):
            raise self.error("expected %s" % what)
        if "." in t.text and not qualified:
            raise self.error("expected %s without dots" % what)
        self.i += 1
        return t.text

    def ident_list(self, allow_skip=False):
        ids = [self._maybe_skip(allow_skip)]
        while self.at(","):
            self.i += 1
            ids.append(self._maybe_skip(allow_skip))
        return tuple(ids)

    def _maybe_skip(self, allow_skip):
        if allow_skip and self.at("_"):
            self.i += 1
            return "_"
        return self.ident()

    def script(self):
        imports, decls, ops = [], [], []
        while self.peek() is not None:
            t = self.peek()
            if t.kind != "id":
                raise self.error("expected a declaration or an operation")
            word = t.text
            if word == "import":
                if decls or ops:
                    raise self.error("imports must come first")
                self.i += 1
                imports.append(self.ident("module name", allow_keyword=True, qualified=True))
                self.expect(";")
            elif word in ("production", "nt", "action", "slice", "endemic"):
                if ops:
                    raise self.error("declarations must precede operations")
                decls.append(self.declaration())
            elif word in ("before", "after", "once"):
                ops.append(self.operation())
            else:
                raise self.error("expected a declaration or an operation")
        script = Script(tuple(imports), tuple(decls), tuple(ops))
        _check_script(script)
        return script

    def declaration(self):
        word = self.ident("declaration", allow_keyword=True)
        if word in ("production", "nt"):
            ids = self.ident_list(allow_skip=(word == "nt"))
            self.expect(":")
            label = self.ident("production label")
            self.expect("from")
            self.expect("module")
            module = self.ident("module name", allow_keyword=True, qualified=True)
            self.expect(";")
            return (ProductionDecl if word == "production" else NtDecl)(ids, label, module)
        if word == "action":
            ident = self.ident()
            self.expect(":")
            label = self.ident("production label")
            self.expect("from")
            self.expect("module")
            module = self.ident("module name", allow_keyword=True, qualified=True)
            self.expect("role")
            role = self.ident("role name", allow_keyword=True)
            self.expect(";")
            return ActionDecl(ident, label, module, role)
        endemic = word == "endemic"
        if endemic:
            self.expect("slice")
        ids = self.ident_list()
        self.expect(":")
        name = self.ident("slice name", allow_keyword=True, qualified=True)
        self.expect(";")
        return SliceDecl(ids, name, endemic)

    def operation(self):
        kind = self.ident("operation", allow_keyword=True)
        pattern = role = None
        if kind != "once":
            first = self.peek()
            while self.peek() is not None and not self.at("{") and not self.at("role"):
                self.i += 1
            if first is None or self.peek() is first:
                raise self.error("expected a pattern")
            last = self.toks[self.i - 1]
            try:
                pattern = parse_pattern(self.text[first.start:last.end])
            except PatternError as e:
                raise MudaError("bad pattern: %s" % e, first.line, first.column) from None
            if self.at("role"):
                self.i += 1
                role = self.ident("role name", allow_keyword=True)
        block = self.block(in_once=(kind == "once"))
        return Operation(kind, pattern, role, block)

    def block(self, in_once=False):
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.peek() is None:
                raise self.error("unterminated block")
            stmts.append(self.statement(in_once))
        self.i += 1
        return tuple(stmts)

    def statement(self, in_once):
        if self.at("let"):
            self.i += 1
            ident = self.ident()
            self.expect("=")
            e = self.expr()
            self.expect(";")
            return Let(ident, e)
        if self.at("if"):
            if in_once:
                raise self.error("if is not allowed in a once block")
            self.i += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            orelse = ()
            if self.at("else"):
                self.i += 1
                orelse = self.block()
            return If(cond, then, orelse)
        if self.at("unregister"):
            if in_once:
                raise self.error("unregister is not allowed in a once block")
            self.i += 1
            self.expect(";")
            return Unregister()
        tok = self.peek()
        e = self.primary()
        if not isinstance(e, CallExpr):
            raise self.error("expected a statement", tok)
        self.expect(";")
        return ExprStmt(e)

    def expr(self):
        left = self.sum()
        t = self.peek()
        if t is not None and t.kind == "op" and t.text in RELOPS:
            self.i += 1
            return BinOp(t.text, left, self.sum())
        return left

    def sum(self):
        left = self.primary()
        while self.at("+"):
            self.i += 1
            left = BinOp("+", left, self.primary())
        return left

    def primary(self):
        t = self.peek()
        if t is None:
            raise self.error("expected an expression")
        if t.kind in ("num", "str"):
            self.i += 1
            return Const(t.value)
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "id" and t.text in ("true", "false", "null"):
            self.i += 1
            return Const({"true": True, "false": False, "null": None}[t.text])
        name = self.ident("expression")
        if self.at("("):
            self.i += 1
            args = []
            if not self.at(")"):
                args.append(self.expr())
                while self.at(","):
                    self.i += 1
                    args.append(self.expr())
            self.expect(")")
            if name not in BUILTINS:
                raise MudaError("unknown builtin %s" % name, t.line, t.column)
            lo, hi = BUILTINS[name]
            if len(args) < lo or (hi is not None and len(args) > hi):
                raise MudaError("%s takes %s arguments" % (name, lo if lo == hi else "at least %d" % lo),
                                t.line, t.column)
            return CallExpr(name, tuple(args))
        return Name(name)


def _pattern_atoms(pattern):
    shape = pattern[0]
    return [shape.id] if isinstance(shape, Atom) else [shape.left.id, shape.right.id]


def _check_script(script: Script):
    """Static checks: identifiers are declared before use."""
    declared = {}
    for d in script.declarations:
        for ident, target in declaration_targets(d):
            if ident in declared:
                raise MudaError("identifier %s declared twice" % ident)
            declared[ident] = target
    for op in script.operations:
        scope = set(declared)
        if op.pattern is not None:
            atoms = _pattern_atoms(op.pattern)
            bindings = []
            for a in atoms:
                if a not in declared:
                    raise MudaError("undeclared identifier %s in pattern" % a)
                bindings.append(Binding(a, declared[a]))
            try:
                compile_pattern(bindings, format_pattern(*op.pattern))
            except PatternError as e:
                raise MudaError(str(e)) from None
        _check_block(op.block, scope)


def _check_block(block, scope):
    scope = set(scope)
    for st in block:
        if isinstance(st, Let):
            _check_expr(st.expr, scope)
            scope.add(st.id)
        elif isinstance(st, ExprStmt):
            _check_expr(st.call, scope)
        elif isinstance(st, If):
            _check_expr(st.cond, scope)
            _check_block(st.then, scope)
            _check_block(st.orelse, scope)


def _check_expr(e, scope):
    if isinstance(e, Name) and e.id not in scope:
        raise MudaError("undeclared identifier %s" % e.id)
    if isinstance(e, CallExpr):
        for a in e.args:
            _check_expr(a, scope)
    if isinstance(e, BinOp):
        _check_expr(e.left, scope)
        _check_expr(e.right, scope)


def parse_script(text: str) -> Script:
    script = _Parser(text).script()
    for name in script.imports:
        log.warning("import %s ignored: blocks are written in the µDA statement language", name)
    return script


# -- pretty printer -----------------------------------------------------------------

def _fmt_const(v):
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    v = float(v)
    return "%d" % v if v.is_integer() and abs(v) < 1e15 else repr(v)


_PREC = {"+": 2, **{op: 1 for op in RELOPS}}


def format_expr(e, parent_prec=0, right=False):
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, CallExpr):
        return "%s(%s)" % (e.name, ", ".join(format_expr(a) for a in e.args))
    prec = _PREC[e.op]
    text = "%s %s %s" % (format_expr(e.left, prec), e.op, format_expr(e.right, prec, right=True))
    if prec < parent_prec or (prec == parent_prec and (right or prec == 1)):
        return "(%s)" % text
    return text


def _format_block(block, indent):
    pad = "    " * indent
    lines = []
    for st in block:
        if isinstance(st, Let):
            lines.append("%slet %s = %s;" % (pad, st.id, format_expr(st.expr)))
        elif isinstance(st, ExprStmt):
            lines.append("%s%s;" % (pad, format_expr(st.call)))
        elif isinstance(st, Unregister):
            lines.append("%sunregister;" % pad)
        else:
            lines.append("%sif (%s) {" % (pad, format_expr(st.cond)))
            lines.extend(_format_block(st.then, indent + 1))
            if st.orelse:
                lines.append("%s} else {" % pad)
                lines.extend(_format_block(st.orelse, indent + 1))
            lines.append("%s}" % pad)
    return lines


def format_script(script: Script) -> str:
    lines = ["import %s;" % i for i in script.imports]
    for d in script.declarations:
        if isinstance(d, (ProductionDecl, NtDecl)):
            word = "production" if isinstance(d, ProductionDecl) else "nt"
            lines.append("%s %s : %s from module %s;" % (word, ", ".join(d.ids), d.label, d.module))
        elif isinstance(d, ActionDecl):
            lines.append("action %s : %s from module %s role %s;" % (d.id, d.label, d.module, d.role))
        else:
            lines.append("%sslice %s : %s;" % ("endemic " if d.endemic else "", ", ".join(d.ids), d.name))
    for op in script.operations:
        if lines:
            lines.append("")
        head = op.kind
        if op.pattern is not None:
            head += " " + format_pattern(*op.pattern)
        if op.role:
            head += " role " + op.role
        lines.append(head + " {")
        lines.extend(_format_block(op.block, 1))
        lines.append("}")
    return "\n".join(lines) + "\n"


# -- runtime ------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeRef:
    id: int


class _Abort(Exception):
    pass


def resolve_declarations(script: Script, client):
    """Check every declaration against the live interpreter.

    Returns (bindings by identifier, role order).  Nothing is registered if
    any declaration fails to resolve."""
    prods = {(p["module"], p["label"]): p for p in client.mop("getGrammarProductions")}
    roles = [r["name"] for r in client.mop("getRoles")]
    slices = client.mop("getSlices") + client.mop("getSliceRegistry")
    slice_names = {s["name"] for s in slices if not s["endemic"]}
    endemic_names = {n for s in slices if s["endemic"] for n in (s["name"], s["bindingId"])}
    out = {}
    for d in script.declarations:
        if isinstance(d, (ProductionDecl, NtDecl)):
            p = prods.get((d.module, d.label))
            if p is None:
                raise MudaError("no production %s from module %s" % (d.label, d.module))
            arity = sum(1 for s in p["body"] if "nt" in s)
            if isinstance(d, NtDecl) and len(d.ids) > arity + 1:
                raise MudaError("%s has only %d nonterminals" % (d.label, arity + 1))
        elif isinstance(d, ActionDecl):
            if d.role not in roles:
                raise MudaError("no role %s" % d.role)
            client.mop("findAction", module=d.module, label=d.label, role=d.role)
        elif d.endemic and d.name not in endemic_names:
            raise MudaError("no endemic slice %s" % d.name)
        elif not d.endemic and d.name not in slice_names:
            raise MudaError("no slice %s" % d.name)
        for ident, target in declaration_targets(d):
            out[ident] = target
    return out, roles


class AgentRuntime:
    """Executes a parsed script against one interpreter connection."""

    def __init__(self, script: Script, client, out=None, err=None):
        self.script, self.client = script, client
        self.out = out or sys.stdout
        self.err = err or sys.stderr
        self.bindings = {}
        self.roles = []
        self.registrations = {}  # registration id -> (operation, remaining anchors)

    # values ------------------------------------------------------------------
    def render(self, v):
        if isinstance(v, NodeRef):
            return "node#%d" % v.id
        if isinstance(v, (SliceName, EndemicName)):
            return v.name
        if isinstance(v, ActionTarget):
            return "%s.%s@%s" % (v.module, v.label, v.role)
        if isinstance(v, (WholeProduction, NonterminalPosition)):
            return "%s from module %s" % (v.label, v.module)
        from oi.minijs.runtime import render
        return render(v)

    def _node(self, v):
        if isinstance(v, NodeRef):
            return v.id
        if is_number(v) and float(v).is_integer():
            return int(v)
        if isinstance(v, (WholeProduction, NonterminalPosition, HeadNonterminal, AnyNode)):
            raise _Abort("%s is not bound to a node here; only pattern identifiers and node ids are nodes"
                         % self.render(v))
        raise _Abort("expected a node, got %s" % self.render(v))

    def _name(self, v, cls):
        if isinstance(v, cls):
            return v.name
        if isinstance(v, str):
            return v
        raise _Abort("expected a %s name, got %s" % (cls.__name__, self.render(v)))

    def _wire(self, v):
        if isinstance(v, NodeRef):
            return values.encode(float(v.id))
        if isinstance(v, (SliceName, EndemicName)):
            return values.encode(v.name)
        return values.encode(v)

    def eval(self, e, env):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Name):
            if e.id in env:
                return env[e.id]
            return self.bindings[e.id]
        if isinstance(e, BinOp):
            return self._binop(e.op, self.eval(e.left, env), self.eval(e.right, env))
        return self.call(e, env)

    def _binop(self, op, l, r):
        from oi.minijs import runtime as rt
        if op == "+":
            if isinstance(l, str) or isinstance(r, str):
                return self.render(l) + self.render(r)
            try:
                return rt.add_dispatch(l, r)
            except rt.MiniJSError as e:
                raise _Abort(str(e)) from None
        if op in ("==", "!="):
            eq = rt.equals(l, r) if not isinstance(l, NodeRef) else l == r
            return eq if op == "==" else not eq
        try:
            a, b = (l, r) if op in ("<", "<=") else (r, l)
            return rt.less(a, b) or (op in ("<=", ">=") and rt.equals(a, b))
        except rt.MiniJSError as e:
            raise _Abort(str(e)) from None

    def call(self, e: CallExpr, env):
        args = [self.eval(a, env) for a in e.args]
        c = self.client
        if e.name == "print":
            print(" ".join(self.render(a) for a in args), file=self.out, flush=True)
            return None
        if e.name == "getAttr":
            return values.decode(c.mop("getAttr", node=self._node(args[0]), name=str(args[1])))
        if e.name == "setAttr":
            return c.mop("setAttr", node=self._node(args[0]), name=str(args[1]), value=self._wire(args[2]))
        if e.name == "setSpecializedAction":
            a = args[1]
            if not isinstance(a, ActionTarget):
                raise _Abort("setSpecializedAction expects an action identifier")
            return c.mop("setSpecializedAction", node=self._node(args[0]),
                         action=[a.module, a.label, a.role], role=a.role)
        if e.name == "resetNode":
            return c.mop("resetNode", node=self._node(args[0]), role=str(args[1]))
        if e.name == "replaceSlice":
            return c.mop("replaceSlice", old=self._name(args[0], SliceName), new=self._name(args[1], SliceName))
        if e.name == "redoRole":
            return c.mop("redoRole", role=str(args[0]))
        if e.name == "endemicCall":
            r = c.mop("endemicCall", endemic=self._name(args[0], EndemicName), op=str(args[1]),
                      args=[self._wire(a) for a in args[2:]])
            return values.decode(r) if isinstance(r, dict) else r
        raise _Abort("unknown builtin %s" % e.name)

    def run_block(self, block, env, event=None):
        from oi.minijs.runtime import truthy
        env = dict(env)
        for st in block:
            if isinstance(st, Let):
                env[st.id] = self.eval(st.expr, env)
            elif isinstance(st, ExprStmt):
                self.call(st.call, env)
            elif isinstance(st, If):
                self.run_block(st.then if truthy(self.eval(st.cond, env)) else st.orelse, env, event)
            elif isinstance(st, Unregister):
                rid = event.body["registration"]
                anchor = event.body["anchor"]["id"]
                remaining = self.client.unregister(rid, anchor)
                op, _ = self.registrations.get(rid, (None, 0))
                self.registrations[rid] = (op, remaining)

    # once blocks ---------------------------------------------------------------
    def compile_once(self, block):
        """Translate a once block into a command batch plus deferred prints."""
        env, commands, prints = {}, [], []

        def arg(e):
            if isinstance(e, Name) and isinstance(env.get(e.id), _Result):
                return {"$ref": env[e.id].index}
            if isinstance(e, CallExpr):
                raise MudaError("nested builtin calls are not allowed in once blocks")
            v = self.eval(e, env)
            if isinstance(v, _Result):
                raise MudaError("once results can only be passed on or printed")
            return v

        def command(call):
            a = [arg(x) for x in call.args]
            refs = [isinstance(x, dict) and "$ref" in x for x in a]

            def node(i):
                return a[i] if refs[i] else self._node(a[i])

            def wire(i):
                return a[i] if refs[i] else self._wire(a[i])
            n = call.name
            if n == "getAttr":
                return {"op": "getAttr", "args": {"node": node(0), "name": a[1]}}
            if n == "setAttr":
                return {"op": "setAttr", "args": {"node": node(0), "name": a[1], "value": wire(2)}}
            if n == "setSpecializedAction":
                t = a[1]
                if not isinstance(t, ActionTarget):
                    raise MudaError("setSpecializedAction expects an action identifier")
                return {"op": "setSpecializedAction",
                        "args": {"node": node(0), "action": [t.module, t.label, t.role], "role": t.role}}
            if n == "resetNode":
                return {"op": "resetNode", "args": {"node": node(0), "role": a[1]}}
            if n == "replaceSlice":
                return {"op": "replaceSlice", "args": {"old": self._name(a[0], SliceName),
                                                       "new": self._name(a[1], SliceName)}}
            if n == "redoRole":
                return {"op": "redoRole", "args": {"role": a[0]}}
            return {"op": "endemicCall", "args": {"endemic": self._name(a[0], EndemicName), "op": a[1],
                                                  "args": [wire(i) for i in range(2, len(a))]}}

        try:
            for st in block:
                call = st.expr if isinstance(st, Let) else st.call
                if isinstance(call, CallExpr) and call.name != "print":
                    commands.append(command(call))
                    if isinstance(st, Let):
                        env[st.id] = _Result(len(commands) - 1)
                elif isinstance(call, CallExpr):
                    prints.append((call, dict(env)))
                else:
                    env[st.id] = self.eval(call, env)
        except _Abort as e:
            raise MudaError(str(e)) from None
        return commands, prints

    def run_once(self, block):
        commands, prints = self.compile_once(block)
        results = self.client.once(commands) if commands else []
        decoded = [values.decode(r) if isinstance(r, dict) and "t" in r else r for r in results]
        for call, env in prints:
            env = {k: (decoded[v.index] if isinstance(v, _Result) else v) for k, v in env.items()}
            self.call(call, env)

    # main loop ------------------------------------------------------------------------
    def start(self):
        self.bindings, self.roles = resolve_declarations(self.script, self.client)
        for op in self.script.operations:
            if op.kind == "once":
                self.run_once(op.block)
                continue
            atoms = _pattern_atoms(op.pattern)
            bindings = [Binding(a, self.bindings[a]) for a in atoms]
            role = op.role or self.roles[-1]
            rid, count = self.client.register(bindings, format_pattern(*op.pattern), op.kind, role)
            self.registrations[rid] = (op, count)
        self.client.ready()

    @property
    def active(self):
        return any(n > 0 for _, n in self.registrations.values())

    def handle(self, event):
        rid = event.body["registration"]
        op, _ = self.registrations.get(rid, (None, 0))
        env = {k: NodeRef(v["id"]) for k, v in event.body["env"].items()}
        note = None
        try:
            if op is not None:
                self.run_block(op.block, env, event)
        except (_Abort, Exception) as e:
            from oi.wire import RemoteError
            if not isinstance(e, (_Abort, RemoteError)):
                raise
            note = str(e)
            print("agent: block failed at node %d: %s" % (event.body["anchor"]["id"], note),
                  file=self.err, flush=True)
        self.client.resume(event.id, note)

    def serve(self, timeout=None):
        while self.active:
            ev = self.client.next_event(timeout)
            if ev is None:
                return
            if ev.kind == "HookEvent":
                self.handle(ev)

    def run(self, timeout=None):
        self.start()
        self.serve(timeout)


@dataclass(frozen=True)
class _Result:
    index: int


def run_script(script: Script, client, out=None, err=None, timeout=None) -> AgentRuntime:
    rt = AgentRuntime(script, client, out, err)
    rt.run(timeout)
    return rt
