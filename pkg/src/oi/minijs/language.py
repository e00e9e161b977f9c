"""MiniJS as a composition of slices.

Every feature is one syntax module plus a slice binding its evaluation (and,
where needed, syntax-role) actions.  Alternative slices for the same syntax
sit in the catalog so they can be swapped in at runtime:

* ``miniJS.FloatAddEval`` and ``miniJS.SubtractAddEval`` for ``miniJS.AddEval``;
* ``miniJS.ArrayLikeNew`` and ``miniJS.PersistentNew`` for ``miniJS.NewEval``.
"""

from __future__ import annotations

import functools

from oi.lang import Catalog, compose_language, prod
from oi.minijs import runtime as rt
from oi.minijs.objects import Heap, StackTrace, SymbolTable, migrate_instances
from oi.values import FunctionRef, ObjectRef
from oi.vm import RuntimeFault

CATALOG = Catalog()
SYN, EVAL = "syntax", "evaluation"
ROLES = (SYN, EVAL)
VAL = frozenset({"val"})


def _req(*idx, attr="val"):
    return frozenset((i, attr) for i in idx)


def action(module, label, role=EVAL, provides=VAL, requires=()):
    """Register an action; MiniJS runtime errors become faults at the node."""
    def deco(fn):
        @functools.wraps(fn)
        def run(ctx):
            try:
                fn(ctx)
            except rt.MiniJSError as e:
                raise RuntimeFault(str(e), ctx.node) from None
        CATALOG.action(module, label, role, provides, requires)(run)
        return fn
    return deco


def _sym(ctx) -> SymbolTable:
    return ctx.vm.get_endemic("SymbolTable")


def _heap(ctx) -> Heap:
    return ctx.vm.get_endemic("Heap")


def _descend(ctx):
    for k in range(len(ctx.node.nodes)):
        ctx.eval(k)


def _val(ctx, k):
    ctx.eval(k)
    return ctx.get(k, "val")


# -- syntax modules -----------------------------------------------------------

def _module(name, *rows):
    return CATALOG.module(name, *(prod(name, *row[:-1], **row[-1]) if isinstance(row[-1], dict)
                                  else prod(name, *row) for row in rows))


_module("miniJS.ProgramSyntax",
        ("Program", "Program", "Stmts"),
        ("More", "Stmts", "Stmts", "Stmt"),
        ("Empty", "Stmts"))
_module("miniJS.PrintSyntax", ("Print", "Stmt", "print", "(", "Expr", ")", ";"))
_module("miniJS.AssignSyntax", ("Assign", "Stmt", "ID", "=", "Expr", ";"))
_module("miniJS.ExprStmtSyntax", ("ExprStmt", "Stmt", "Expr", ";"))
_module("miniJS.WhileSyntax", ("While", "Stmt", "while", "(", "Expr", ")", "{", "Stmts", "}"))
_module("miniJS.IfSyntax",
        ("If", "Stmt", "if", "(", "Expr", ")", "{", "Stmts", "}"),
        ("IfElse", "Stmt", "if", "(", "Expr", ")", "{", "Stmts", "}", "else", "{", "Stmts", "}"))
_module("miniJS.FailSyntax", ("Fail", "Stmt", "fail", "(", "Expr", ")", ";"))
_module("miniJS.FunctionSyntax",
        ("Function", "Stmt", "function", "ID", "(", "Params", ")", "{", "Stmts", "}"),
        ("NoParams", "Params"),
        ("SomeParams", "Params", "PList"),
        ("OneParam", "PList", "ID"),
        ("MoreParams", "PList", "PList", ",", "ID"),
        ("Return", "Stmt", "return", "Expr", ";"))
_module("miniJS.CallSyntax", ("Call", "Expr", "ID", "(", "Args", ")"))
_module("miniJS.ArgsSyntax",
        ("NoArgs", "Args"),
        ("SomeArgs", "Args", "AList"),
        ("OneArg", "AList", "Expr"),
        ("MoreArgs", "AList", "AList", ",", "Expr"))
_module("miniJS.NewSyntax",
        ("New", "Expr", "new", "ProtoName", "(", "Args", ")"),
        ("ProtoName", "ProtoName", "ID"))
_module("miniJS.ThisSyntax", ("This", "Expr", "this"))
_module("miniJS.FieldSyntax",
        ("Field", "Expr", "Expr", ".", "ID", {"prec": 30, "assoc": "left"}),
        ("FieldAssign", "Stmt", "Expr", ".", "ID", "=", "Expr", ";"))
_module("miniJS.AddSyntax", ("Add", "Expr", "Expr", "+", "Expr", {"prec": 10, "assoc": "left"}))
_module("miniJS.SubSyntax",
        ("Sub", "Expr", "Expr", "-", "Expr", {"prec": 10, "assoc": "left"}),
        ("Neg", "Expr", "-", "Expr", {"prec": 40, "assoc": "right"}))
_module("miniJS.MulSyntax",
        ("Mul", "Expr", "Expr", "*", "Expr", {"prec": 20, "assoc": "left"}),
        ("Div", "Expr", "Expr", "/", "Expr", {"prec": 20, "assoc": "left"}))
_module("miniJS.CompareSyntax",
        ("Less", "Expr", "Expr", "<", "Expr", {"prec": 5, "assoc": "none"}),
        ("Greater", "Expr", "Expr", ">", "Expr", {"prec": 5, "assoc": "none"}),
        ("Eq", "Expr", "Expr", "==", "Expr", {"prec": 4, "assoc": "none"}),
        ("Neq", "Expr", "Expr", "!=", "Expr", {"prec": 4, "assoc": "none"}))
_module("miniJS.LiteralSyntax",
        ("Num", "Expr", "NUM"),
        ("Str", "Expr", "STRING"),
        ("True", "Expr", "true"),
        ("False", "Expr", "false"),
        ("Null", "Expr", "null"))
_module("miniJS.VarSyntax", ("Var", "Expr", "ID"))
_module("miniJS.ParenSyntax", ("Paren", "Expr", "(", "Expr", ")"))


# -- statements ---------------------------------------------------------------

@action("miniJS.PrintEval", "Print", provides=(), requires=_req(0))
def _print(ctx):
    ctx.print(rt.render(_val(ctx, 0), _heap(ctx)))


@action("miniJS.AssignEval", "Assign", SYN, provides={"name"})
def _assign_syntax(ctx):
    _descend(ctx)
    ctx.set("name", ctx.token(0).lexeme)


@action("miniJS.AssignEval", "Assign", provides=(), requires=_req(0))
def _assign(ctx):
    _sym(ctx).assign(ctx.attr("name"), _val(ctx, 0))


@action("miniJS.ExprStmtEval", "ExprStmt", provides=(), requires=_req(0))
def _expr_stmt(ctx):
    ctx.eval(0)


@action("miniJS.WhileEval", "While", provides=(), requires=_req(0))
def _while(ctx):
    while rt.truthy(_val(ctx, 0)):
        ctx.eval(1)


@action("miniJS.IfEval", "If", provides=(), requires=_req(0))
def _if(ctx):
    if rt.truthy(_val(ctx, 0)):
        ctx.eval(1)


@action("miniJS.IfEval", "IfElse", provides=(), requires=_req(0))
def _if_else(ctx):
    ctx.eval(1 if rt.truthy(_val(ctx, 0)) else 2)


@action("miniJS.FailEval", "Fail", provides=(), requires=_req(0))
def _fail(ctx):
    message = rt.render(_val(ctx, 0), _heap(ctx))
    trace = ctx.vm.get_endemic("StackTrace")
    raise RuntimeFault(message, ctx.node, trace.top_down())


# -- functions ----------------------------------------------------------------

@action("miniJS.FunctionEval", "Function", SYN, provides={"name", "params"}, requires=_req(0, attr="params"))
def _function_syntax(ctx):
    _descend(ctx)
    ctx.set("name", ctx.token(1).lexeme)
    ctx.set("params", ctx.get(0, "params"))


@action("miniJS.FunctionEval", "NoParams", SYN, provides={"params"})
def _no_params(ctx):
    ctx.set("params", ())


@action("miniJS.FunctionEval", "SomeParams", SYN, provides={"params"}, requires=_req(0, attr="params"))
def _some_params(ctx):
    ctx.eval(0)
    ctx.set("params", ctx.get(0, "params"))


@action("miniJS.FunctionEval", "OneParam", SYN, provides={"params"})
def _one_param(ctx):
    ctx.set("params", (ctx.token(0).lexeme,))


@action("miniJS.FunctionEval", "MoreParams", SYN, provides={"params"}, requires=_req(0, attr="params"))
def _more_params(ctx):
    ctx.eval(0)
    ctx.set("params", ctx.get(0, "params") + (ctx.token(1).lexeme,))


@action("miniJS.FunctionEval", "Function", provides=())
def _function(ctx):
    name = ctx.attr("name")
    _sym(ctx).assign(name, FunctionRef(ctx.node.id, name))


@action("miniJS.FunctionEval", "Return", provides=(), requires=_req(0))
def _return(ctx):
    value = _val(ctx, 0)
    if len(_sym(ctx).scopes) == 1:
        raise rt.MiniJSError("return outside of a function")
    raise rt.ReturnSignal(value)


def invoke(ctx, fn, args, receiver=None):
    """Run the body of function ``fn`` with ``args`` bound to its parameters."""
    vm = ctx.vm
    decl = vm.node(fn.node_id)
    found, params = decl.get_attr("params", SYN)
    params = params if found else ()
    bindings = {p: (args[i] if i < len(args) else None) for i, p in enumerate(params)}
    sym = _sym(ctx)
    sym.push(bindings, receiver)
    try:
        vm.visit(decl.nodes[1], ctx.role)
    except rt.ReturnSignal as r:
        return r.value
    finally:
        sym.pop()
    return None


def _function_named(ctx, name, what):
    found, fn = _sym(ctx).lookup(name)
    if not found:
        raise rt.MiniJSError("undefined %s %s" % (what, name))
    if not isinstance(fn, FunctionRef):
        raise rt.MiniJSError("%s is not a function" % name)
    return fn


@action("miniJS.CallEval", "Call", SYN, provides={"callee"})
def _call_syntax(ctx):
    _descend(ctx)
    ctx.set("callee", ctx.token(0).lexeme)


@action("miniJS.CallEval", "Call", requires=_req(0, attr="args"))
def _call(ctx):
    ctx.eval(0)
    fn = _function_named(ctx, ctx.attr("callee"), "function")
    ctx.set("val", invoke(ctx, fn, ctx.get(0, "args")))


@action("miniJS.ArgsEval", "NoArgs", provides={"args"})
def _no_args(ctx):
    ctx.set("args", ())


@action("miniJS.ArgsEval", "SomeArgs", provides={"args"}, requires=_req(0, attr="args"))
def _some_args(ctx):
    ctx.eval(0)
    ctx.set("args", ctx.get(0, "args"))


@action("miniJS.ArgsEval", "OneArg", provides={"args"}, requires=_req(0))
def _one_arg(ctx):
    ctx.set("args", (_val(ctx, 0),))


@action("miniJS.ArgsEval", "MoreArgs", provides={"args"}, requires=_req(0, attr="args") | _req(1))
def _more_args(ctx):
    ctx.eval(0)
    ctx.set("args", ctx.get(0, "args") + (_val(ctx, 1),))


# -- objects ------------------------------------------------------------------

@action("miniJS.NewEval", "ProtoName", SYN, provides={"name"})
def _proto_name(ctx):
    ctx.set("name", ctx.token(0).lexeme)


def _new_with(strategy):
    def new(ctx):
        ctx.eval(0)
        ctx.eval(1)
        proto, args = ctx.get(0, "name"), ctx.get(1, "args")
        fn = _function_named(ctx, proto, "prototype")
        heap = _heap(ctx)
        ref = ObjectRef(heap.allocate(proto, strategy).id)
        invoke(ctx, fn, args, receiver=ref)
        heap.deref(ref).seal()
        ctx.set("val", ref)
    return new


_NEW_REQ = frozenset({(0, "name"), (1, "args")})
for _module_name, _strategy in (("miniJS.NewEval", "HashMapInstance"),
                                ("miniJS.ArrayLikeNew", "ArrayLikeInstance"),
                                ("miniJS.PersistentNew", "PersistentInstance")):
    action(_module_name, "New", requires=_NEW_REQ)(_new_with(_strategy))


@action("miniJS.ThisEval", "This")
def _this(ctx):
    receiver = _sym(ctx).receiver
    if receiver is None:
        raise rt.MiniJSError("this used outside of a constructor")
    ctx.set("val", receiver)


def _object(ctx, v):
    if not isinstance(v, ObjectRef):
        raise rt.MiniJSError("cannot access field of %s" % rt.type_name(v))
    return _heap(ctx).deref(v)


@action("miniJS.FieldEval", "Field", requires=_req(0))
def _field(ctx):
    ctx.set("val", _object(ctx, _val(ctx, 0)).get(ctx.token(1).lexeme))


@action("miniJS.FieldEval", "FieldAssign", provides=(), requires=_req(0, 1))
def _field_assign(ctx):
    obj = _val(ctx, 0)
    value = _val(ctx, 1)
    _object(ctx, obj).set(ctx.token(1).lexeme, value)


# -- expressions --------------------------------------------------------------

def _binary(module, label, fn, heap=False):
    @action(module, label, requires=_req(0, 1))
    def run(ctx):
        l, r = _val(ctx, 0), _val(ctx, 1)
        ctx.set("val", fn(l, r, _heap(ctx)) if heap else fn(l, r))
    return run


_binary("miniJS.AddEval", "Add", rt.add_dispatch)
_binary("miniJS.FloatAddEval", "Add", rt.float_add)
_binary("miniJS.SubtractAddEval", "Add", rt.sub)
_binary("miniJS.SubEval", "Sub", rt.sub)
_binary("miniJS.MulEval", "Mul", rt.mul)
_binary("miniJS.MulEval", "Div", rt.div)
_binary("miniJS.CompareEval", "Less", rt.less)
_binary("miniJS.CompareEval", "Greater", rt.greater)
_binary("miniJS.CompareEval", "Eq", rt.equals, heap=True)
_binary("miniJS.CompareEval", "Neq", lambda l, r, h: not rt.equals(l, r, h), heap=True)


@action("miniJS.SubEval", "Neg", requires=_req(0))
def _neg(ctx):
    ctx.set("val", rt.sub(0.0, _val(ctx, 0)))


@action("miniJS.LiteralEval", "Num")
def _num(ctx):
    ctx.set("val", ctx.token(0).value)


@action("miniJS.LiteralEval", "Str")
def _str(ctx):
    ctx.set("val", ctx.token(0).value)


@action("miniJS.LiteralEval", "True")
def _true(ctx):
    ctx.set("val", True)


@action("miniJS.LiteralEval", "False")
def _false(ctx):
    ctx.set("val", False)


@action("miniJS.LiteralEval", "Null")
def _null(ctx):
    ctx.set("val", None)


@action("miniJS.VarEval", "Var", SYN, provides={"name"})
def _var_syntax(ctx):
    ctx.set("name", ctx.token(0).lexeme)


@action("miniJS.VarEval", "Var")
def _var(ctx):
    name = ctx.attr("name")
    found, value = _sym(ctx).lookup(name)
    if not found:
        raise rt.MiniJSError("undefined variable %s" % name)
    ctx.set("val", value)


@action("miniJS.ParenEval", "Paren", requires=_req(0))
def _paren(ctx):
    ctx.set("val", _val(ctx, 0))


# -- endemic slices -------------------------------------------------------------

def _st_push(state, vm, name, node=None):
    span = vm.node(node).span if node is not None else (0, 0)
    state.push(str(name), span)


def _st_frames(state, vm):
    return [name for name, _ in state.top_down()]


def _count(heap, vm, proto=None):
    return float(sum(1 for o in heap.objects.values() if proto is None or o.proto == proto))


def _lookup(state, vm, name):
    return state.lookup(name)[1]


CATALOG.endemic("miniJS.SymbolTable", "SymbolTable", lambda vm: SymbolTable(),
                migrateInstances=migrate_instances, lookup=_lookup)
CATALOG.endemic("miniJS.Heap", "Heap", lambda vm: Heap(), count=_count)
CATALOG.endemic("miniJS.StackTrace", "StackTrace", lambda vm: StackTrace(),
                push=_st_push, pop=lambda state, vm: state.pop(), frames=_st_frames)


# -- slices -------------------------------------------------------------------

def _bind(module, *labels):
    return {lab: (module, lab, EVAL) for lab in labels}


def _slice(name, syntax, evaluation=(), syntax_role=()):
    roles = {}
    if syntax_role:
        roles[SYN] = {lab: (name, lab, SYN) for lab in syntax_role}
    if evaluation:
        roles[EVAL] = _bind(name, *evaluation)
    return CATALOG.slice(name, syntax, **roles)


_slice("miniJS.ProgramEval", "miniJS.ProgramSyntax")
_slice("miniJS.PrintEval", "miniJS.PrintSyntax", ["Print"])
_slice("miniJS.AssignEval", "miniJS.AssignSyntax", ["Assign"], ["Assign"])
_slice("miniJS.ExprStmtEval", "miniJS.ExprStmtSyntax", ["ExprStmt"])
_slice("miniJS.WhileEval", "miniJS.WhileSyntax", ["While"])
_slice("miniJS.IfEval", "miniJS.IfSyntax", ["If", "IfElse"])
_slice("miniJS.FailEval", "miniJS.FailSyntax", ["Fail"])
_slice("miniJS.FunctionEval", "miniJS.FunctionSyntax", ["Function", "Return"],
       ["Function", "NoParams", "SomeParams", "OneParam", "MoreParams"])
_slice("miniJS.CallEval", "miniJS.CallSyntax", ["Call"], ["Call"])
_slice("miniJS.ArgsEval", "miniJS.ArgsSyntax", ["NoArgs", "SomeArgs", "OneArg", "MoreArgs"])
_slice("miniJS.ThisEval", "miniJS.ThisSyntax", ["This"])
_slice("miniJS.FieldEval", "miniJS.FieldSyntax", ["Field", "FieldAssign"])
_slice("miniJS.SubEval", "miniJS.SubSyntax", ["Sub", "Neg"])
_slice("miniJS.MulEval", "miniJS.MulSyntax", ["Mul", "Div"])
_slice("miniJS.CompareEval", "miniJS.CompareSyntax", ["Less", "Greater", "Eq", "Neq"])
_slice("miniJS.LiteralEval", "miniJS.LiteralSyntax", ["Num", "Str", "True", "False", "Null"])
_slice("miniJS.VarEval", "miniJS.VarSyntax", ["Var"], ["Var"])
_slice("miniJS.ParenEval", "miniJS.ParenSyntax", ["Paren"])
for _name in ("miniJS.AddEval", "miniJS.FloatAddEval", "miniJS.SubtractAddEval"):
    _slice(_name, "miniJS.AddSyntax", ["Add"])
for _name in ("miniJS.NewEval", "miniJS.ArrayLikeNew", "miniJS.PersistentNew"):
    CATALOG.slice(_name, "miniJS.NewSyntax", syntax={"ProtoName": ("miniJS.NewEval", "ProtoName", SYN)},
                  evaluation={"New": (_name, "New", EVAL)})

NEW_SLICES = {"hashmap": "miniJS.NewEval", "arraylike": "miniJS.ArrayLikeNew",
              "persistent": "miniJS.PersistentNew"}
ADD_SLICES = {"default": "miniJS.AddEval", "float": "miniJS.FloatAddEval",
              "subtract": "miniJS.SubtractAddEval"}
BASE_SLICES = ("miniJS.ProgramEval", "miniJS.PrintEval", "miniJS.AssignEval", "miniJS.ExprStmtEval",
               "miniJS.WhileEval", "miniJS.IfEval", "miniJS.FailEval", "miniJS.FunctionEval",
               "miniJS.CallEval", "miniJS.ArgsEval", "miniJS.ThisEval", "miniJS.FieldEval",
               "miniJS.SubEval", "miniJS.MulEval", "miniJS.CompareEval", "miniJS.LiteralEval",
               "miniJS.VarEval", "miniJS.ParenEval")


@functools.lru_cache(maxsize=None)
def minijs_spec(instance="hashmap", add="default"):
    """The MiniJS language; ``instance`` picks the default instantiation
    strategy and ``add`` the addition semantics."""
    try:
        names = BASE_SLICES + (ADD_SLICES[add], NEW_SLICES[instance])
    except KeyError as e:
        raise ValueError("unknown MiniJS option value %s" % e) from None
    return compose_language([CATALOG.slices[n] for n in names], CATALOG.endemics.values(),
                            ROLES, "Program", CATALOG, name="minijs")
