"""The interpreter: role-driven tree visits with before/after hooks.

All interpretation happens on one thread.  Other threads (the wire listener,
tests) talk to it by posting operations to an inbox that is drained at safe
points: right before every node visit and whenever the interpreter is idle.
Each drained operation runs as one batch; a batch that fails is rolled back
so hook tables and overrides are never seen half-updated.
"""

from __future__ import annotations

import contextlib
import logging
import sys
import threading
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Callable, Optional

from oi.lang import LanguageSpec, replace_component, validate_signatures
from oi.parser import ParseNode, node_by_id, parse_source
from oi.patterns import TreePattern, eval_constraints, match_nodes

log = logging.getLogger(__name__)

BEFORE, AFTER = "before", "after"
REMOVED = "removed"
IDLE = None


class InterpreterError(Exception):
    """Structured error raised by MOP commands and registrations."""

    def __init__(self, code, message, location=None):
        super().__init__(message)
        self.code, self.location = code, location

    def to_dict(self):
        return {"code": self.code, "message": str(self), "location": self.location}


class RuntimeFault(Exception):
    """A runtime error in the interpreted program; aborts the current role."""

    def __init__(self, message, node=None, frames=()):
        super().__init__(message)
        self.node = node
        self.frames = list(frames)

    def report(self, source=None):
        where = ""
        if self.node is not None and source is not None:
            where = " at %s" % _position(source, self.node.span[0])
        lines = ["error: %s%s" % (self, where)]
        for name, span in self.frames:
            site = _position(source, span[0]) if source is not None else "offset %d" % span[0]
            lines.append("  in %s, called at %s" % (name, site))
        return "\n".join(lines)


def _position(source, offset):
    line = source.count("\n", 0, offset) + 1
    col = offset - (source.rfind("\n", 0, offset) + 1) + 1
    return "line %d, column %d" % (line, col)


class AgentGone(Exception):
    pass


class Unwind(Exception):
    """Non-error control transfer out of an action (e.g. ``return``).

    Unlike errors, unwinding still runs the After hooks of the nodes it
    leaves, so every visited node keeps its Before/action/After sandwich.
    """


@dataclass
class ExecState:
    current_role: Optional[str] = None
    current_node: Optional[int] = None
    paused: bool = False
    spec_version: int = 0


@dataclass
class HookEvent:
    registration: int
    hook: str
    role: str
    anchor: int
    env: dict
    visit: int = 0  # numbers the hooked node visits; equal for hooks fired by the same visit


@dataclass
class Registration:
    id: int
    pattern: TreePattern
    hook: str
    role: str
    agent: object
    owner: object = None
    anchors: dict = field(default_factory=dict)  # anchor node id -> environment


class FunctionAgent:
    """In-process agent wrapping ``fn(vm, event)``."""

    def __init__(self, fn):
        self.fn = fn

    def notify(self, vm, event):
        self.fn(vm, event)


@dataclass
class _Item:
    origin: object
    op: object
    future: Optional[Future] = None
    cause: str = ""


_RESUME = "resume"
_GONE = "gone"


class Ctx:
    """What a semantic action sees: its node, the role, and the machine."""

    __slots__ = ("vm", "node", "role")

    def __init__(self, vm, node, role):
        self.vm, self.node, self.role = vm, node, role

    def eval(self, k):
        self.vm.eval_child(self.node, k, self.role)

    def child(self, k):
        return self.node.nodes[k]

    def token(self, k=0):
        return self.node.tokens[k]

    def get(self, k, name):
        nodes = self.node.nodes
        if not 0 <= k < len(nodes):
            raise RuntimeFault("child index %d out of range" % k, self.node)
        found, value = nodes[k].get_attr(name, self.role, self.vm.spec.role_order)
        if not found:
            raise RuntimeFault("attribute %s is undefined on %s" % (name, nodes[k].label), nodes[k])
        return value

    def attr(self, name, default=None):
        found, value = self.node.get_attr(name, self.role, self.vm.spec.role_order)
        return value if found else default

    def set(self, name, value):
        self.node.attrs[(self.role, name)] = value

    def endemic(self, binding_id):
        return self.vm.get_endemic(binding_id)

    def print(self, text):
        self.vm.write(text)

    def fail(self, message, node=None):
        raise RuntimeFault(message, node or self.node)


class Interpreter:
    def __init__(self, spec: LanguageSpec, source: str = "", tree: ParseNode = None,
                 echo=None, event_log=False):
        self.spec = spec
        self.source = source
        self.tree = tree if tree is not None else parse_source(source, spec)
        self.state = ExecState()
        self.hooks = {}          # (node id, role, hook kind) -> [registration id]
        self.registrations = {}  # id -> Registration
        self.overrides = {}      # (node id, role) -> action key or REMOVED
        self.listeners = []      # callables receiving InterpreterChanged events
        self.events = [] if event_log else None
        self.output = []
        self.echo = echo
        self.errors = []
        self._hooked = set()     # (node id, role) with at least one hook entry
        self._hooked_visits = 0
        self._inbox = deque()
        self._cv = threading.Condition()
        self._next_reg = 1
        self._tx_depth = 0
        self._tx_mutated = []
        self._pending_redo = []
        self._hook_stack = []    # (registration, node, hook kind)
        self._impl_cache = {}
        self._applying = False
        self.endemics = {}
        for e in spec.endemics:
            factory = spec.catalog.impls[e.state_factory]
            self.endemics[e.binding_id] = factory(self)
        if "syntax" in {r for r, _ in spec.bindings()}:
            self._execute_role("syntax")

    # -- output ------------------------------------------------------------
    def write(self, text):
        self.output.append(text + "\n")
        if self.echo is not None:
            self.echo.write(text + "\n")
            self.echo.flush()

    @property
    def stdout(self):
        return "".join(self.output)

    # -- endemic state -----------------------------------------------------
    def get_endemic(self, binding_id):
        try:
            return self.endemics[binding_id]
        except KeyError:
            raise InterpreterError("UnknownEndemic", "no endemic slice binds %s" % binding_id) from None

    def endemic_call(self, name, op, args):
        e = self.spec.endemic_named(name)
        if e is None:
            raise InterpreterError("UnknownEndemic", "no endemic slice %s" % name)
        ref = e.exported_ops.get(op)
        if ref is None:
            raise InterpreterError("UnknownOperation", "%s exports no operation %s" % (e.name, op))
        return self.spec.catalog.impls[ref](self.endemics[e.binding_id], self, *args)

    # -- visiting ----------------------------------------------------------
    def node(self, node_id) -> ParseNode:
        n = node_by_id(self.tree, node_id)
        if n is None:
            raise InterpreterError("UnknownNode", "no node with id %r" % (node_id,))
        return n

    def action_key(self, node, role):
        key = self.overrides.get((node.id, role))
        if key is not None:
            return key
        return self.spec.action_for(role, node.production)

    def _impl(self, key):
        fn = self._impl_cache.get(key)
        if fn is None:
            fn = self.spec.catalog.resolve(key)
            if fn is None:
                raise RuntimeFault("action %s is not in the catalog" % (key,))
            self._impl_cache[key] = fn
        return fn

    def visit(self, node: ParseNode, role: str):
        if self._inbox:
            self.safe_point()
        state = self.state
        prev = state.current_node
        state.current_node = node.id
        ev = self.events
        if ev is not None:
            ev.append(("visit", node.id, role))
        try:
            hooked = (node.id, role) in self._hooked
            if hooked:
                self._hooked_visits += 1
                seq = self._hooked_visits
                self._fire(node, role, BEFORE, seq)
            key = self.action_key(node, role)
            if ev is not None:
                ev.append(("action", node.id, key))
            try:
                if key is None:
                    for c in node.nodes:
                        self.visit(c, role)
                elif key != REMOVED:
                    self._impl(key)(Ctx(self, node, role))
            except Unwind:
                if hooked:
                    self._fire(node, role, AFTER, seq)
                raise
            if hooked:
                self._fire(node, role, AFTER, seq)
        finally:
            state.current_node = prev

    def eval_child(self, node, k, role):
        nodes = node.nodes
        if not isinstance(k, int) or not 0 <= k < len(nodes):
            raise RuntimeFault("child index %r out of range" % (k,), node)
        self.visit(nodes[k], role)

    def _fire(self, node, role, kind, seq=0):
        ids = self.hooks.get((node.id, role, kind))
        if not ids:
            return
        for rid in list(ids):
            reg = self.registrations.get(rid)
            if reg is None or node.id not in reg.anchors:
                continue
            env = reg.anchors[node.id]
            if not eval_constraints(reg.pattern, env, self.tree, role, self.spec.role_order):
                continue
            if self.events is not None:
                self.events.append((kind, rid, node.id))
            self._notify(reg, HookEvent(rid, kind, role, node.id, dict(env), seq), node)

    def _notify(self, reg, event, node):
        self._hook_stack.append((reg, node, event.hook))
        self.state.paused = True
        try:
            reg.agent.notify(self, event)
        except AgentGone:
            self.drop_owner(reg.owner)
        finally:
            self._hook_stack.pop()
            self.state.paused = bool(self._hook_stack)

    @property
    def current_hook(self):
        return self._hook_stack[-1] if self._hook_stack else None

    # -- roles -------------------------------------------------------------
    def _execute_role(self, role):
        state = self.state
        outer = state.current_role
        state.current_role = role
        try:
            self.visit(self.tree, role)
        finally:
            state.current_role = outer

    def run_role(self, role):
        """Run one role from the root; returns False if it aborted."""
        try:
            self._execute_role(role)
            ok = True
        except RuntimeFault as e:
            self.errors.append(e)
            ok = False
        if self.state.current_role is None:
            self.safe_point()
            self._flush_redo()
        return ok

    def run(self):
        for role in self.spec.role_order[1:]:
            if not self.run_role(role):
                return False
        return True

    def redo_role(self, role):
        if role not in self.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % role)
        self._pending_redo.append(role)
        if self.state.current_role is None and not self._tx_depth:
            self._flush_redo()

    def _flush_redo(self):
        while self._pending_redo and self.state.current_role is None:
            self.run_role(self._pending_redo.pop(0))

    # -- transactions and safe points -------------------------------------
    def _snapshot(self):
        return (self.spec, {k: list(v) for k, v in self.hooks.items()},
                {k: (r, dict(r.anchors)) for k, r in self.registrations.items()},
                dict(self.overrides), set(self._hooked), list(self._pending_redo),
                None if self.events is None else len(self.events))

    def _restore(self, snap):
        spec, hooks, regs, overrides, hooked, redo, n_events = snap
        if n_events is not None:  # a rolled-back batch leaves no trace in the log
            del self.events[n_events:]
        self.spec = spec
        self._impl_cache.clear()
        self.hooks = hooks
        self.registrations = {}
        for k, (r, anchors) in regs.items():
            r.anchors = anchors
            self.registrations[k] = r
        self.overrides = overrides
        self._hooked = hooked
        self._pending_redo = redo

    @contextlib.contextmanager
    def transaction(self):
        """Group mutations into one batch: all-or-nothing, one version bump."""
        if self._tx_depth:
            self._tx_depth += 1
            try:
                yield
            finally:
                self._tx_depth -= 1
            return
        snap = self._snapshot()
        self._tx_depth = 1
        self._tx_mutated = []
        try:
            yield
        except BaseException:
            self._tx_depth = 0
            self._restore(snap)
            raise
        self._tx_depth = 0
        if self._tx_mutated:
            self.state.spec_version += 1
            cause = self._tx_mutated[0]
            if self.events is not None:
                self.events.append(("batch", self.state.spec_version, cause))
            self._broadcast({"specVersion": self.state.spec_version, "cause": cause})
        if self.state.current_role is None and not self._applying:
            self._flush_redo()

    def mutated(self, cause):
        self._tx_mutated.append(cause)

    def _broadcast(self, event):
        for fn in list(self.listeners):
            try:
                fn(event)
            except Exception:  # a broken listener must not stall interpretation
                log.exception("InterpreterChanged listener failed")

    def submit(self, op: Callable, origin=None, cause="") -> Future:
        """Queue ``op(vm)`` for the next safe point; the future gets its result."""
        fut = Future()
        with self._cv:
            self._inbox.append(_Item(origin, op, fut, cause))
            self._cv.notify_all()
        return fut

    def post_resume(self, origin, msg_id):
        with self._cv:
            self._inbox.append(_Item(origin, _RESUME, None, msg_id))
            self._cv.notify_all()

    def post_gone(self, origin):
        with self._cv:
            self._inbox.append(_Item(origin, _GONE))
            self._cv.notify_all()

    def wake(self):
        with self._cv:
            self._cv.notify_all()

    def _apply(self, item):
        if item.op == _RESUME:
            return
        if item.op == _GONE:
            self.drop_owner(item.origin)
            return
        fut = item.future
        if fut is not None and not fut.set_running_or_notify_cancel():
            return
        # A redo requested by the batch runs only after the requester has its
        # answer, so an agent may receive hook events caused by its own batch.
        self._applying = True
        try:
            with self.transaction():
                result = item.op(self)
        except BaseException as e:
            if fut is not None:
                fut.set_exception(e)
            return
        finally:
            self._applying = False
        if fut is not None:
            fut.set_result(result)
        if self.state.current_role is None:
            self._flush_redo()

    def safe_point(self):
        while True:
            with self._cv:
                if not self._inbox:
                    return
                item = self._inbox.popleft()
            self._apply(item)

    def serve_idle(self, until: Callable[[], bool], timeout=None, poll=0.05):
        """Process inbox items while idle until ``until()`` holds."""
        import time
        deadline = None if timeout is None else time.monotonic() + timeout
        while not until():
            self.safe_point()
            if until():
                return True
            with self._cv:
                if not self._inbox:
                    self._cv.wait(poll)
            if deadline is not None and time.monotonic() > deadline:
                return until()
        return True

    def wait_for(self, origin, msg_id, timeout=None):
        """Block inside a hook until ``origin`` resumes; its requests run now."""
        while True:
            with self._cv:
                item = None
                while item is None:
                    for i, it in enumerate(self._inbox):
                        if it.origin is origin:
                            item = it
                            del self._inbox[i]
                            break
                    else:
                        if not self._cv.wait(timeout if timeout is not None else 1.0) and timeout:
                            raise AgentGone("agent did not resume in time")
            if item.op == _RESUME:
                if item.cause == msg_id:
                    return
                continue
            if item.op == _GONE:
                raise AgentGone("agent disconnected")
            self._apply(item)

    # -- hook registration -------------------------------------------------
    def register(self, pattern: TreePattern, hook: str, role: str, agent, owner=None):
        """Install ``agent`` at every hook matched by ``pattern``.  Runs on the
        interpreter thread; callers off-thread go through :meth:`submit`."""
        if hook not in (BEFORE, AFTER):
            raise InterpreterError("BadHook", "hook must be before or after")
        if role not in self.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % role)
        matches = match_nodes(self.tree, pattern, self.spec)
        rid = self._next_reg
        self._next_reg += 1
        reg = Registration(rid, pattern, hook, role, agent, owner,
                           {e.anchor: dict(e.env) for e in matches.entries})
        with self.transaction():
            self.registrations[rid] = reg
            for anchor in reg.anchors:
                self.hooks.setdefault((anchor, role, hook), []).append(rid)
                self._hooked.add((anchor, role))
        if self.events is not None:
            self.events.append(("register", rid, tuple(sorted(reg.anchors))))
        return rid, len(reg.anchors)

    def unregister(self, rid, anchor=None):
        """Remove a registration everywhere, or only at one anchor node."""
        reg = self.registrations.get(rid)
        if reg is None:
            return 0
        anchors = list(reg.anchors) if anchor is None else [a for a in reg.anchors if a == anchor]
        with self.transaction():
            for a in anchors:
                key = (a, reg.role, reg.hook)
                lst = self.hooks.get(key)
                if lst and rid in lst:
                    lst.remove(rid)
                    if not lst:
                        del self.hooks[key]
                        other = BEFORE if reg.hook == AFTER else AFTER
                        if (a, reg.role, other) not in self.hooks:
                            self._hooked.discard((a, reg.role))
                del reg.anchors[a]
            if not reg.anchors:
                del self.registrations[rid]
        if self.events is not None:
            self.events.append(("unregister", rid, tuple(anchors)))
        return len(reg.anchors)

    def drop_owner(self, owner):
        if owner is None:
            return
        for rid, reg in list(self.registrations.items()):
            if reg.owner is owner:
                self.unregister(rid)

    # -- intercession primitives (the MOP wraps these) ---------------------
    def replace_slice(self, old_name, new_name):
        new = self.spec.catalog.slices.get(new_name)
        if new is None:
            raise InterpreterError("UnknownSlice", "no slice named %s in the registry" % new_name)
        from oi.lang import LanguageError
        try:
            spec = replace_component(self.spec, old_name, new)
        except LanguageError as e:
            raise InterpreterError(e.code, str(e)) from None
        report = validate_signatures(spec)
        if not report.ok:
            f = report.errors[0]
            raise InterpreterError(f.kind, f.message, f.location)
        with self.transaction():
            self.spec = spec
            self._impl_cache.clear()
            self.mutated("replaceSlice")

    def set_override(self, node_id, role, key):
        node = self.node(node_id)
        if role not in self.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % role)
        catalog = self.spec.catalog
        default = self.spec.action_for(role, node.production)
        need = catalog.actions[default].provides if default else frozenset()
        if key is None or key == REMOVED:
            have, key = frozenset(), REMOVED
        else:
            key = tuple(key)
            action = catalog.actions.get(key)
            if action is None or catalog.impls.get(action.impl_ref) is None:
                raise InterpreterError("UnknownAction", "no action %s" % (key,))
            if action.role != role:
                raise InterpreterError("SignatureMismatch", "action %s belongs to role %s" % (key, action.role))
            have = action.provides
        if not need <= have:
            raise InterpreterError("SignatureMismatch", "specialized action must provide %s"
                                   % ", ".join(sorted(need - have)))
        with self.transaction():
            self.overrides[(node.id, role)] = key
            self.mutated("setSpecializedAction")

    def reset_override(self, node_id, role):
        node = self.node(node_id)
        if role not in self.spec.role_order:
            raise InterpreterError("UnknownRole", "no role %s" % role)
        with self.transaction():
            if self.overrides.pop((node.id, role), None) is not None:
                self.mutated("resetNode")


@dataclass
class ExitReport:
    stdout: str
    error: Optional[str] = None
    interpreter: Optional[Interpreter] = field(default=None, repr=False)

    @property
    def ok(self):
        return self.error is None


_STACK_LOCK = threading.Lock()


def call_with_deep_stack(fn, *args, stack_mb=512, recursion_limit=1_000_000, **kwargs):
    """Run ``fn`` on a fresh thread with a large C stack and recursion limit.

    Tree walking recurses once per tree level, and statement lists nest one
    level per statement, so long programs need more than the default stack."""
    box = {}

    def target():
        try:
            box["result"] = fn(*args, **kwargs)
        except BaseException as e:  # re-raised on the calling thread
            box["error"] = e

    with _STACK_LOCK:
        old_size = threading.stack_size(stack_mb * 1024 * 1024)
        try:
            t = threading.Thread(target=target, name="oi-interpreter")
            t.start()
        finally:
            threading.stack_size(old_size)
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, recursion_limit))
    t.join()
    if "error" in box:
        raise box["error"]
    return box["result"]


def run_program(spec: LanguageSpec, source: str, port: Optional[int] = None, name: Optional[str] = None,
                echo=None, wait_agents: int = 0, linger: bool = False, linger_timeout=None,
                host="127.0.0.1", on_ready=None, event_log=False, deep_stack=True) -> ExitReport:
    """Parse and run ``source``.  With ``port`` the interpreter is open: it
    serves the agent protocol and, with ``name``, is published in the registry.

    ``on_ready(vm, server)`` is called once the interpreter exists, before the
    program starts."""
    args = (spec, source, port, name, echo, wait_agents, linger, linger_timeout, host, on_ready, event_log)
    if deep_stack:
        return call_with_deep_stack(_run_program, *args)
    return _run_program(*args)


def _run_program(spec, source, port, name, echo, wait_agents, linger, linger_timeout, host, on_ready,
                 event_log):
    from oi.parser import LexError, ParseError, AmbiguityError
    try:
        vm = Interpreter(spec, source, echo=echo, event_log=event_log)
    except (LexError, ParseError, AmbiguityError) as e:
        return ExitReport("", "error: %s" % e)
    except RuntimeFault as e:
        return ExitReport("", e.report(source))
    server = None
    if port is not None:
        from oi.wire import Server
        server = Server(vm, host=host, port=port, name=name)
        server.start()
    try:
        if on_ready is not None:
            on_ready(vm, server)
        if server is not None and wait_agents:
            vm.serve_idle(lambda: server.ready_count >= wait_agents)
        vm.run()
        if server is not None and linger:
            vm.serve_idle(lambda: server.had_agents and not server.connections,
                          timeout=linger_timeout)
        vm.safe_point()
    finally:
        if server is not None:
            server.stop()
    error = None
    if vm.errors:
        error = vm.errors[0].report(source)
    return ExitReport(vm.stdout, error, vm)
