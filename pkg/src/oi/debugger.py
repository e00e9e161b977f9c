"""A gdb-like debugger, written as an ordinary agent.

Breakpoints are hook registrations: ``break Add from module M`` registers a
Before hook on every occurrence of the production, ``break nt Stmt`` on every
node whose production has head ``Stmt``.  While the interpreter waits for our
Resume the session is paused and reads commands; otherwise it waits for the
next notification.
"""

from __future__ import annotations

import shlex
import sys
from dataclasses import dataclass
from typing import Optional

from oi import values
from oi.mop import NodeInfo, SemanticActionInfo
from oi.patterns import AnyNode, Binding, HeadNonterminal, WholeProduction
from oi.wire import RemoteError

USAGE = """commands:
  break <Label> from module <Module> [after]   pause at every occurrence of a production
  break nt <Nonterminal> [after]               pause at every node with that head
  step                                         pause at the next node visit
  continue                                     run until the next breakpoint
  print tree|subtree|attrs|action              inspect the program
  delete <n>                                   remove breakpoint n
  info                                         list breakpoints
  quit                                         detach and let the program finish"""


class UsageError(Exception):
    pass


@dataclass
class Breakpoint:
    number: int
    description: str
    registration: int
    anchors: int


def _render_value(v):
    from oi.minijs.runtime import render
    try:
        return render(values.decode(v) if isinstance(v, dict) else v)
    except (ValueError, KeyError, TypeError):
        return repr(v)


def describe_node(info: NodeInfo) -> str:
    module, label = info.production
    return "%s from module %s (node %d, span %d-%d)" % (label, module, info.id, info.span[0], info.span[1])


def format_tree(info: NodeInfo, indent=0, mark=None) -> list:
    label = info.production[1] or info.head
    attrs = ", ".join("%s=%s" % (name, _render_value(v)) for _, name, v in info.attrs)
    line = "%s%s #%d [%d-%d]%s%s" % ("  " * indent, label, info.id, info.span[0], info.span[1],
                                      "  " + attrs if attrs else "", "   <==" if info.id == mark else "")
    out = [line]
    for c in info.children:
        out.extend(format_tree(c, indent + 1, mark))
    return out


class DebugSession:
    """One REPL session attached to one interpreter."""

    def __init__(self, client, inp=None, out=None, role=None):
        self.client = client
        self.inp = inp or sys.stdin
        self.out = out or sys.stdout
        self.role = role
        self.breakpoints = {}
        self.next_number = 1
        self.step_registration: Optional[int] = None
        self.started = False
        self.paused = None  # the unanswered HookEvent while paused
        self.last_stop = None  # (visit, hook) of the previous pause
        self.pauses = 0

    def say(self, text=""):
        print(text, file=self.out, flush=True)

    # -- commands ---------------------------------------------------------
    def _role(self):
        if self.role is None:
            self.role = self.client.mop("getRoles")[-1]["name"]
        return self.role

    def cmd_break(self, args):
        hook = "before"
        if args and args[-1] == "after":
            hook, args = "after", args[:-1]
        if len(args) == 2 and args[0] == "nt":
            target, desc = HeadNonterminal(args[1]), "nonterminal %s" % args[1]
        elif len(args) == 4 and args[1:3] == ["from", "module"]:
            target, desc = WholeProduction(args[3], args[0]), "%s from module %s" % (args[0], args[3])
        else:
            raise UsageError("usage: break <Label> from module <Module> [after] | break nt <Nonterminal> [after]")
        if hook == "after":
            desc += " (after)"
        rid, count = self.client.register([Binding("bp", target)], "bp", hook, self._role())
        n = self.next_number
        self.next_number += 1
        self.breakpoints[n] = Breakpoint(n, desc, rid, count)
        self.say("Breakpoint %d: %s, %d location%s" % (n, desc, count, "" if count == 1 else "s"))

    def cmd_delete(self, args):
        if len(args) != 1 or not args[0].isdigit():
            raise UsageError("usage: delete <n>")
        bp = self.breakpoints.pop(int(args[0]), None)
        if bp is None:
            raise UsageError("no breakpoint %s" % args[0])
        self.client.unregister(bp.registration)
        self.say("Deleted breakpoint %d" % bp.number)

    def cmd_info(self, args):
        if not self.breakpoints:
            self.say("No breakpoints.")
        for bp in self.breakpoints.values():
            self.say("%d  %s  (%d location%s)" % (bp.number, bp.description, bp.anchors,
                                                   "" if bp.anchors == 1 else "s"))

    def cmd_print(self, args):
        what = args[0] if len(args) == 1 else None
        if what not in ("tree", "subtree", "attrs", "action"):
            raise UsageError("usage: print tree|subtree|attrs|action")
        anchor = self.paused.body["anchor"]["id"] if self.paused else None
        if what == "tree":
            info = NodeInfo.from_dict(self.client.mop("getTree"))
            self.say("\n".join(format_tree(info, mark=anchor)))
            return
        if anchor is None:
            raise UsageError("print %s needs a paused program" % what)
        if what == "subtree":
            info = NodeInfo.from_dict(self.client.mop("getSubtree", node=anchor))
            self.say("\n".join(format_tree(info)))
        elif what == "attrs":
            info = NodeInfo.from_dict(self.client.mop("getSubtree", node=anchor))
            self.say("node %d (%s):" % (info.id, info.production[1]))
            self._attrs(info, "  ")
            for k, c in enumerate(info.children):
                self.say("child %d: node %d (%s):" % (k, c.id, c.production[1]))
                self._attrs(c, "  ")
        else:
            role = self.paused.body["role"]
            a = SemanticActionInfo.from_dict(self.client.mop("getAction", node=anchor, role=role))
            if a.removed:
                self.say("action removed at node %d (role %s)" % (anchor, role))
            elif a.key is None:
                self.say("no action at node %d (role %s): children are visited in order" % (anchor, role))
            else:
                self.say("%s.%s in role %s" % (a.key[0], a.key[1], a.key[2]))
                if a.provides:
                    self.say("  provides: %s" % ", ".join(a.provides))

    def _attrs(self, info, pad):
        if not info.attrs:
            self.say(pad + "(no attributes)")
        for role, name, v in info.attrs:
            self.say("%s%s = %s  [%s]" % (pad, name, _render_value(v), role))

    # -- running ----------------------------------------------------------
    def _go(self, stepping):
        if stepping and self.step_registration is None:
            rid, _ = self.client.register([Binding("n", AnyNode())], "n", "before", self._role())
            self.step_registration = rid
        elif not stepping and self.step_registration is not None:
            self.client.unregister(self.step_registration)
            self.step_registration = None
        if self.paused is not None:
            ev, self.paused = self.paused, None
            self.client.resume(ev.id)
        elif not self.started:
            self.client.ready()
        self.started = True
        return self._wait()

    def _wait(self):
        """Run until the next pause; False once the program has finished."""
        while True:
            ev = self.client.next_event()
            if ev is None:
                self.say("Program finished.")
                return False
            if ev.kind != "HookEvent":
                continue
            stop = (ev.body["visit"], ev.body["hook"])
            if stop == self.last_stop:  # a second registration firing for the visit we stopped at
                self.client.resume(ev.id)
                continue
            self.last_stop = stop
            self.paused = ev
            self.pauses += 1
            info = NodeInfo.from_dict(ev.body["anchor"])
            self.say("Paused %s %s" % (ev.body["hook"], describe_node(info)))
            return True

    def execute(self, line) -> Optional[bool]:
        """Run one command; returns False when the session is over."""
        try:
            words = shlex.split(line)
        except ValueError as e:
            raise UsageError(str(e)) from None
        if not words:
            return True
        cmd, args = words[0], words[1:]
        if cmd in ("quit", "q"):
            return False
        if cmd in ("continue", "c"):
            return self._go(False)
        if cmd in ("step", "s"):
            return self._go(True)
        handler = {"break": self.cmd_break, "b": self.cmd_break, "delete": self.cmd_delete,
                   "print": self.cmd_print, "p": self.cmd_print, "info": self.cmd_info}.get(cmd)
        if cmd == "help":
            self.say(USAGE)
            return True
        if handler is None:
            raise UsageError("unknown command %r; type help" % cmd)
        handler(args)
        return True

    def run(self):
        interactive = hasattr(self.inp, "isatty") and self.inp.isatty()
        while True:
            if interactive:
                print("(oi) ", end="", file=self.out, flush=True)
            line = self.inp.readline()
            if not line:
                break
            try:
                if not self.execute(line):
                    break
            except UsageError as e:
                self.say(str(e))
            except RemoteError as e:
                self.say("error: %s" % e)
        try:  # detach: the program runs on without us
            if self.paused is not None:
                self.client.resume(self.paused.id)
            elif not self.started:
                self.client.ready()
        except (OSError, RemoteError):
            pass
        self.client.close()
        return 0
