"""Agent protocol: newline-delimited JSON messages over TCP, plus a
file-based registry of running interpreters.

Every message is one JSON object on one line::

    {"v": "oi/1", "id": 7, "kind": "MopRequest", "body": {...}}

Requests (Register, Unregister, MopRequest, Once) are answered by exactly one
message with the same id (MopResponse, OnceDone or Error).  A HookEvent is
answered by a Resume carrying the event's id; while it is outstanding the
interpreter is paused and serves only the notified agent's requests.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import socket
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from oi import mop
from oi.patterns import Binding, PatternError, compile_pattern, target_from_dict, target_to_dict
from oi.vm import AgentGone, InterpreterError, Interpreter

log = logging.getLogger(__name__)

VERSION = "oi/1"
KINDS = ("Register", "Unregister", "HookEvent", "Resume", "MopRequest", "MopResponse",
         "Once", "OnceDone", "InterpreterChanged", "Error")


class ProtocolError(Exception):
    pass


class RemoteError(Exception):
    """An Error message received from the other side."""

    def __init__(self, code, message, location=None):
        super().__init__("%s: %s" % (code, message))
        self.code, self.message, self.location = code, message, location


@dataclass(frozen=True)
class Message:
    id: int
    kind: str
    body: dict = field(default_factory=dict)


def encode_message(msg: Message) -> bytes:
    if msg.kind not in KINDS:
        raise ProtocolError("unknown message kind %r" % msg.kind)
    doc = {"v": VERSION, "id": msg.id, "kind": msg.kind, "body": msg.body}
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode_message(line) -> Message:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        doc = json.loads(line)
    except ValueError as e:
        raise ProtocolError("malformed message: %s" % e) from None
    if not isinstance(doc, dict) or doc.get("v") != VERSION:
        raise ProtocolError("unsupported protocol version %r" % (doc.get("v") if isinstance(doc, dict) else None))
    kind, mid, body = doc.get("kind"), doc.get("id"), doc.get("body", {})
    if kind not in KINDS or not isinstance(mid, int) or not isinstance(body, dict):
        raise ProtocolError("malformed message header")
    return Message(mid, kind, body)


def error_body(e):
    if isinstance(e, (InterpreterError,)):
        return e.to_dict()
    if isinstance(e, PatternError):
        return {"code": "BadPattern", "message": str(e), "location": None}
    return {"code": type(e).__name__, "message": str(e), "location": None}


# -- registry -----------------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    name: str
    host: str
    port: int
    pid: int
    startedAt: float

    def to_dict(self):
        return {"name": self.name, "host": self.host, "port": self.port, "pid": self.pid,
                "startedAt": self.startedAt}


def pid_alive(pid):
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    except OSError:
        return False
    return True


class RegistryError(Exception):
    pass


class Registry:
    """Directory of ``<name>.json`` files describing live interpreters."""

    def __init__(self, root=None):
        root = root or os.environ.get("OI_REGISTRY_DIR") or os.path.join(os.path.expanduser("~"), ".oi-registry")
        self.root = Path(root)

    def _path(self, name):
        if not name or "/" in name or name.startswith("."):
            raise RegistryError("invalid interpreter name %r" % name)
        return self.root / ("%s.json" % name)

    def _read(self, path):
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
            return RegistryEntry(d["name"], d["host"], int(d["port"]), int(d["pid"]), float(d["startedAt"]))
        except (OSError, ValueError, KeyError, TypeError):
            return None

    def publish(self, name, port, host="127.0.0.1", pid=None) -> RegistryEntry:
        path = self._path(name)
        old = self._read(path)
        if old is not None and pid_alive(old.pid):
            raise RegistryError("an interpreter named %s is already running (pid %d)" % (name, old.pid))
        entry = RegistryEntry(name, host, int(port), pid or os.getpid(), time.time())
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp%d" % os.getpid())
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(entry.to_dict(), f)
        os.replace(tmp, path)
        return entry

    def lookup(self, name) -> Optional[RegistryEntry]:
        entry = self._read(self._path(name))
        if entry is None or not pid_alive(entry.pid):
            return None
        return entry

    def list_live(self):
        if not self.root.is_dir():
            return []
        out = []
        for path in sorted(self.root.glob("*.json")):
            e = self._read(path)
            if e is not None and pid_alive(e.pid):
                out.append(e)
        return out

    def unpublish(self, name, port=None):
        path = self._path(name)
        e = self._read(path)
        if e is not None and (port is None or e.port == port) and e.pid == os.getpid():
            try:
                path.unlink()
            except FileNotFoundError:
                pass


# -- server side ----------------------------------------------------------------

class _Connection:
    def __init__(self, server, sock, addr):
        self.server, self.sock, self.addr = server, sock, addr
        self.lock = threading.Lock()
        self.closed = False
        self.agent = RemoteAgent(self)

    def send(self, msg: Message):
        data = encode_message(msg)
        with self.lock:
            if self.closed:
                raise AgentGone("connection closed")
            try:
                self.sock.sendall(data)
            except OSError:
                self.closed = True
                raise AgentGone("connection lost") from None

    def reply(self, mid, kind, body):
        try:
            self.send(Message(mid, kind, body))
        except AgentGone:
            pass

    def close(self):
        with self.lock:
            self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class RemoteAgent:
    """Forwards hook notifications to an agent over its connection."""

    def __init__(self, conn):
        self.conn = conn

    def notify(self, vm: Interpreter, event):
        if self.conn.closed:
            raise AgentGone("connection closed")
        m = mop.MOP(vm)
        body = {"registration": event.registration, "hook": event.hook, "role": event.role, "visit": event.visit,
                "anchor": m.get_node(event.anchor).to_dict(),
                "env": {k: m.get_node(v).to_dict() for k, v in event.env.items()}}
        mid = self.conn.server.next_id()
        self.conn.send(Message(mid, "HookEvent", body))
        vm.wait_for(self.conn, mid)


def _compile(vm, body):
    try:
        bindings = [Binding(b["id"], target_from_dict(b["target"])) for b in body.get("bindings", ())]
        pattern = compile_pattern(bindings, body["pattern"])
    except KeyError as e:
        raise InterpreterError("BadRequest", "register lacks %s" % e) from None
    for _, b in pattern.bindings:
        t = b.target
        if hasattr(t, "module"):
            p = vm.spec.lookup_production(t.module, t.label)
            if p is None:
                raise InterpreterError("UnknownProduction", "no production %s from module %s" % (t.label, t.module))
            if getattr(t, "position", 0) > len(p.nonterminals):
                raise InterpreterError("BadPattern", "%s has no nonterminal %d" % (t.label, t.position))
    return pattern


class Server:
    """Serves the agent protocol for one interpreter."""

    def __init__(self, vm: Interpreter, host="127.0.0.1", port=0, name=None, registry=None):
        self.vm, self.host, self.name = vm, host, name
        self.registry = registry or (Registry() if name else None)
        self._sock = socket.create_server((host, port))
        self.port = self._sock.getsockname()[1]
        self.connections = set()
        self.had_agents = False
        self.ready_count = 0
        self._ids = iter(range(1, 1 << 62))
        self._id_lock = threading.Lock()
        self._threads = []
        self._stopped = False
        self.entry = None

    def next_id(self):
        with self._id_lock:
            return next(self._ids)

    def start(self):
        if self.name:
            self.entry = self.registry.publish(self.name, self.port, self.host)
        self.vm.listeners.append(self._changed)
        t = threading.Thread(target=self._accept_loop, name="oi-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def stop(self):
        self._stopped = True
        if self._changed in self.vm.listeners:
            self.vm.listeners.remove(self._changed)
        try:
            self._sock.close()
        except OSError:
            pass
        for conn in list(self.connections):
            conn.close()
        if self.name and self.entry is not None:
            self.registry.unpublish(self.name, self.port)

    def _changed(self, event):
        for conn in list(self.connections):
            try:
                conn.send(Message(self.next_id(), "InterpreterChanged", dict(event)))
            except AgentGone:
                pass

    def _accept_loop(self):
        while not self._stopped:
            try:
                sock, addr = self._sock.accept()
            except OSError:
                return
            conn = _Connection(self, sock, addr)
            self.connections.add(conn)
            self.had_agents = True
            t = threading.Thread(target=self._read_loop, args=(conn,), name="oi-conn", daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, conn):
        try:
            with conn.sock.makefile("rb") as f:
                for line in f:
                    if not line.strip():
                        continue
                    try:
                        msg = decode_message(line)
                    except ProtocolError as e:
                        conn.reply(0, "Error", {"code": "ProtocolError", "message": str(e), "location": None})
                        continue
                    self._dispatch(conn, msg)
        except OSError:
            pass
        finally:
            conn.closed = True
            self.connections.discard(conn)
            self.vm.post_gone(conn)

    def _submit(self, conn, msg, op, ok_kind="MopResponse", cause=""):
        fut = self.vm.submit(op, origin=conn, cause=cause)

        def done(f: Future):
            e = f.exception()
            if e is not None:
                conn.reply(msg.id, "Error", error_body(e))
            else:
                conn.reply(msg.id, ok_kind, f.result())
        fut.add_done_callback(done)

    def _dispatch(self, conn, msg: Message):
        body = msg.body
        if msg.kind == "Resume":
            self.vm.post_resume(conn, msg.id)
        elif msg.kind == "Register":
            def op(vm):
                pattern = _compile(vm, body)
                rid, count = vm.register(pattern, body.get("hook"), body.get("role"), conn.agent, owner=conn)
                return {"registration": rid, "anchors": count}
            self._submit(conn, msg, op)
        elif msg.kind == "Unregister":
            def op(vm):
                return {"remaining": vm.unregister(body.get("registration"), body.get("anchor"))}
            self._submit(conn, msg, op)
        elif msg.kind == "MopRequest":
            if body.get("op") == "ready":
                def op(vm):
                    self.ready_count += 1
                    return {"result": None}
            else:
                def op(vm):
                    return {"result": mop.execute(vm, body)}
            self._submit(conn, msg, op)
        elif msg.kind == "Once":
            def op(vm):
                return {"results": mop.execute_batch(vm, body.get("commands", []))}
            self._submit(conn, msg, op, ok_kind="OnceDone")
        else:
            conn.reply(msg.id, "Error", {"code": "ProtocolError",
                                         "message": "unexpected %s from an agent" % msg.kind, "location": None})


# -- agent side -------------------------------------------------------------------

class AgentClient:
    """Blocking client used by agents (µDA runtime, debugger, tests)."""

    def __init__(self, host, port, timeout=30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(None)
        self.timeout = timeout
        self._ids = iter(range(1, 1 << 62))
        self._pending = {}
        self._lock = threading.Lock()
        self.events = queue.Queue()
        self.closed = False
        self.transcript = []  # (kind, body) of every request sent
        self._reader = threading.Thread(target=self._read_loop, name="oi-agent", daemon=True)
        self._reader.start()

    @classmethod
    def connect(cls, name, registry=None, **kw):
        entry = (registry or Registry()).lookup(name)
        if entry is None:
            raise RegistryError("interpreter %s not found in registry" % name)
        return cls(entry.host, entry.port, **kw)

    def _read_loop(self):
        try:
            with self.sock.makefile("rb") as f:
                for line in f:
                    msg = decode_message(line)
                    if msg.kind in ("HookEvent", "InterpreterChanged"):
                        self.events.put(msg)
                        continue
                    with self._lock:
                        fut = self._pending.pop(msg.id, None)
                    if fut is not None:
                        fut.set_result(msg)
                    elif msg.kind == "Error":
                        self.events.put(msg)
        except (OSError, ProtocolError, ValueError):
            pass
        finally:
            self.closed = True
            with self._lock:
                pending, self._pending = self._pending, {}
            for fut in pending.values():
                fut.set_exception(ConnectionError("interpreter closed the connection"))
            self.events.put(None)

    def _send(self, kind, body, mid=None):
        mid = next(self._ids) if mid is None else mid
        data = encode_message(Message(mid, kind, body))
        self.sock.sendall(data)
        return mid

    def request(self, kind, body, timeout=None):
        fut = Future()
        with self._lock:
            if self.closed:
                raise ConnectionError("interpreter closed the connection")
            mid = next(self._ids)
            self._pending[mid] = fut
        self.transcript.append((kind, body))
        self._send(kind, body, mid)
        msg = fut.result(timeout if timeout is not None else self.timeout)
        if msg.kind == "Error":
            b = msg.body
            raise RemoteError(b.get("code"), b.get("message"), b.get("location"))
        return msg.body

    # convenience wrappers
    def mop(self, op, /, **args):
        return self.request("MopRequest", {"op": op, "args": args})["result"]

    def register(self, bindings, pattern, hook, role):
        body = {"bindings": [{"id": b.id, "target": target_to_dict(b.target)} for b in bindings],
                "pattern": pattern, "hook": hook, "role": role}
        r = self.request("Register", body)
        return r["registration"], r["anchors"]

    def unregister(self, rid, anchor=None):
        body = {"registration": rid}
        if anchor is not None:
            body["anchor"] = anchor
        return self.request("Unregister", body)["remaining"]

    def once(self, commands):
        return self.request("Once", {"commands": list(commands)})["results"]

    def ready(self):
        self.request("MopRequest", {"op": "ready", "args": {}})

    def next_event(self, timeout=None):
        """Next HookEvent/InterpreterChanged, or None once the connection closed."""
        try:
            return self.events.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError("no event within %s s" % timeout) from None

    def resume(self, event_id, note=None):
        self._send("Resume", {"note": note} if note else {}, event_id)

    def close(self):
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
