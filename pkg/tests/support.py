"""Shared helpers for the test suite: corpus paths and live interpreters."""

from __future__ import annotations

import io
import threading
from pathlib import Path

from oi.minijs import minijs_spec
from oi.muda import AgentRuntime, parse_script
from oi.vm import run_program
from oi.wire import AgentClient

ROOT = Path(__file__).resolve().parent.parent
CORPUS_DIR = ROOT / "demos" / "corpus"
AGENTS_DIR = ROOT / "demos" / "agents"
CORPUS = {p.stem: p.read_text(encoding="utf-8") for p in sorted(CORPUS_DIR.glob("*.mjs"))}


def agent_text(name):
    return (AGENTS_DIR / name).read_text(encoding="utf-8")


def run_closed(source, **spec_options):
    return run_program(minijs_spec(**spec_options), source)


class OpenInterpreter:
    """Runs a program on a background thread with the agent protocol open.

    Use as a context manager; ``result`` holds the ExitReport after exit."""

    def __init__(self, source, spec=None, wait_agents=0, linger=False, linger_timeout=30, event_log=False,
                 name=None):
        self.source = source
        self.spec = spec or minijs_spec()
        self.kwargs = dict(wait_agents=wait_agents, linger=linger, linger_timeout=linger_timeout,
                           event_log=event_log, name=name)
        self.vm = self.server = self.result = None
        self._ready = threading.Event()
        self._error = None

    def _on_ready(self, vm, server):
        self.vm, self.server = vm, server
        self._ready.set()

    def _run(self):
        try:
            self.result = run_program(self.spec, self.source, port=0, on_ready=self._on_ready, **self.kwargs)
        except BaseException as e:  # surfaced by join()
            self._error = e
            self._ready.set()

    def __enter__(self):
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()
        assert self._ready.wait(10), "interpreter did not start"
        if self._error:
            raise self._error
        return self

    @property
    def port(self):
        return self.server.port

    def client(self):
        return AgentClient("127.0.0.1", self.port, timeout=20)

    def join(self, timeout=30):
        self.thread.join(timeout)
        assert not self.thread.is_alive(), "interpreter did not finish"
        if self._error:
            raise self._error
        return self.result

    def __exit__(self, *exc):
        if exc[0] is None:
            self.join()


def run_agent(interp: OpenInterpreter, script_text, timeout=20):
    """Run a µDA script to completion; returns (agent output, runtime)."""
    client = interp.client()
    out, err = io.StringIO(), io.StringIO()
    try:
        rt = AgentRuntime(parse_script(script_text), client, out=out, err=err)
        rt.run(timeout)
    finally:
        client.close()
    return out.getvalue() + err.getvalue(), rt


def start_agent(interp: OpenInterpreter, script_text):
    """Start a µDA script and serve its events on a background thread."""
    client = interp.client()
    out = io.StringIO()
    rt = AgentRuntime(parse_script(script_text), client, out=out, err=out)
    rt.start()
    t = threading.Thread(target=rt.serve, daemon=True)
    t.start()
    return rt, t, out, client
