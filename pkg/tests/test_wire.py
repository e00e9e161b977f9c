"""Agent protocol: message codec, registry, server and client."""

import json
import os
import socket
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from oi.patterns import Binding, HeadNonterminal, WholeProduction
from oi.wire import (KINDS, VERSION, AgentClient, Message, ProtocolError, Registry, RegistryError, RemoteError,
                     decode_message, encode_message)
from support import OpenInterpreter

ADD = WholeProduction("miniJS.AddSyntax", "Add")

_json = st.recursive(st.one_of(st.none(), st.booleans(), st.integers(-10**9, 10**9), st.text(max_size=10),
                               st.floats(allow_nan=False, allow_infinity=False)),
                     lambda inner: st.one_of(st.lists(inner, max_size=3),
                                             st.dictionaries(st.text(max_size=5), inner, max_size=3)),
                     max_leaves=10)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**40), st.sampled_from(KINDS), st.dictionaries(st.text(max_size=6), _json, max_size=4))
def test_message_round_trip(mid, kind, body):
    data = encode_message(Message(mid, kind, body))
    assert data.endswith(b"\n") and data.count(b"\n") == 1
    assert decode_message(data) == Message(mid, kind, body)


@pytest.mark.parametrize("line", [
    "not json", "[]", json.dumps({"v": "oi/0", "id": 1, "kind": "Resume", "body": {}}),
    json.dumps({"v": VERSION, "id": "1", "kind": "Resume", "body": {}}),
    json.dumps({"v": VERSION, "id": 1, "kind": "Shout", "body": {}}),
    json.dumps({"v": VERSION, "id": 1, "kind": "Resume", "body": []})])
def test_malformed_messages_rejected(line):
    with pytest.raises(ProtocolError):
        decode_message(line)


def test_encode_rejects_unknown_kind_and_nan():
    with pytest.raises(ProtocolError):
        encode_message(Message(1, "Shout"))
    with pytest.raises(ValueError):
        encode_message(Message(1, "Resume", {"x": float("nan")}))


def test_registry_publish_lookup_unpublish(tmp_path):
    reg = Registry(tmp_path)
    e = reg.publish("calc", 4242)
    assert reg.lookup("calc") == e
    assert [x.name for x in reg.list_live()] == ["calc"]
    with pytest.raises(RegistryError):
        reg.publish("calc", 4243)  # still alive
    reg.unpublish("calc")
    assert reg.lookup("calc") is None
    with pytest.raises(RegistryError):
        reg.publish("../evil", 1)


def test_registry_ignores_dead_processes(tmp_path):
    reg = Registry(tmp_path)
    (tmp_path / "ghost.json").write_text(json.dumps(
        {"name": "ghost", "host": "127.0.0.1", "port": 1, "pid": 2**22 + 12345, "startedAt": 0}))
    assert reg.lookup("ghost") is None
    reg.publish("ghost", 5)  # a stale entry may be replaced
    assert reg.lookup("ghost").pid == os.getpid()


def test_registry_uses_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("OI_REGISTRY_DIR", str(tmp_path / "r"))
    Registry().publish("x", 1)
    assert (tmp_path / "r" / "x.json").exists()


def test_named_interpreter_is_published_and_removed():
    with OpenInterpreter("print(1);", wait_agents=1, name="named"):
        c = AgentClient.connect("named")
        c.ready()
        c.close()
    assert Registry().lookup("named") is None
    with pytest.raises(RegistryError):
        AgentClient.connect("named")


def test_register_hook_resume_flow():
    with OpenInterpreter("print(1+2+3);", wait_agents=1) as interp:
        c = interp.client()
        rid, count = c.register([Binding("a", ADD)], "a", "before", "evaluation")
        assert count == 2
        c.ready()
        anchors = []
        while True:
            ev = c.next_event(10)
            if ev is None:
                break
            if ev.kind == "HookEvent":
                assert ev.body["registration"] == rid and ev.body["hook"] == "before"
                assert ev.body["env"]["a"]["id"] == ev.body["anchor"]["id"]
                anchors.append(ev.body["anchor"]["id"])
                c.resume(ev.id)
        c.close()
    assert len(anchors) == 2 and anchors[0] < anchors[1]
    assert interp.result.stdout == "6\n"


def test_requests_inside_a_hook_see_the_paused_state():
    with OpenInterpreter("print(1+2+3);", wait_agents=1) as interp:
        c = interp.client()
        c.register([Binding("a", ADD)], "a", "after", "evaluation")
        c.ready()
        vals = []
        while (ev := c.next_event(10)) is not None:
            if ev.kind == "HookEvent":
                vals.append(c.mop("getAttr", node=ev.body["anchor"]["id"], name="val")["v"])
                assert c.mop("getRole")["name"] == "evaluation"
                c.resume(ev.id)
        c.close()
    assert vals == [3.0, 6.0]


def test_errors_are_structured():
    with OpenInterpreter("print(1);", wait_agents=1) as interp:
        c = interp.client()
        with pytest.raises(RemoteError) as e:
            c.register([Binding("a", WholeProduction("nope", "X"))], "a", "before", "evaluation")
        assert e.value.code == "UnknownProduction"
        with pytest.raises(RemoteError) as e:
            c.register([Binding("a", ADD)], "a <", "before", "evaluation")
        assert e.value.code == "BadPattern"
        with pytest.raises(RemoteError) as e:
            c.mop("getNode", node=12345)
        assert e.value.code == "UnknownNode"
        with pytest.raises(RemoteError) as e:
            c.once([{"op": "redoRole", "args": {"role": "evaluation"}}, {"op": "bogus"}])
        assert e.value.code == "UnknownCommand"
        c.ready()
        c.close()
    assert interp.result.stdout == "1\n"  # the failed batch did not redo anything


def test_once_batch_returns_results_and_broadcasts_change():
    with OpenInterpreter("print(1+2);", wait_agents=1) as interp:
        watcher, c = interp.client(), interp.client()
        results = c.once([{"op": "getRoles"},
                          {"op": "replaceSlice", "args": {"old": "miniJS.AddEval", "new": "miniJS.SubtractAddEval"}}])
        assert [r["name"] for r in results[0]] == ["syntax", "evaluation"] and results[1] is None
        ev = watcher.next_event(10)
        assert ev.kind == "InterpreterChanged" and ev.body == {"specVersion": 1, "cause": "replaceSlice"}
        c.ready()
        c.close()
        watcher.close()
    assert interp.result.stdout == "-1\n"


def test_protocol_garbage_gets_error_reply():
    with OpenInterpreter("print(1);", wait_agents=1) as interp:
        s = socket.create_connection(("127.0.0.1", interp.port))
        s.sendall(b"{nonsense\n")
        f = s.makefile("rb")
        reply = decode_message(f.readline())
        assert reply.kind == "Error" and reply.body["code"] == "ProtocolError"
        c = interp.client()
        c.ready()
        c.close()
        s.close()


def test_disconnect_while_paused_drops_registrations():
    with OpenInterpreter("print(1+2+3); print(4+5);", wait_agents=1) as interp:
        c = interp.client()
        c.register([Binding("a", ADD)], "a", "before", "evaluation")
        c.ready()
        ev = c.next_event(10)
        assert ev.kind == "HookEvent"
        c.close()  # never resumes
    assert interp.result.stdout == "6\n9\n"
    assert interp.result.interpreter.registrations == {}


def test_unregister_one_anchor_over_the_wire():
    with OpenInterpreter("print(1+2+3);", wait_agents=1) as interp:
        c = interp.client()
        rid, _ = c.register([Binding("s", HeadNonterminal("Stmt"))], "s", "before", "evaluation")
        tree = c.mop("getTree")
        first_stmt = next(n for n in _walk(tree) if n["head"] == "Stmt")["id"]
        assert c.unregister(rid, anchor=first_stmt) == 0
        c.ready()
        assert c.next_event(10) is None  # no hook left; the program just ends
        c.close()


def _walk(d):
    yield d
    for c in d.get("children", ()):
        yield from _walk(c)


def test_linger_keeps_serving_until_agents_leave():
    with OpenInterpreter("print(1);", linger=True, linger_timeout=10) as interp:
        c = interp.client()
        while not interp.vm.output:
            time.sleep(0.005)
        c.once([{"op": "redoRole", "args": {"role": "evaluation"}}])
        c.close()
    assert interp.result.stdout == "1\n1\n"


def test_agents_run_concurrently():
    with OpenInterpreter("print(1+2+3);", wait_agents=2) as interp:
        clients = [interp.client() for _ in range(2)]
        for c in clients:
            c.register([Binding("a", ADD)], "a", "before", "evaluation")
        counts = [0, 0]

        def serve(k):
            c = clients[k]
            while (ev := c.next_event(10)) is not None:
                if ev.kind == "HookEvent":
                    counts[k] += 1
                    c.resume(ev.id)
        threads = [threading.Thread(target=serve, args=(k,)) for k in range(2)]
        for t in threads:
            t.start()
        for c in clients:
            c.ready()
        while interp.vm.state.current_role is not None or not interp.vm.output:
            time.sleep(0.01)
        for c in clients:
            c.close()
        for t in threads:
            t.join(10)
    assert counts == [2, 2]
