"""MiniJS objects, instantiation strategies, and the endemic state.

Three strategies store fields differently behind one interface:

* :class:`HashMapInstance` keeps a name -> value map;
* :class:`ArrayLikeInstance` keeps a slot array whose layout is frozen once
  the constructor finishes;
* :class:`PersistentInstance` writes every field through to a JSON file and
  reloads it before every read.

Objects are addressed by :class:`~oi.values.ObjectRef`.  Re-instantiating an
object under another strategy gives it a new id but keeps its identity seed;
the old id is forwarded so stale references still resolve.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections import deque
from pathlib import Path

from oi import values
from oi.minijs.runtime import MiniJSError
from oi.values import ObjectRef


class StoreError(MiniJSError):
    pass


class Instance:
    strategy = "Instance"

    def __init__(self, oid, proto, seed, heap):
        self.id, self.proto, self.seed, self.heap = oid, proto, seed, heap

    def get(self, name):
        raise NotImplementedError

    def set(self, name, value):
        raise NotImplementedError

    def fields(self) -> dict:
        raise NotImplementedError

    def seal(self):
        """Called when the constructor returns."""

    def __repr__(self):
        return "<%s #%d %s seed=%d>" % (self.strategy, self.id, self.proto, self.seed)


class HashMapInstance(Instance):
    strategy = "HashMapInstance"

    def __init__(self, oid, proto, seed, heap):
        super().__init__(oid, proto, seed, heap)
        self._fields = {}

    def get(self, name):
        return self._fields.get(name)

    def set(self, name, value):
        self._fields[name] = value

    def fields(self):
        return dict(self._fields)


class ArrayLikeInstance(Instance):
    strategy = "ArrayLikeInstance"

    def __init__(self, oid, proto, seed, heap):
        super().__init__(oid, proto, seed, heap)
        self._slots = []
        self._index = {}
        self._sealed = False

    def get(self, name):
        i = self._index.get(name)
        return None if i is None else self._slots[i]

    def set(self, name, value):
        i = self._index.get(name)
        if i is None:
            if self._sealed:
                raise MiniJSError("object %s has no field %s (layout is fixed)" % (self.proto, name))
            self._index[name] = len(self._slots)
            self._slots.append(value)
        else:
            self._slots[i] = value

    def seal(self):
        self._sealed = True

    def fields(self):
        return {n: self._slots[i] for n, i in self._index.items()}


class PersistentInstance(Instance):
    strategy = "PersistentInstance"

    def __init__(self, oid, proto, seed, heap):
        super().__init__(oid, proto, seed, heap)
        self.store = heap.store
        if self.store.load(seed) is None:
            self.store.save(seed, proto, {})

    def _load(self):
        doc = self.store.load(self.seed)
        if doc is None:
            return {}
        return {n: self.heap.decode_stored(v) for n, v in doc["fields"].items()}

    def get(self, name):
        return self._load().get(name)

    def set(self, name, value):
        fields = self._load()
        fields[name] = value
        self._save(fields)

    def _save(self, fields):
        self.store.save(self.seed, self.proto,
                        {n: self.heap.encode_stored(v) for n, v in fields.items()})

    def fields(self):
        return self._load()

    def replace_all(self, fields):
        self._save(fields)


STRATEGIES = {cls.strategy: cls for cls in (HashMapInstance, ArrayLikeInstance, PersistentInstance)}
ALIASES = {"hashmap": "HashMapInstance", "arraylike": "ArrayLikeInstance", "persistent": "PersistentInstance"}


def strategy_class(name):
    cls = STRATEGIES.get(ALIASES.get(name, name))
    if cls is None:
        raise MiniJSError("unknown instance strategy %s" % name)
    return cls


class ObjectStore:
    """One JSON file per identity seed, replaced atomically on every write."""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, seed):
        return self.root / ("%d.json" % seed)

    def load(self, seed):
        path = self.path(seed)
        try:
            with open(path, encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as e:
            raise StoreError("cannot read object store file %s: %s" % (path, e)) from None

    def save(self, seed, proto, fields):
        path = self.path(seed)
        doc = {"proto": proto, "fields": fields, "identitySeed": seed}
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".%d." % seed, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(doc, f, sort_keys=True)
            os.replace(tmp, path)
        except OSError as e:
            raise StoreError("cannot write object store file %s: %s" % (path, e)) from None


class Heap:
    """All live objects of one interpreter."""

    def __init__(self, store_dir=None):
        self.objects = {}   # id -> Instance
        self.forwards = {}  # migrated id -> replacement id
        self.by_seed = {}   # identity seed -> current id
        self.next_id = 1
        self.store = ObjectStore(store_dir or os.environ.get("OI_STORE_DIR", "./oi-store"))

    def _resolve(self, oid):
        while oid in self.forwards:
            oid = self.forwards[oid]
        return oid

    def get(self, ref):
        return self.objects.get(self._resolve(ref.id))

    def deref(self, ref):
        inst = self.get(ref)
        if inst is None:
            raise MiniJSError("dangling object reference #%d" % ref.id)
        return inst

    def identity(self, ref):
        inst = self.get(ref)
        return inst.seed if inst is not None else -ref.id

    def allocate(self, proto, strategy, seed=None):
        cls = strategy_class(strategy)
        oid = self.next_id
        self.next_id += 1
        inst = cls(oid, proto, oid if seed is None else seed, self)
        self.objects[oid] = inst
        self.by_seed[inst.seed] = oid
        return inst

    # persistent field encoding: object references are stored by identity seed
    def encode_stored(self, v):
        if isinstance(v, ObjectRef):
            return {"t": "obj", "v": self.identity(v)}
        return values.encode(v)

    def decode_stored(self, d):
        if d.get("t") != "obj":
            return values.decode(d)
        seed = int(d["v"])
        oid = self.by_seed.get(seed)
        if oid is None:
            doc = self.store.load(seed)
            proto = doc["proto"] if doc else "Object"
            oid = self.allocate(proto, "PersistentInstance", seed=seed).id
        return ObjectRef(oid)

    def migrate(self, inst, strategy):
        """Re-instantiate ``inst`` under ``strategy``; returns the new instance."""
        fields = inst.fields()
        new = self.allocate(inst.proto, strategy, seed=inst.seed)
        for name, v in fields.items():
            new.set(name, v)
        new.seal()
        del self.objects[inst.id]
        self.forwards[inst.id] = new.id
        self.by_seed[inst.seed] = new.id
        return new


class SymbolTable:
    """Scopes (globals at the bottom) and the receiver stack of running calls."""

    def __init__(self):
        self.scopes = [{}]
        self.receivers = []

    @property
    def globals(self):
        return self.scopes[0]

    def lookup(self, name):
        frame = self.scopes[-1]
        if name in frame:
            return True, frame[name]
        if name in self.globals:
            return True, self.globals[name]
        return False, None

    def assign(self, name, value):
        frame = self.scopes[-1]
        if name not in frame and name in self.globals:
            frame = self.globals
        frame[name] = value

    def push(self, bindings, receiver=None):
        self.scopes.append(dict(bindings))
        self.receivers.append(receiver)

    def pop(self):
        self.scopes.pop()
        self.receivers.pop()

    @property
    def receiver(self):
        return self.receivers[-1] if self.receivers else None

    def roots(self):
        for frame in self.scopes:
            yield from frame.values()
        yield from (r for r in self.receivers if r is not None)

    def replace_all(self, mapping):
        """Substitute every ObjectRef whose id is a key of ``mapping``."""
        def sub(v):
            if isinstance(v, ObjectRef) and v.id in mapping:
                return ObjectRef(mapping[v.id])
            return v
        for frame in self.scopes:
            for k, v in frame.items():
                frame[k] = sub(v)
        self.receivers = [sub(r) for r in self.receivers]


def reachable(heap, symtab):
    """Instances reachable from the symbol table, in discovery order."""
    seen, out = set(), []
    queue = deque(v for v in symtab.roots() if isinstance(v, ObjectRef))
    while queue:
        inst = heap.get(queue.popleft())
        if inst is None or inst.id in seen:
            continue
        seen.add(inst.id)
        out.append(inst)
        queue.extend(v for v in inst.fields().values() if isinstance(v, ObjectRef))
    return out


def migrate_instances(symtab, vm, proto, strategy):
    """Re-instantiate every reachable ``proto`` object under ``strategy``."""
    heap = vm.get_endemic("Heap")
    target = strategy_class(strategy).strategy
    mapping = {}
    for inst in reachable(heap, symtab):
        if inst.proto == proto and inst.strategy != target:
            mapping[inst.id] = heap.migrate(inst, target).id
    if not mapping:
        return 0.0
    symtab.replace_all(mapping)
    for inst in list(heap.objects.values()):
        if isinstance(inst, PersistentInstance):
            continue  # references are stored by identity seed, nothing to rewrite
        for name, v in inst.fields().items():
            if isinstance(v, ObjectRef) and v.id in mapping:
                inst.set(name, ObjectRef(mapping[v.id]))
    return float(len(mapping))


class StackTrace:
    def __init__(self):
        self.frames = []  # (function name, call-site span), innermost last

    def push(self, name, span=(0, 0)):
        self.frames.append((name, tuple(span)))

    def pop(self):
        if self.frames:
            self.frames.pop()

    def top_down(self):
        return list(reversed(self.frames))
