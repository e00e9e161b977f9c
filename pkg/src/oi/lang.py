"""Language specifications built from slices.

A language is a set of slices.  Each slice pairs a syntax module (a group of
labelled productions) with role-labelled semantic actions.  Actions are
entries of a build-time :class:`Catalog`; swapping semantics at runtime means
rebinding catalog keys, never generating code.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional


class Assoc(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    NONE = "none"


@dataclass(frozen=True)
class Nonterminal:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Literal:
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("literal terminals must be non-empty")

    def __str__(self):
        return '"%s"' % self.text


TOKEN_CLASSES = ("NUM", "STRING", "ID")


@dataclass(frozen=True)
class TokenClass:
    name: str

    def __post_init__(self):
        if self.name not in TOKEN_CLASSES:
            raise ValueError("unknown token class %r" % self.name)

    def __str__(self):
        return self.name


Symbol = Nonterminal | Literal | TokenClass


@dataclass(frozen=True)
class Production:
    module: str
    label: Optional[str]
    head: str
    body: tuple
    precedence: int = 0
    assoc: Assoc = Assoc.NONE

    def __post_init__(self):
        if not self.head[:1].isupper():
            raise ValueError("nonterminal %r must be capitalized" % self.head)
        if self.precedence < 0:
            raise ValueError("precedence must be >= 0")
        object.__setattr__(self, "body", tuple(self.body))
        for sym in self.body:
            if isinstance(sym, Nonterminal) and not sym.name[:1].isupper():
                raise ValueError("nonterminal %r must be capitalized" % sym.name)

    @property
    def ref(self):
        return (self.module, self.label)

    @property
    def shape(self):
        """Label-insensitive structural key: (head, body)."""
        return (self.head, self.body)

    @property
    def nonterminals(self):
        return [s.name for s in self.body if isinstance(s, Nonterminal)]

    def dump(self):
        rhs = " ".join(str(s) for s in self.body) or "<empty>"
        line = "%s :: %s : %s <- %s" % (self.module, self.label or "_", self.head, rhs)
        if self.precedence:
            line += " [prec %d, %s]" % (self.precedence, self.assoc.value)
        return line


def prod(module, label, head, *body, prec=0, assoc=Assoc.NONE):
    """Shorthand: capitalized strings are nonterminals, NUM/STRING/ID are
    token classes, anything else is a literal."""
    syms = []
    for s in body:
        if s in TOKEN_CLASSES:
            syms.append(TokenClass(s))
        elif s[:1].isupper():
            syms.append(Nonterminal(s))
        else:
            syms.append(Literal(s))
    if isinstance(assoc, str):
        assoc = Assoc(assoc)
    return Production(module, label, head, tuple(syms), prec, assoc)


@dataclass(frozen=True)
class SyntaxModule:
    name: str
    productions: tuple

    def __post_init__(self):
        object.__setattr__(self, "productions", tuple(self.productions))
        seen = set()
        for p in self.productions:
            if p.module != self.name:
                raise ValueError("production %r belongs to module %s" % (p.label, p.module))
            if p.label is not None:
                if p.label in seen:
                    raise ValueError("duplicate label %s in module %s" % (p.label, self.name))
                seen.add(p.label)

    def get(self, label):
        for p in self.productions:
            if p.label == label:
                return p
        return None


ActionKey = tuple  # (moduleName, actionLabel, roleName)


@dataclass(frozen=True)
class SemanticAction:
    key: tuple
    provides: frozenset
    requires: frozenset  # of (nonterminal child index, attribute name)
    impl_ref: str

    def __post_init__(self):
        object.__setattr__(self, "provides", frozenset(self.provides))
        object.__setattr__(self, "requires", frozenset(self.requires))
        if any(not a for a in self.provides) or any(not a for _, a in self.requires):
            raise ValueError("attribute names must be non-empty")

    @property
    def role(self):
        return self.key[2]


@dataclass(frozen=True)
class Slice:
    name: str
    syntax: SyntaxModule
    role_bindings: Mapping  # role -> tuple of (production label, action key)

    def __post_init__(self):
        bindings = {r: tuple(tuple(b) for b in bs) for r, bs in dict(self.role_bindings).items()}
        object.__setattr__(self, "role_bindings", bindings)
        for role, pairs in bindings.items():
            labels = [lab for lab, _ in pairs]
            if len(labels) != len(set(labels)):
                raise ValueError("slice %s binds a label twice in role %s" % (self.name, role))
            for lab in labels:
                if self.syntax.get(lab) is None:
                    raise ValueError("slice %s binds unknown label %s" % (self.name, lab))

    @property
    def syntax_module(self):
        return self.syntax.name

    def __hash__(self):
        return hash((self.name, self.syntax.name))

    def __eq__(self, other):
        if not isinstance(other, Slice):
            return NotImplemented
        return (self.name, self.syntax, self.role_bindings) == (
            other.name, other.syntax, other.role_bindings)


@dataclass(frozen=True)
class EndemicSlice:
    name: str
    binding_id: str
    state_factory: str
    exported_ops: Mapping = field(default_factory=dict)

    def __hash__(self):
        return hash((self.name, self.binding_id))

    def __eq__(self, other):
        if not isinstance(other, EndemicSlice):
            return NotImplemented
        return (self.name, self.binding_id, self.state_factory, dict(self.exported_ops)) == (
            other.name, other.binding_id, other.state_factory, dict(other.exported_ops))


class Catalog:
    """Build-time registry of host-code actions, slices and endemic slices."""

    def __init__(self):
        self.impls = {}
        self.actions = {}
        self.modules = {}
        self.slices = {}
        self.endemics = {}

    def module(self, name, *productions):
        mod = SyntaxModule(name, productions)
        self.modules[name] = mod
        return mod

    def action(self, module, label, role, provides=(), requires=()):
        """Decorator registering ``fn`` as the action (module, label, role)."""
        def register(fn):
            ref = "%s.%s@%s" % (module, label, role)
            self.impls[ref] = fn
            self.actions[(module, label, role)] = SemanticAction(
                (module, label, role), frozenset(provides), frozenset(requires), ref)
            return fn
        return register

    def slice(self, name, module, **roles):
        """Register a slice over syntax ``module``; ``roles`` maps
        role -> {label: action key}."""
        if isinstance(module, str):
            module = self.modules[module]
        bindings = {r: tuple(m.items()) for r, m in roles.items()}
        sl = Slice(name, module, bindings)
        self.slices[name] = sl
        return sl

    def endemic(self, name, binding_id, factory, **ops):
        ref = "%s#state" % name
        self.impls[ref] = factory
        exported = {}
        for op, fn in ops.items():
            oref = "%s#%s" % (name, op)
            self.impls[oref] = fn
            exported[op] = oref
        es = EndemicSlice(name, binding_id, ref, exported)
        self.endemics[name] = es
        return es

    def resolve(self, key) -> Optional[Callable]:
        action = self.actions.get(tuple(key))
        if action is None:
            return None
        return self.impls.get(action.impl_ref)


# -- errors -----------------------------------------------------------------

class LanguageError(Exception):
    code = "LanguageError"


class CompositionError(LanguageError):
    code = "CompositionError"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SyntaxMismatch(LanguageError):
    code = "SyntaxMismatch"


class UnknownSlice(LanguageError):
    code = "UnknownSlice"


@dataclass(frozen=True)
class Finding:
    kind: str  # MissingAttribute | SignatureMismatch | DuplicateLabel | UnknownAction
    location: str
    message: str


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def kinds(self):
        return [e.kind for e in self.errors]

    def add(self, kind, location, message):
        self.errors.append(Finding(kind, location, message))


# -- specifications ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LanguageSpec:
    name: str
    slices: tuple
    endemics: tuple
    role_order: tuple
    start: str
    catalog: Catalog
    replacements: tuple = ()  # (old Slice, new Slice) history

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(sorted(self.slices, key=lambda s: s.name)))
        object.__setattr__(self, "endemics", tuple(sorted(self.endemics, key=lambda e: e.name)))
        object.__setattr__(self, "role_order", tuple(self.role_order))
        prods = {}
        for sl in self.slices:
            for p in sl.syntax.productions:
                prods.setdefault(p.ref if p.label else (p.module, p.shape), p)
        ordered = sorted(prods.values(), key=lambda p: (p.module, p.label or "", str(p.shape)))
        object.__setattr__(self, "_productions", tuple(ordered))
        by_shape = {}
        for p in ordered:
            by_shape.setdefault(p.shape, []).append(p)
        object.__setattr__(self, "_by_shape", by_shape)
        bindings = {}
        for sl in self.slices:
            for role, pairs in sl.role_bindings.items():
                for label, key in pairs:
                    p = sl.syntax.get(label)
                    bindings.setdefault((role, p.shape), []).append((sl.name, p, tuple(key)))
        object.__setattr__(self, "_bindings", bindings)

    # structural queries
    @property
    def productions(self):
        return self._productions

    def nonterminals(self):
        return sorted({p.head for p in self._productions})

    def production_for(self, shape):
        ps = self._by_shape.get(shape)
        return ps[0] if ps else None

    def action_for(self, role, production) -> Optional[tuple]:
        entries = self._bindings.get((role, production.shape))
        return entries[0][2] if entries else None

    def bindings(self):
        """Map (role, production shape) -> action key."""
        return {k: v[0][2] for k, v in self._bindings.items()}

    def slice_named(self, name):
        for sl in self.slices:
            if sl.name == name:
                return sl
        return None

    def endemic_named(self, name):
        for e in self.endemics:
            if e.name == name or e.binding_id == name:
                return e
        return None

    def role_index(self, role):
        return self.role_order.index(role)

    def dump(self):
        return "\n".join(p.dump() for p in self._productions)

    def lookup_production(self, module, label):
        for p in self._productions:
            if p.module == module and p.label == label:
                return p
        return None

    def observational_key(self):
        """Everything that affects parsing and evaluation."""
        return (self.start, self.role_order, frozenset(p.shape + (p.precedence, p.assoc) for p in self._productions),
                frozenset(self.bindings().items()), frozenset(e.name for e in self.endemics))


def _duplicate_findings(slices, report):
    owner = {}
    for sl in slices:
        for role, pairs in sl.role_bindings.items():
            for label, key in pairs:
                p = sl.syntax.get(label)
                where = (role, p.shape)
                prev = owner.get(where)
                if prev is not None and prev[1] != tuple(key):
                    report.add("DuplicateLabel", "%s/%s.%s" % (role, p.module, label),
                               "slices %s and %s bind different actions" % (prev[0], sl.name))
                else:
                    owner[where] = (sl.name, tuple(key))
    shapes = {}
    for sl in slices:
        for p in sl.syntax.productions:
            prev = shapes.get(p.shape)
            if prev is not None and prev.label != p.label:
                report.add("DuplicateLabel", "%s.%s" % (p.module, p.label),
                           "same production as %s.%s" % (prev.module, prev.label))
            shapes.setdefault(p.shape, p)


def compose_language(slices: Iterable[Slice], endemics: Iterable[EndemicSlice], role_order, start,
                     catalog: Catalog, name="language", validate=True) -> LanguageSpec:
    slices = list(slices)
    endemics = list(endemics)
    role_order = list(role_order)
    if not slices:
        raise CompositionError("a language needs at least one slice")
    if not role_order or role_order[0] != "syntax":
        raise CompositionError("role order must begin with 'syntax'")
    ids = [e.binding_id for e in endemics]
    if len(ids) != len(set(ids)):
        raise CompositionError("endemic binding ids must be unique")
    report = ValidationReport()
    _duplicate_findings(slices, report)
    for sl in slices:
        for role in sl.role_bindings:
            if role not in role_order:
                raise CompositionError("slice %s binds undeclared role %s" % (sl.name, role))
    spec = LanguageSpec(name, tuple(slices), tuple(endemics), tuple(role_order), start, catalog)
    if start not in spec.nonterminals():
        raise CompositionError("start symbol %s has no production" % start)
    if validate:
        report.errors.extend(validate_signatures(spec).errors)
    if report.errors:
        raise CompositionError("; ".join(f.message for f in report.errors), report)
    return spec


def _merge_bindings(old: Slice, new: Slice) -> Slice:
    """Roles the new slice leaves unbound keep the old slice's bindings."""
    by_shape = {p.shape: p for p in new.syntax.productions}
    merged = dict(new.role_bindings)
    for role, pairs in old.role_bindings.items():
        if role in merged:
            continue
        kept = []
        for label, key in pairs:
            p = by_shape[old.syntax.get(label).shape]
            kept.append((p.label, key))
        merged[role] = tuple(kept)
    return dataclasses.replace(new, role_bindings=merged)


def same_syntax(a: SyntaxModule, b: SyntaxModule) -> bool:
    return sorted(map(repr, (p.shape for p in a.productions))) == sorted(
        map(repr, (p.shape for p in b.productions)))


def replace_component(spec: LanguageSpec, old_name: str, new_slice: Slice) -> LanguageSpec:
    old = spec.slice_named(old_name)
    if old is None:
        raise UnknownSlice("no slice named %s" % old_name)
    if not same_syntax(old.syntax, new_slice.syntax):
        raise SyntaxMismatch("slice %s does not have the syntax of %s" % (new_slice.name, old_name))
    if any(p.label is None for p in new_slice.syntax.productions if
           any(q.shape == p.shape and q.label for q in old.syntax.productions)):
        raise SyntaxMismatch("replacement productions must be labelled")
    merged = _merge_bindings(old, new_slice)
    slices = [s for s in spec.slices if s.name != old_name and s.name != new_slice.name] + [merged]
    return dataclasses.replace(spec, slices=tuple(slices),
                               replacements=spec.replacements + ((old, merged),))


def validate_signatures(spec: LanguageSpec) -> ValidationReport:
    report = ValidationReport()
    catalog = spec.catalog
    order = {r: i for i, r in enumerate(spec.role_order)}

    # provided[(nonterminal, role)] = attributes some action on that head provides
    provided = {}
    for (role, shape), key in spec.bindings().items():
        action = catalog.actions.get(key)
        if action is None:
            continue
        provided.setdefault((shape[0], role), set()).update(action.provides)

    for (role, shape), key in sorted(spec.bindings().items(), key=repr):
        p = spec.production_for(shape)
        where = "%s/%s.%s" % (role, p.module, p.label)
        action = catalog.actions.get(key)
        if action is None or catalog.impls.get(action.impl_ref) is None:
            report.add("UnknownAction", where, "action %s is not in the catalog" % (key,))
            continue
        nts = p.nonterminals
        for idx, attr in sorted(action.requires):
            if idx >= len(nts):
                report.add("MissingAttribute", where, "child %d does not exist" % idx)
                continue
            child = nts[idx]
            available = set()
            for r, i in order.items():
                if i <= order.get(role, -1):
                    available |= provided.get((child, r), set())
            if attr not in available:
                report.add("MissingAttribute", where,
                           "requires %s.%s but no action on %s provides it" % (child, attr, child))

    current = spec.bindings()
    for old, new in spec.replacements:
        if spec.slice_named(new.name) is None:
            continue
        for role, pairs in old.role_bindings.items():
            for label, old_key in pairs:
                shape = old.syntax.get(label).shape
                old_action = catalog.actions.get(tuple(old_key))
                new_key = current.get((role, shape))
                new_action = catalog.actions.get(new_key) if new_key else None
                need = old_action.provides if old_action else frozenset()
                have = new_action.provides if new_action else frozenset()
                if not need <= have:
                    report.add("SignatureMismatch", "%s/%s.%s" % (role, old.syntax.name, label),
                               "replacement drops %s" % ", ".join(sorted(need - have)))
    return report


def lookup_production(spec: LanguageSpec, module: str, label: str):
    from oi.mop import ProductionInfo
    p = spec.lookup_production(module, label)
    return ProductionInfo.of(p) if p else None
