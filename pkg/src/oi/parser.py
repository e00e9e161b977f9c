"""Tokenizer and Earley parser for composed grammars.

Earley accepts any context-free grammar, so slice composition order never
matters.  Ambiguity left in the forest is resolved with production
precedence and associativity; anything still ambiguous is an error.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass
from typing import Optional

from oi.lang import LanguageSpec, Literal, Nonterminal, TokenClass, Assoc

_WS = re.compile(r"(?:\s+|//[^\n]*)+")
_NUM = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_STRING = re.compile(r'"(?:[^"\\\n]|\\.)*"')
_ID = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class LexError(Exception):
    def __init__(self, line, column, snippet):
        super().__init__("unexpected character at line %d, column %d: %r" % (line, column, snippet))
        self.line, self.column, self.snippet = line, column, snippet


class ParseError(Exception):
    def __init__(self, position, expected, token=None):
        if token is not None:
            what = "%r at line %d, column %d" % (token.lexeme, token.line, token.column)
        else:
            what = "end of input"
        super().__init__("unexpected %s; expected one of: %s" % (what, ", ".join(sorted(expected))))
        self.position, self.expected, self.token = position, sorted(expected), token


class PrecedenceError(ParseError):
    """Every derivation violates operator precedence or associativity,
    e.g. chaining a non-associative operator."""

    def __init__(self, position, outer, inner, token):
        Exception.__init__(self, "%s cannot take %s as an operand without parentheses at line %d, column %d"
                           % (outer, inner, token.line, token.column))
        self.position, self.expected, self.token = position, [], token


class AmbiguityError(Exception):
    def __init__(self, span, labels):
        super().__init__("ambiguous parse of span %s between %s" % (span, ", ".join(labels)))
        self.span, self.labels = span, labels


@dataclass(frozen=True)
class Token:
    kind: str  # "LIT", "NUM", "STRING" or "ID"
    lexeme: str
    span: tuple
    line: int
    column: int

    @property
    def value(self):
        if self.kind == "NUM":
            return float(self.lexeme)
        if self.kind == "STRING":
            return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), self.lexeme[1:-1])
        return self.lexeme

    def matches(self, sym):
        if isinstance(sym, Literal):
            return self.kind == "LIT" and self.lexeme == sym.text
        return isinstance(sym, TokenClass) and self.kind == sym.name


def _literals(spec):
    lits = {s.text for p in spec.productions for s in p.body if isinstance(s, Literal)}
    return sorted(lits, key=len, reverse=True)


def lex(source: str, spec: LanguageSpec) -> list:
    literals = _literals(spec)
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while True:
        m = _WS.match(source, pos)
        if m:
            chunk = m.group()
            nl = chunk.count("\n")
            if nl:
                line += nl
                line_start = pos + chunk.rfind("\n") + 1
            pos = m.end()
        if pos >= n:
            break
        best_len, best_kind = 0, None
        for lit in literals:
            if source.startswith(lit, pos):
                best_len, best_kind = len(lit), "LIT"
                break
        for kind, rx in (("NUM", _NUM), ("STRING", _STRING), ("ID", _ID)):
            m = rx.match(source, pos)
            if m and len(m.group()) > best_len:
                best_len, best_kind = len(m.group()), kind
        if not best_len:
            raise LexError(line, pos - line_start + 1, source[pos:pos + 10])
        tokens.append(Token(best_kind, source[pos:pos + best_len], (pos, pos + best_len),
                            line, pos - line_start + 1))
        pos += best_len
    return tokens


class ParseNode:
    __slots__ = ("id", "production", "children", "span", "attrs", "parent", "_index", "_kids", "__weakref__")

    def __init__(self, production, children, span):
        self.id = -1
        self.production = production
        self.children = children
        self.span = span
        self.attrs = {}
        self.parent = None
        self._index = None
        self._kids = None

    @property
    def label(self):
        return self.production.label or self.production.head

    @property
    def nodes(self):
        """Nonterminal children in order."""
        if self._kids is None:
            self._kids = tuple(c for c in self.children if isinstance(c, ParseNode))
        return self._kids

    @property
    def tokens(self):
        return [c for c in self.children if isinstance(c, Token)]

    def walk(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.nodes))

    def get_attr(self, name, role, role_order=()):
        """Attribute lookup; attributes of earlier roles stay visible."""
        if (role, name) in self.attrs:
            return True, self.attrs[(role, name)]
        if role in role_order:
            for r in reversed(role_order[:role_order.index(role)]):
                if (r, name) in self.attrs:
                    return True, self.attrs[(r, name)]
        return False, None

    def shape(self):
        """Structure without attributes, for tree equality checks."""
        return (self.id, self.production.shape, self.span,
                tuple(c.shape() if isinstance(c, ParseNode) else (c.kind, c.lexeme, c.span)
                      for c in self.children))

    def clear_attrs(self):
        for n in self.walk():
            n.attrs.clear()

    def __repr__(self):
        return "<ParseNode %d %s %s>" % (self.id, self.label, self.span)


def number_tree(root: ParseNode):
    index = []
    for i, node in enumerate(root.walk()):
        node.id = i
        index.append(node)
        for c in node.nodes:
            c.parent = node
    root._index = index
    return root


def node_by_id(tree: ParseNode, node_id) -> Optional[ParseNode]:
    if tree._index is None:
        number_tree(tree)
    if isinstance(node_id, float) and node_id.is_integer():
        node_id = int(node_id)
    if isinstance(node_id, bool):
        return None
    if isinstance(node_id, int) and 0 <= node_id < len(tree._index):
        return tree._index[node_id]
    return None


def dump_tree(tree: ParseNode) -> str:
    lines = []

    def rec(node, depth):
        kids = " ".join(c.label if isinstance(c, ParseNode) else
                        ('"%s"' % c.lexeme if c.kind == "LIT" else "%s:%s" % (c.kind, c.lexeme))
                        for c in node.children)
        lines.append("%s%s(%d:%d): %s" % ("  " * depth, node.label, node.span[0], node.span[1], kids))
        for c in node.nodes:
            rec(c, depth + 1)
    rec(tree, 0)
    return "\n".join(lines)


# -- Earley ----------------------------------------------------------------

class _Grammar:
    def __init__(self, spec):
        self.prods = list(spec.productions)
        self.by_head = {}
        for i, p in enumerate(self.prods):
            self.by_head.setdefault(p.head, []).append(i)
        nullable = set()
        changed = True
        while changed:
            changed = False
            for p in self.prods:
                if p.head not in nullable and all(
                        isinstance(s, Nonterminal) and s.name in nullable for s in p.body):
                    nullable.add(p.head)
                    changed = True
        self.nullable = nullable


_LEFT, _RIGHT, _INNER = "left", "right", "inner"


def parse(tokens: list, spec: LanguageSpec) -> ParseNode:
    g = _Grammar(spec)
    prods = g.prods
    n = len(tokens)
    chart = [[] for _ in range(n + 1)]
    seen = [set() for _ in range(n + 1)]
    waiting = {}  # (origin position, nonterminal) -> items whose dot precedes it
    ends = {}     # (production index, start) -> set of ends
    starts = {}   # (nonterminal, end) -> set of starts

    def add(i, item):
        if item in seen[i]:
            return
        seen[i].add(item)
        chart[i].append(item)
        pi, dot, origin = item
        body = prods[pi].body
        if dot < len(body) and isinstance(body[dot], Nonterminal):
            waiting.setdefault((i, body[dot].name), []).append(item)

    for pi in g.by_head.get(spec.start, ()):
        add(0, (pi, 0, 0))
    for i in range(n + 1):
        items = chart[i]
        k = 0
        while k < len(items):
            pi, dot, origin = items[k]
            k += 1
            body = prods[pi].body
            if dot < len(body):
                sym = body[dot]
                if isinstance(sym, Nonterminal):
                    for qi in g.by_head.get(sym.name, ()):
                        add(i, (qi, 0, i))
                    if sym.name in g.nullable:
                        add(i, (pi, dot + 1, origin))
                elif i < n and tokens[i].matches(sym):
                    add(i + 1, (pi, dot + 1, origin))
            else:
                head = prods[pi].head
                ends.setdefault((pi, origin), set()).add(i)
                starts.setdefault((head, i), set()).add(origin)
                for (qi, qd, qo) in list(waiting.get((origin, head), ())):
                    add(i, (qi, qd + 1, qo))
        if i < n and not chart[i + 1]:
            raise ParseError(i, _expected(chart[i], prods), tokens[i])
    if not any(n in ends.get((pi, 0), ()) for pi in g.by_head.get(spec.start, ())):
        raise ParseError(n, _expected(chart[n], prods), None)
    root = _Builder(prods, tokens, ends, starts).build(spec.start, 0, n)
    return number_tree(root)


def _expected(items, prods):
    out = set()
    for pi, dot, _ in items:
        body = prods[pi].body
        if dot < len(body) and not isinstance(body[dot], Nonterminal):
            out.add(str(body[dot]))
    return out


def _describe(p):
    ops = [s.text for s in p.body if isinstance(s, Literal)]
    return "%s (%s)" % (p.label or p.head, " ".join(ops)) if ops else (p.label or p.head)


def _allowed(parent, position, child):
    """Precedence filter for a child derivation in an operand position."""
    if parent is None or position == _INNER:
        return True
    if not parent.precedence or not child.precedence:
        return True
    if child.precedence < parent.precedence:
        return False
    if child.precedence == parent.precedence:
        if parent.assoc == Assoc.LEFT:
            return position == _LEFT
        if parent.assoc == Assoc.RIGHT:
            return position == _RIGHT
        return False
    return True


class _Builder:
    def __init__(self, prods, tokens, ends, starts):
        self.prods, self.tokens, self.ends, self.starts = prods, tokens, ends, starts
        self.cands = {}
        self.viable_memo = {}
        self.by_head = {}
        for i, p in enumerate(prods):
            self.by_head.setdefault(p.head, []).append(i)

    def candidates(self, head, i, j):
        """All (production index, child spans) deriving tokens[i:j] from head."""
        key = (head, i, j)
        if key in self.cands:
            return self.cands[key]
        out = []
        for pi in self.by_head.get(head, ()):
            if j in self.ends.get((pi, i), ()):
                for split in self._splits(self.prods[pi].body, i, j):
                    out.append((pi, split))
        self.cands[key] = out
        return out

    def _splits(self, body, i, j):
        results = []

        def rec(k, end, acc):
            if k < 0:
                if end == i:
                    results.append(tuple(reversed(acc)))
                return
            sym = body[k]
            if isinstance(sym, Nonterminal):
                for s in sorted(self.starts.get((sym.name, end), ())):
                    if s >= i:
                        acc.append((s, end))
                        rec(k - 1, s, acc)
                        acc.pop()
            elif end > i and self.tokens[end - 1].matches(sym):
                acc.append((end - 1, end))
                rec(k - 1, end - 1, acc)
                acc.pop()
        rec(len(body) - 1, j, [])
        return results

    @staticmethod
    def _position(body, k):
        if len(body) > 1 and k == 0:
            return _LEFT
        if len(body) > 1 and k == len(body) - 1:
            return _RIGHT
        return _INNER

    def _ctx(self, parent_pi, position):
        if parent_pi is None or position == _INNER or not self.prods[parent_pi].precedence:
            return None
        return (parent_pi, position)

    def _surviving(self, head, i, j, ctx):
        parent = self.prods[ctx[0]] if ctx else None
        position = ctx[1] if ctx else None
        out = []
        for pi, split in self.candidates(head, i, j):
            p = self.prods[pi]
            if not _allowed(parent, position, p):
                continue
            if all(self.viable(sym.name, s, e, self._ctx(pi, self._position(p.body, k)))
                   for k, (sym, (s, e)) in enumerate(zip(p.body, split))
                   if isinstance(sym, Nonterminal)):
                out.append((pi, split))
        return out

    def viable(self, head, i, j, ctx):
        key = (head, i, j, ctx)
        memo = self.viable_memo
        if key not in memo:
            memo[key] = False  # cycle guard
            memo[key] = bool(self._surviving(head, i, j, ctx))
        return memo[key]

    def build(self, head, i, j):
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 50000))
        try:
            return self._build(head, i, j, None)
        finally:
            sys.setrecursionlimit(old)

    def _build(self, head, i, j, ctx):
        alive = self._surviving(head, i, j, ctx)
        if len(alive) > 1:
            top = max(self.prods[pi].precedence for pi, _ in alive)
            alive = [a for a in alive if self.prods[a[0]].precedence == top]
        if len(alive) > 1:
            labels = sorted({self.prods[pi].label or self.prods[pi].head for pi, _ in alive})
            if len(labels) == 1:
                labels = ["%s%s" % (labels[0], [list(s) for s in split]) for _, split in alive]
            raise AmbiguityError(self._span(i, j), labels)
        if not alive:
            blame = self._blame(head, i, j, ctx, None)
            if blame is not None:
                raise blame
            raise ParseError(i, {head}, self.tokens[i] if i < len(self.tokens) else None)
        pi, split = alive[0]
        p = self.prods[pi]
        children = []
        for k, (sym, (s, e)) in enumerate(zip(p.body, split)):
            if isinstance(sym, Nonterminal):
                children.append(self._build(sym.name, s, e, self._ctx(pi, self._position(p.body, k))))
            else:
                children.append(self.tokens[s])
        return ParseNode(p, children, self._span(i, j))

    def _blame(self, head, i, j, ctx, op_token):
        """Find the innermost precedence conflict that kills every derivation."""
        parent = self.prods[ctx[0]] if ctx else None
        for pi, split in self.candidates(head, i, j):
            p = self.prods[pi]
            if not _allowed(parent, ctx[1] if ctx else None, p):
                return PrecedenceError(i, _describe(parent), _describe(p), op_token or self.tokens[i])
            first_op = next((self.tokens[s] for sym, (s, e) in zip(p.body, split)
                             if not isinstance(sym, Nonterminal)), None)
            for k, (sym, (s, e)) in enumerate(zip(p.body, split)):
                if not isinstance(sym, Nonterminal):
                    continue
                child_ctx = self._ctx(pi, self._position(p.body, k))
                if not self.viable(sym.name, s, e, child_ctx):
                    found = self._blame(sym.name, s, e, child_ctx, first_op)
                    if found is not None:
                        return found
        return None

    def _span(self, i, j):
        if i == j:
            at = self.tokens[i].span[0] if i < len(self.tokens) else (
                self.tokens[-1].span[1] if self.tokens else 0)
            return (at, at)
        return (self.tokens[i].span[0], self.tokens[j - 1].span[1])


def parse_source(source: str, spec: LanguageSpec) -> ParseNode:
    return parse(lex(source, spec), spec)
