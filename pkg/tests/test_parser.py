"""Tokenizer and Earley parser."""

import pytest
from hypothesis import given, settings, strategies as st

from oi.lang import Catalog, compose_language, prod
from oi.minijs import minijs_spec
from oi.parser import (AmbiguityError, LexError, ParseError, PrecedenceError, dump_tree, lex, node_by_id,
                       parse_source)
from oi.values import format_number
from support import CORPUS, run_closed

SPEC = minijs_spec()


def _labels(tree):
    return [n.production.label for n in tree.walk()]


def test_lex_token_kinds_and_positions():
    toks = lex('x = 1.5e3; // c\ny = "a\\"b";', SPEC)
    assert [t.kind for t in toks] == ["ID", "LIT", "NUM", "LIT", "ID", "LIT", "STRING", "LIT"]
    assert toks[2].value == 1500.0
    assert toks[6].value == 'a"b'
    assert (toks[4].line, toks[4].column) == (2, 1)


def test_lex_prefers_longest_literal_and_keywords():
    toks = lex("a == b; whilex = 1;", SPEC)
    assert toks[1].lexeme == "=="
    assert toks[4].kind == "ID" and toks[4].lexeme == "whilex"


def test_lex_error_reports_position():
    with pytest.raises(LexError) as e:
        lex("x = 1;\n  y = #;", SPEC)
    assert (e.value.line, e.value.column) == (2, 7)


def test_parse_error_lists_expected():
    with pytest.raises(ParseError) as e:
        parse_source("print(1+);", SPEC)
    assert e.value.token.lexeme == ")"
    assert "NUM" in e.value.expected


def test_parse_error_at_end_of_input():
    with pytest.raises(ParseError) as e:
        parse_source("print(1", SPEC)
    assert e.value.token is None


def test_precedence_and_associativity():
    tree = parse_source("print(1+2*3-4);", SPEC)
    assert "".join(dump_tree(tree).split())  # renders
    top = next(n for n in tree.walk() if n.production.label in ("Add", "Sub"))
    assert top.production.label == "Sub"  # (1+2*3)-4, left associative
    assert [c.production.label for c in top.nodes] == ["Add", "Num"]


def test_non_associative_operators_cannot_chain():
    with pytest.raises(PrecedenceError) as e:
        parse_source("print(1<2<3);", SPEC)
    assert "parentheses" in str(e.value)
    assert run_closed("print((1<2)==true);").stdout == "true\n"


def test_preorder_ids_and_lookup():
    tree = parse_source("print(1+2*3);", SPEC)
    ids = [n.id for n in tree.walk()]
    assert ids == list(range(len(ids)))
    for n in tree.walk():
        assert node_by_id(tree, n.id) is n
    assert node_by_id(tree, 999) is None
    assert _labels(tree)[:5] == ["Program", "More", "Empty", "Print", "Add"]


def test_spans_cover_source_text():
    src = "print(2+(4+3));"
    tree = parse_source(src, SPEC)
    adds = [src[n.span[0]:n.span[1]] for n in tree.walk() if n.production.label == "Add"]
    assert adds == ["2+(4+3)", "4+3"]


def test_ambiguous_grammar_is_reported():
    cat = Catalog()
    cat.module("amb.Syntax", prod("amb.Syntax", "Pair", "E", "E", "E"), prod("amb.Syntax", "One", "E", "x"))
    cat.slice("amb", "amb.Syntax")
    spec = compose_language([cat.slices["amb"]], [], ("syntax",), "E", cat)
    assert _labels(parse_source("x x", spec)) == ["Pair", "One", "One"]
    with pytest.raises(AmbiguityError):
        parse_source("x x x", spec)


def test_long_programs_parse():
    src = "x = 0;\n" + "x = x + 1;\n" * 2000 + "print(x);"
    assert run_closed(src).stdout == "2000\n"


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_corpus_parses(name):
    tree = parse_source(CORPUS[name], SPEC)
    assert tree.production.label == "Program"


# -- oracle: arithmetic agrees with Python's own precedence rules -----------

def _expr(depth):
    leaf = st.integers(0, 50).map(str)
    if depth == 0:
        return leaf
    sub = _expr(depth - 1)
    return st.one_of(leaf,
                     st.tuples(sub, st.sampled_from(["+", "-", "*"]), sub).map(" ".join),
                     sub.map(lambda e: "(%s)" % e))


@settings(max_examples=150, deadline=None)
@given(_expr(4))
def test_arithmetic_matches_python(expr):
    expected = format_number(float(eval(expr)))  # Python's grammar is the oracle
    assert run_closed("print(%s);" % expr).stdout == expected + "\n"
