import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from condra import And, Corpus, Not, Or, Term, All, condition_members, parse_condition
from condra.conditions import bind_condition
from condra.errors import BindError, ConditionSyntaxError


def corpus_with(labels, **extra):
    n = len(labels)
    meta = {"label": labels}
    meta.update(extra)
    return Corpus(np.arange(n * 2, dtype=np.float32).reshape(n, 2), meta)


def members(expr_text, corpus):
    return set(condition_members(parse_condition(expr_text), corpus).to_indices().tolist())


def test_parse_or_of_terms():
    expr = parse_condition('culture="Dutch" OR culture="Chinese"')
    assert isinstance(expr, Or)
    assert all(isinstance(p, Term) for p in expr.parts)


def test_parse_and_of_terms():
    expr = parse_condition('medium="Ceramic" AND culture="Egyptian"')
    assert isinstance(expr, And)
    assert expr.parts[0] == Term("medium", "Ceramic")
    assert expr.parts[1] == Term("culture", "Egyptian")


def test_parse_all_keyword_case_insensitive():
    assert isinstance(parse_condition("ALL"), All)
    assert isinstance(parse_condition("all"), All)
    assert parse_condition('a="x" oR a="y"') == parse_condition('a="x" OR a="y"')


def test_parse_parens_and_precedence():
    expr = parse_condition('a="x" OR a="y" AND b="z"')
    # AND binds tighter than OR
    assert isinstance(expr, Or)
    assert isinstance(expr.parts[1], And)
    grouped = parse_condition('(a="x" OR a="y") AND b="z"')
    assert isinstance(grouped, And)


def test_syntax_errors_carry_position():
    text = 'a="x" OR OR b="y"'
    with pytest.raises(ConditionSyntaxError) as err:
        parse_condition(text)
    assert err.value.position == text.find("OR", text.find("OR") + 1)
    with pytest.raises(ConditionSyntaxError):
        parse_condition('a = ')
    with pytest.raises(ConditionSyntaxError):
        parse_condition('a="unterminated')
    with pytest.raises(ConditionSyntaxError):
        parse_condition('')


def test_not_restriction():
    parse_condition('NOT a="x"')
    parse_condition('NOT (a="x" OR a="y")')
    with pytest.raises(ConditionSyntaxError):
        parse_condition('NOT (a="x" OR b="y")')
    with pytest.raises(ConditionSyntaxError):
        parse_condition('NOT (a="x" AND a="y")')
    with pytest.raises(ConditionSyntaxError):
        parse_condition('NOT ALL')


def test_string_escapes_round_trip():
    expr = parse_condition('a="he said \\"hi\\" \\\\ done"')
    assert isinstance(expr, Term)
    assert expr.value == 'he said "hi" \\ done'
    assert parse_condition(expr.canonical()) == expr


def test_members_basic():
    corpus = corpus_with(["A", "A", "B", "B"])
    assert members('label="B"', corpus) == {2, 3}
    assert members("ALL", corpus) == {0, 1, 2, 3}


def test_members_not_within_attribute():
    corpus = corpus_with(["A", "A", "B", "C"])
    assert members('NOT label="A"', corpus) == {2, 3}


def test_unknown_attribute_is_bind_error():
    corpus = corpus_with(["A"])
    with pytest.raises(BindError):
        condition_members(parse_condition('nope="A"'), corpus)
    with pytest.raises(BindError):
        bind_condition(parse_condition('nope="A"'), corpus)


def test_unknown_value_gives_empty_set_not_error():
    corpus = corpus_with(["A", "B"])
    assert members('label="Z"', corpus) == set()


def test_boolean_algebra_exhaustive_on_small_corpus():
    # enumeration oracle on every pair of terms over a 12-point corpus
    labels = ["A", "A", "B", "B", "C", "C", "A", "B", "C", "A", "B", "C"]
    sizes = ["s", "m", "l", "s", "m", "l", "s", "m", "l", "s", "m", "l"]
    corpus = corpus_with(labels, size=sizes)
    universe = set(range(len(labels)))
    terms = [("label", v) for v in "ABC"] + [("size", v) for v in "sml"]
    for (a1, v1), (a2, v2) in itertools.product(terms, terms):
        s1 = {i for i in universe if corpus.metadata[a1][i] == v1}
        s2 = {i for i in universe if corpus.metadata[a2][i] == v2}
        assert members(f'{a1}="{v1}" AND {a2}="{v2}"', corpus) == s1 & s2
        assert members(f'{a1}="{v1}" OR {a2}="{v2}"', corpus) == s1 | s2
        assert members(f'NOT {a1}="{v1}"', corpus) == universe - s1


def test_canonical_sorts_and_normalizes():
    a = parse_condition('b="y"   OR a="x"')
    b = parse_condition('a="x" or b="y"')
    assert a.canonical() == b.canonical()
    c = parse_condition('(b="y" OR a="x") AND c="z"')
    d = parse_condition('c="z" and (a="x" or b="y")')
    assert c.canonical() == d.canonical()
    # canonical text re-parses to an equal expression
    for expr in (a, c, parse_condition('NOT (q="1" OR q="2")')):
        assert parse_condition(expr.canonical()) == expr


@st.composite
def random_condition(draw):
    attrs = ["label", "size"]
    values = {"label": list("ABC"), "size": list("sml")}

    def term():
        a = draw(st.sampled_from(attrs))
        return f'{a}="{draw(st.sampled_from(values[a]))}"'

    depth = draw(st.integers(0, 2))
    text = term()
    for _ in range(depth):
        op = draw(st.sampled_from(["AND", "OR"]))
        text = f"({text}) {op} {term()}"
    if draw(st.booleans()):
        a = draw(st.sampled_from(attrs))
        vs = draw(st.lists(st.sampled_from(values[a]), min_size=1, max_size=2, unique=True))
        neg = " OR ".join(f'{a}="{v}"' for v in vs)
        text = f"({text}) AND NOT ({neg})"
    return text


@given(random_condition())
def test_canonical_is_stable_fixed_point(text):
    expr = parse_condition(text)
    canon = expr.canonical()
    assert parse_condition(canon).canonical() == canon
