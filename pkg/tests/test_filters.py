from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reviewflow.errors import FilterSyntaxError, FilterTypeError, UnknownColumnError
from reviewflow.filters import (
    COMPARISON_OPS,
    And,
    Column,
    Compare,
    Not,
    Number,
    Or,
    String,
    eval_filter,
    parse_filter,
    referenced_columns,
    to_source,
)

COLUMNS = ["a", "b", "x", "round-A_Alice_evaluation", "round-A_Bob_evaluation", "v.1"]


def test_parse_disagreement_filter():
    expr = parse_filter("round-A_Alice_evaluation != round-A_Bob_evaluation")
    assert expr == Compare("!=", Column("round-A_Alice_evaluation"), Column("round-A_Bob_evaluation"))


def test_parse_conjunction():
    expr = parse_filter("(a == 3) and (b == 3)")
    assert expr == And((Compare("==", Column("a"), Number("3")), Compare("==", Column("b"), Number("3"))))


def test_precedence():
    expr = parse_filter("not a == 1 or b == 2 and x == 3")
    assert isinstance(expr, Or)
    assert isinstance(expr.operands[0], Not)
    assert isinstance(expr.operands[1], And)


@pytest.mark.parametrize(
    "source, position",
    [("!= b", 1), ("a ==", 5), ("", 1), ("   ", 1), ("a == 1 b", 8), ("(a == 1", 8), ("a == 'x", 6), ("a = 1", 3)],
)
def test_syntax_errors_carry_position(source, position):
    with pytest.raises(FilterSyntaxError) as info:
        parse_filter(source)
    assert info.value.position == position
    assert f"position {position}" in str(info.value)


def test_comparisons_do_not_chain():
    with pytest.raises(FilterSyntaxError):
        parse_filter("a < b < x")


@pytest.mark.parametrize(
    "source, row, expected",
    [
        ("x != y", {"x": "3", "y": "4"}, True),
        ("x != y", {"x": "3", "y": "3.0"}, False),
        ("x == 'abc'", {"x": "abc"}, True),
        ("x == \"3\"", {"x": "3.00"}, True),
        ("x > 3", {"x": "10"}, True),
        ("x > 3", {"x": None}, False),
        ("not x > 3", {"x": None}, True),
        ("x == x", {"x": None}, False),
        ("x != 'a'", {"x": None}, False),
        ("x >= -1.5", {"x": "-1.5"}, True),
    ],
)
def test_eval_examples(source, row, expected):
    assert eval_filter(parse_filter(source), row) is expected


def test_ordering_on_text_is_type_error():
    with pytest.raises(FilterTypeError):
        eval_filter(parse_filter("x < y"), {"x": "abc", "y": "2"})


def test_unknown_column():
    with pytest.raises(UnknownColumnError):
        eval_filter(parse_filter("zzz == 1"), {"x": "1"})


def test_short_circuit_hides_unreached_errors():
    expr = parse_filter("x == 1 or x < 'abc'")
    assert eval_filter(expr, {"x": "1"}) is True


def test_referenced_columns():
    expr = parse_filter("a == b or (not x > 1 and a != 'b')")
    assert referenced_columns(expr) == ["a", "b", "x"]


def test_string_escapes_round_trip():
    expr = parse_filter(r'a == "say \"hi\"\n"')
    assert expr.right == String('say "hi"\n')
    assert parse_filter(to_source(expr)) == expr


# --- properties ---------------------------------------------------------------

numbers = st.from_regex(r"-?[0-9]{1,4}(\.[0-9]{1,3})?", fullmatch=True).map(Number)
operands = st.one_of(st.sampled_from(COLUMNS).map(Column), st.text(max_size=6).map(String), numbers)
comparisons = st.builds(Compare, st.sampled_from(COMPARISON_OPS), operands, operands)


def _trees(leaves):
    return st.recursive(
        leaves,
        lambda inner: st.one_of(
            inner.map(Not),
            st.lists(inner, min_size=2, max_size=3).map(lambda xs: And(tuple(xs))),
            st.lists(inner, min_size=2, max_size=3).map(lambda xs: Or(tuple(xs))),
        ),
        max_leaves=8,
    )


trees = _trees(comparisons)
cells = st.one_of(st.none(), st.sampled_from(["0", "1", "2", "3", "3.0", "-2", "abc", ""]))
rows = st.fixed_dictionaries({c: cells for c in COLUMNS})


def _outcome(expr, row):
    try:
        return eval_filter(expr, row)
    except FilterTypeError:
        return "type_error"


@settings(max_examples=300)
@given(trees)
def test_print_parse_round_trip(expr):
    assert parse_filter(to_source(expr)) == expr


@settings(max_examples=500)
@given(st.text(alphabet=st.sampled_from(list("ab3.-_ ()=!<>'\"\\notandr")), max_size=30))
def test_parser_is_total(source):
    try:
        parse_filter(source)
    except FilterSyntaxError as exc:
        assert 1 <= exc.position <= len(source) + 1


@settings(max_examples=300)
@given(trees, trees, rows)
def test_de_morgan(a, b, row):
    assert _outcome(Not(And((a, b))), row) == _outcome(Or((Not(a), Not(b))), row)
    assert _outcome(Not(Or((a, b))), row) == _outcome(And((Not(a), Not(b))), row)


@given(st.sampled_from(COMPARISON_OPS), operands, rows)
def test_null_absorption(op, other, row):
    row = dict(row, a=None)
    assert eval_filter(Compare(op, Column("a"), other), row) is False
    assert eval_filter(Compare(op, other, Column("a")), row) is False
