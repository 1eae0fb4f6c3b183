import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_homog.expr import (
    Binary, Call, EvalError, ExprError, Name, Num, Unary, UnknownIdentifierError,
    compile_expr, eval_expr, parse_expr, to_string,
)

CORPUS = [
    "1", "0", "2.5", "1e-3", "pi", "y1", "y2", "-y1", "--y2", "y1+y2",
    "y1-y2", "y1*y2", "y1/2", "y1^2", "y1^-2", "-y1^2", "(-y1)^2", "2^3^2", "(2^3)^2", "1-2-3",
    "1-(2-3)", "1/2/3", "1/(2/3)", "2*(y1+y2)", "(y1+y2)*(y1-y2)", "sin(y1)", "cos(2*pi*y1)",
    "2+sin(2*pi*y1)", "2+cos(2*pi*y1)*cos(2*pi*y2)", "exp(0)", "exp(-y1^2-y2^2)", "(1+y1^2)^0.5",
    "exp(2+y2)", "sin(y1/4)", "abs(y1-y2)", "sin(cos(y1))", "-(y1+1)", "3*-y1", "y1*-2^2",
    "1+2*3-4/5", "(1+2)*(3-4)/5", "y1^y2", "2*pi", "pi/2-y1", "sin(pi*y1)^2+cos(pi*y1)^2",
    "1/(1+y1^2)", "0.5*y1*y1", "exp(sin(2*pi*y2))", "abs(y1)^0.5*y2", "-(-(-y1))",
]


def test_corpus_has_fifty_distinct_expressions():
    assert len(CORPUS) == 50 and len(set(CORPUS)) == 50


@pytest.mark.parametrize("text", CORPUS)
def test_round_trip_is_structurally_identical(text):
    e = parse_expr(text)
    assert parse_expr(to_string(e)) == e


def test_documented_values():
    assert eval_expr(parse_expr("1"), (0.3, 0.7)) == 1.0
    assert eval_expr(parse_expr("2+sin(2*pi*y1)"), (0.25, 0)) == pytest.approx(3.0, abs=1e-15)
    assert eval_expr(parse_expr("cos(2*pi*y1)*cos(2*pi*y2)"), (0.5, 0.5)) == pytest.approx(1.0, abs=1e-15)
    assert eval_expr(parse_expr("y1^2"), (3, 0)) == 9.0
    assert eval_expr(parse_expr("exp(0)"), (0.1, -0.4)) == 1.0


def test_precedence_and_associativity():
    assert eval_expr(parse_expr("2^3^2"), (0, 0)) == 512.0
    assert eval_expr(parse_expr("-2^2"), (0, 0)) == -4.0
    assert eval_expr(parse_expr("1-2-3"), (0, 0)) == -4.0
    assert parse_expr("1+2*3") == Binary("+", Num(1.0), Binary("*", Num(2.0), Num(3.0)))


def test_division_by_zero_is_an_evaluation_error():
    with pytest.raises(EvalError):
        eval_expr(parse_expr("1/y1"), (0, 0))


def test_non_finite_results_raise():
    with pytest.raises(EvalError):
        eval_expr(parse_expr("exp(1000*y1)"), (1, 0))
    with pytest.raises(EvalError):
        eval_expr(parse_expr("y1^0.5"), (-1, 0))


def test_grammar_has_only_four_functions():
    for fn in ("sqrt", "log", "tan"):
        with pytest.raises(UnknownIdentifierError):
            parse_expr(f"{fn}(y1)")


@pytest.mark.parametrize("text", ["", "1+", "(1", "1)", "sin 1", "2**3", "y1 y2", "1..2"])
def test_syntax_errors(text):
    with pytest.raises(ExprError):
        parse_expr(text)


def test_unknown_names_are_rejected():
    with pytest.raises(UnknownIdentifierError):
        parse_expr("x1+1")
    with pytest.raises(UnknownIdentifierError):
        parse_expr("foo(y1)")
    assert parse_expr("x1+y2", ("x1", "x2", "y1", "y2")) is not None


def test_vectorised_evaluation_matches_pointwise():
    e = parse_expr("2+cos(2*pi*y1)*cos(2*pi*y2)")
    f = compile_expr(e)
    y = np.random.default_rng(1).uniform(-0.5, 0.5, (20, 2))
    vec = f(y1=y[:, 0], y2=y[:, 1])
    ref = [2 + math.cos(2 * math.pi * a) * math.cos(2 * math.pi * b) for a, b in y]
    np.testing.assert_allclose(vec, ref, rtol=1e-15)


def test_evaluation_is_bitwise_repeatable():
    f = compile_expr(parse_expr("exp(sin(2*pi*y2))/(1+y1^2)"))
    y = np.linspace(-0.5, 0.5, 101)
    assert np.array_equal(f(y1=y, y2=y[::-1]), f(y1=y, y2=y[::-1]))


# random trees for the property-based round trip
_leaf = st.one_of(
    st.integers(0, 50).map(lambda v: Num(float(v))),
    st.sampled_from([Name("y1"), Name("y2"), Name("pi")]),
)


def _extend(children):
    return st.one_of(
        st.builds(Unary, st.just("-"), children),
        st.builds(Binary, st.sampled_from(["+", "-", "*", "/", "^"]), children, children),
        st.builds(Call, st.sampled_from(["sin", "cos", "exp", "abs"]), children),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_random_trees_round_trip(e):
    assert parse_expr(to_string(e)) == e
