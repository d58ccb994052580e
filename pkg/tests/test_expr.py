import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudsaddle.expr import (
    Constant,
    ExpressionSyntaxError,
    Negate,
    Power,
    Product,
    Sum,
    UnboundVariableError,
    Variable,
    differentiate,
    evaluate,
    parse_expr,
)

NAMES = ["x1", "x2", "x3"]

consts = st.floats(-5, 5, allow_nan=False).map(lambda v: Constant(round(v, 3)))
leaves = st.one_of(consts, st.sampled_from(NAMES).map(Variable))


def _extend(children):
    return st.one_of(
        st.lists(children, min_size=2, max_size=3).map(lambda ts: Sum(tuple(ts))),
        st.lists(children, min_size=2, max_size=3).map(lambda fs: Product(tuple(fs))),
        st.tuples(children, st.integers(0, 4)).map(lambda t: Power(t[0], t[1])),
        children.map(Negate),
    )


trees = st.recursive(leaves, _extend, max_leaves=8)
points = st.fixed_dictionaries({v: st.floats(-2, 2, allow_nan=False) for v in NAMES})


def close(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def test_parse_and_print():
    e = parse_expr("(x1 - -3.0)^4")
    assert evaluate(e, {"x1": -1.0}) == 16.0
    assert str(differentiate(e, "x1")) == "4.0 * (x1 + 3.0)^3"


def test_quartic_examples():
    assert str(differentiate(parse_expr("x4^4"), "x4")) == "4.0 * x4^3"
    d = differentiate(parse_expr("3*x1^2 + x4^4 - 50"), "x2")
    assert d == Constant(0.0)


def test_precedence_and_associativity():
    assert evaluate(parse_expr("2^3^2"), {}) == 512.0
    assert evaluate(parse_expr("-2^2"), {}) == -4.0
    assert evaluate(parse_expr("2*3 + 4*5"), {}) == 26.0
    assert evaluate(parse_expr("1 - 2 - 3"), {}) == -4.0


@pytest.mark.parametrize("text, pos", [("x1 +", 4), ("x1 ** 2", 4), ("x1^1.5", 3), ("(x1", 3), ("3 $ 4", 2)])
def test_syntax_errors_report_position(text, pos):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expr(text)
    assert info.value.position == pos


def test_allowed_variables():
    with pytest.raises(ExpressionSyntaxError):
        parse_expr("x1 + y", allowed_vars=["x1"])


def test_unbound_variable():
    with pytest.raises(UnboundVariableError):
        evaluate(parse_expr("x1 + x2"), {"x1": 1.0})


def test_compile_matches_evaluate():
    e = parse_expr("3*x1^2 + x2^4 - 50")
    f = e.compile(["x1", "x2"])
    assert f(1.5, -2.0) == evaluate(e, {"x1": 1.5, "x2": -2.0})


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_print_parse_round_trip(e, a):
    again = parse_expr(str(e))
    assert close(evaluate(again, a), evaluate(e, a))
    assert str(again) == str(parse_expr(str(again)))


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_compiled_agrees(e, a):
    f = e.compile(NAMES)
    assert close(f(*(a[v] for v in NAMES)), evaluate(e, a))


@settings(max_examples=200, deadline=None)
@given(trees, trees, points, st.floats(-3, 3, allow_nan=False))
def test_diff_is_linear(e1, e2, a, c):
    lhs = differentiate(Sum((e1, Product((Constant(round(c, 3)), e2)))), "x1")
    rhs = evaluate(differentiate(e1, "x1"), a) + round(c, 3) * evaluate(differentiate(e2, "x1"), a)
    assert close(evaluate(lhs, a), rhs, 1e-8)


@settings(max_examples=200, deadline=None)
@given(trees, points)
def test_diff_matches_central_difference(e, a):
    h = 1e-6
    up, dn = dict(a), dict(a)
    up["x2"] += h
    dn["x2"] -= h
    fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
    sym = evaluate(differentiate(e, "x2"), a)
    scale = max(1.0, abs(evaluate(e, a)), abs(sym))
    assert abs(fd - sym) <= 1e-4 * scale


def test_rename():
    e = parse_expr("x1*x2 + x3")
    r = e.rename({"x2": "eta1", "x3": "eta2"})
    assert r.free_vars() == {"x1", "eta1", "eta2"}
    assert evaluate(r, {"x1": 2.0, "eta1": 3.0, "eta2": 1.0}) == 7.0
