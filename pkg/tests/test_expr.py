import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zerocross.expr import (
    EvaluationError,
    ExprSyntaxError,
    NonDifferentiableError,
    diff_expr,
    parse_expr,
)

S = np.array([0.0, 0.3, 1.0, 2.5])
X = np.array([-1.7, -0.2, 0.4, 3.1])


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1", lambda s, x: np.ones_like(x)),
        ("x^2 + sin(s)", lambda s, x: x**2 + np.sin(s)),
        ("-x^2", lambda s, x: -(x**2)),
        ("2^3^2", lambda s, x: np.full_like(x, 64.0)),
        ("1 - 2 - 3", lambda s, x: np.full_like(x, -4.0)),
        ("8 / 4 / 2", lambda s, x: np.ones_like(x)),
        ("max(x, 0) + min(s, 1)", lambda s, x: np.maximum(x, 0) + np.minimum(s, 1)),
        ("pi * cos(x) * exp(-s)", lambda s, x: math.pi * np.cos(x) * np.exp(-s)),
        ("abs(x) + tanh(x)", lambda s, x: np.abs(x) + np.tanh(x)),
        ("x^(-2) + 1.5e-1", lambda s, x: x**-2.0 + 0.15),
    ],
)
def test_parse_and_evaluate(text, expected):
    e = parse_expr(text)
    np.testing.assert_allclose(e.evaluate(S, X), expected(S, X), rtol=1e-14)


def test_numbers_are_constants():
    assert parse_expr(2.5).evaluate(0.0, 1.0) == 2.5
    assert parse_expr(3).is_const()


@pytest.mark.parametrize(
    "text, offset",
    [("x +", 3), ("sin x", 4), ("(x", 2), ("x ^ 1.5", 4), ("foo(x)", 0), ("x $ 2", 2), ("x x", 2)],
)
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_wrong_arity():
    with pytest.raises(ExprSyntaxError, match="takes 2"):
        parse_expr("min(x)")


@pytest.mark.parametrize(
    "text, var, expected",
    [
        ("x^3", "x", "3 * x^2"),
        ("sin(x)", "x", "cos(x)"),
        ("exp(-s) * x", "s", "-exp(-s) * x"),
        ("tanh(x)", "x", "1 - tanh(x)^2"),
        ("1 / x", "x", "-1 / x^2"),
        ("x * s^2", "s", "2 * x * s"),
        ("abs(s)", "x", "0"),
    ],
)
def test_diff_examples(text, var, expected):
    got = diff_expr(parse_expr(text), var)
    np.testing.assert_allclose(got.evaluate(S, X), parse_expr(expected).evaluate(S, X), rtol=1e-12)


def test_diff_rejects_nonsmooth_and_bad_variable():
    with pytest.raises(NonDifferentiableError):
        diff_expr(parse_expr("abs(x)"), "x")
    with pytest.raises(ValueError):
        diff_expr(parse_expr("x"), "y")


def test_division_by_zero_raises():
    with pytest.raises(EvaluationError, match="division by zero"):
        parse_expr("1 / x").evaluate(0.0, np.array([1.0, 0.0]))
    with pytest.raises(EvaluationError, match="negative power"):
        parse_expr("x^-1").evaluate(0.0, 0.0)
    # both evaluators agree on the failure
    with pytest.raises(EvaluationError):
        parse_expr("1 / x").interpret(0.0, 0.0)


def test_broadcasting_shapes():
    e = parse_expr("s + x")
    assert e.evaluate(1.0, np.zeros((3, 2))).shape == (3, 2)
    assert parse_expr("2").evaluate(0.0, np.zeros(5)).shape == (5,)


def test_pickle_roundtrip_after_compilation():
    e = parse_expr("x^2 * exp(-s)")
    before = e.evaluate(S, X)
    clone = pickle.loads(pickle.dumps(e))
    assert clone == e
    np.testing.assert_array_equal(clone.evaluate(S, X), before)


# random smooth expression trees
_leaf = st.one_of(
    st.sampled_from(["x", "s", "pi"]),
    st.floats(0.1, 3.0).map(lambda v: f"{v:.3f}"),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"exp(0.1 * {c})"),
        children.map(lambda c: f"-{c}"),
        children.map(lambda c: f"{c} / (2 + cos({c}))"),
    )


expressions = st.recursive(_leaf, _extend, max_leaves=8)
points = st.tuples(st.floats(0.0, 2.0), st.floats(-2.0, 2.0))


@given(expressions, points)
def test_compiled_matches_interpreter(text, pt):
    e = parse_expr(text)
    s, x = pt
    np.testing.assert_allclose(e.evaluate(s, x), e.interpret(s, x), rtol=1e-12, atol=1e-12)


@given(expressions, points)
def test_printing_roundtrips(text, pt):
    e = parse_expr(text)
    again = parse_expr(str(e))
    s, x = pt
    np.testing.assert_allclose(again.evaluate(s, x), e.evaluate(s, x), rtol=1e-12, atol=1e-12)


@given(expressions, points, st.sampled_from(["s", "x"]))
def test_derivative_matches_central_difference(text, pt, var):
    e = parse_expr(text)
    d = diff_expr(e, var)
    s, x = pt
    h = 1e-5
    if var == "x":
        fd = (e.evaluate(s, x + h) - e.evaluate(s, x - h)) / (2 * h)
    else:
        fd = (e.evaluate(s + h, x) - e.evaluate(s - h, x)) / (2 * h)
    exact = float(d.evaluate(s, x))
    scale = max(1.0, abs(exact), float(np.abs(e.evaluate(s, x))))
    if not math.isfinite(exact) or scale > 1e6:
        return
    assert abs(fd - exact) <= 1e-6 * scale
