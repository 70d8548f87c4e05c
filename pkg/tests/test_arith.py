import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from adaswitch.arith import (
    MAX_BITS,
    EvaluationError,
    ExpressionSyntaxError,
    NonLinearError,
    eval_expression,
    linear_form,
    render_value,
)
from naive_eval import NaiveError, naive_eval, random_expression


@pytest.mark.parametrize(
    "text, expected",
    [
        ("2+3*4", 14),
        ("(1/3)*3", 1),
        ("2*3+4", 10),
        ("2^3^2", 64),  # left-associative
        ("-2^2", -4),
        ("2^-1", Fraction(1, 2)),
        ("10 - 4 - 3", 3),
        ("12/4/3", 1),
        ("1.5*2", 3),
        (".5+.25", Fraction(3, 4)),
        ("--3", 3),
        ("2*-3", -6),
    ],
)
def test_known_values(text, expected):
    assert eval_expression(text) == Fraction(expected)


@pytest.mark.parametrize("text", ["1/0", "0^-1", "4^(1/2)", "x+1"])
def test_evaluation_errors(text):
    with pytest.raises(EvaluationError):
        eval_expression(text)


@pytest.mark.parametrize("text, offset", [("2+", 2), ("(1+2", 4), ("2 $ 3", 2), ("1 2", 2), ("", 0)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExpressionSyntaxError) as info:
        eval_expression(text)
    assert info.value.offset == offset


def test_bit_bound():
    with pytest.raises(EvaluationError):
        eval_expression(f"2^{MAX_BITS + 1}")
    assert eval_expression("2^200") == 2**200


def test_matches_naive_oracle_on_random_expressions():
    rng = random.Random(20240611)
    failures = []
    for _ in range(10_000):
        text = random_expression(rng, depth=rng.randint(1, 6))
        try:
            expected = naive_eval(text)
        except NaiveError:
            expected = None
        try:
            got = eval_expression(text)
        except EvaluationError:
            got = None
        if expected is not None and got is None:
            # only acceptable when the exact value leaves the rational bound
            if max(abs(expected.numerator), expected.denominator).bit_length() <= MAX_BITS:
                failures.append((text, expected, "library error"))
        elif expected != got:
            failures.append((text, expected, got))
    assert failures == []


@pytest.mark.parametrize(
    "value, text",
    [
        (Fraction(6), "6"),
        (Fraction(-12), "-12"),
        (Fraction(1, 3), "0.3333333333"),
        (Fraction(2, 3), "0.6666666667"),
        (Fraction(5, 2), "2.5"),
        (Fraction(1, 8), "0.125"),
        (Fraction(123456789012, 7), "17636684140"),
    ],
)
def test_render_value(value, text):
    assert render_value(value) == text


@given(st.integers(-10**12, 10**12))
def test_render_integers_exact(n):
    assert render_value(Fraction(n)) == str(n)


def test_linear_form():
    lin = linear_form("3*x - 4/2 + y", "x", {"y": Fraction(5)})
    assert (lin.coef, lin.const) == (3, 3)
    with pytest.raises(NonLinearError):
        linear_form("x*x", "x", {})
    with pytest.raises(NonLinearError):
        linear_form("x + z", "x", {})
