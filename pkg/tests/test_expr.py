import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringsim.expr import (ExprError, GlobalEnv, evaluate, names_in, parse_expression, parse_list,
                          parse_program)


def ev(text, **names):
    return evaluate(parse_expression(text), names.__getitem__)


@pytest.mark.parametrize("text, value", [
    ("1+2*3", 7.0),
    ("(1+2)*3", 9.0),
    ("-2*-3", 6.0),
    ("8/4/2", 1.0),
    ("1-2-3", -4.0),
    ("1e-3*1000", 1.0),
    (".5+1.", 1.5),
    ("ifle0(-1, 10, 20)", 10.0),
    ("ifge0(-1, 10, 20)", 20.0),
    ("mod(7, 3)", 1.0),
    ("mod(-7, 3)", -1.0),
    ("eq(2, 2)+ne(2, 2)+lt(1, 2)+ge(1, 2)", 2.0),
    ("max(3, min(1, 2))", 3.0),
    ("atan2(1, 1)*4", math.pi),
    ("pow(2, 10)", 1024.0),
    ("floor(-1.5)", -2.0),
])
def test_values(text, value):
    assert ev(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["1/0", "log(0)", "sqrt(-1)", "mod(1, 0)"])
def test_domain_errors(text):
    with pytest.raises(ExprError):
        ev(text)


@pytest.mark.parametrize("text", ["", "1+", "(1", "foo(1)", "exp(1, 2)", "1 2", "tab(1, 2)"])
def test_syntax_errors(text):
    with pytest.raises(ExprError):
        ev(text)


def test_names_and_arrays():
    u = np.array([-1.0, 0.5, 2.0])
    out = ev("ifle0(u, 0, u*a)", u=u, a=2.0)
    np.testing.assert_array_equal(out, [0.0, 1.0, 4.0])
    assert names_in(parse_expression("a*exp(b)+c")) == {"a", "b", "c"}


def test_program_juxtaposed_and_separated():
    prog = parse_program("a=1 b=a+1; c=2*b;")
    assert [s.target for s in prog] == ["a", "b", "c"]
    with pytest.raises(ExprError):
        parse_program("1=a")
    assert len(parse_list("u; v*2;; w")) == 3


def test_env_kinds_and_readonly():
    env = GlobalEnv("demo", ["3"])
    env.declare("int", "n", "2.7")
    assert env["n"] == 2
    env.declare("real", "x", "n/4")
    assert env["x"] == 0.5
    env.declare("str", "s", " hi ")
    assert env.macro("s") == "hi"
    assert env.macro("0") == "demo" and env.macro("1") == "3"
    with pytest.raises(ExprError):
        env.declare("real", "x")
    with pytest.raises(ExprError):
        env.macro("2")
    with pytest.raises(ExprError):
        env.set("nope", 1)
    assert env["t"] == 0 and env["always"] == 1.0


def test_snapshot_restore():
    env = GlobalEnv()
    env.declare("real", "a", "1/3")
    snap = env.snapshot()
    env.set("a", 5)
    env.restore(snap)
    assert env["a"] == 1 / 3


ints = st.integers(-50, 50)


@st.composite
def trees(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return str(draw(ints))
    op = draw(st.sampled_from("+-*"))
    return f"({draw(trees(depth=depth - 1))}{op}{draw(trees(depth=depth - 1))})"


@settings(max_examples=100, deadline=None)
@given(trees())
def test_integer_arithmetic_matches_python(text):
    assert ev(text) == float(eval(text))


@settings(max_examples=100, deadline=None)
@given(trees())
def test_print_reparse_identity(text):
    node = parse_expression(text)
    assert ev(str(node)) == ev(text)
