import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emtkit.circuit import eval_behavioral
from emtkit.errors import DomainError, UnknownNode
from emtkit.expr import (
    TIME,
    I,
    V,
    affine_coefficients,
    clamp,
    compile_exprs,
    const,
    cos,
    exp,
    maximum,
    minimum,
    sin,
    sqrt,
    table,
)

X, Y, Z = ("v", "x"), ("v", "y"), ("i", "Vs")


def test_linear_value_and_partial():
    val, grad = (3 * V("1")).evaluate({("v", "1"): 2.0})
    assert val == 6.0
    assert grad == {("v", "1"): 3.0}


def test_sin_at_zero():
    val, grad = sin(V("1")).evaluate({("v", "1"): 0.0})
    assert val == 0.0
    assert grad[("v", "1")] == 1.0


def test_product_partials_against_finite_difference():
    e = V("1") * V("2")
    env = {("v", "1"): 2.0, ("v", "2"): 5.0}
    val, grad = e.evaluate(env)
    assert val == 10.0
    assert grad == {("v", "1"): 5.0, ("v", "2"): 2.0}
    h = 1e-6
    for k in env:
        up, dn = dict(env), dict(env)
        up[k] += h
        dn[k] -= h
        fd = (e.evaluate(up)[0] - e.evaluate(dn)[0]) / (2 * h)
        assert fd == pytest.approx(grad[k], abs=1e-6)


def test_division_is_guarded():
    val, grad = (1.0 / V("x")).evaluate({X: 0.0})
    assert math.isfinite(val) and all(math.isfinite(g) for g in grad.values())


def test_exp_is_finite_far_out():
    val, grad = exp(V("x")).evaluate({X: 1e6})
    assert math.isfinite(val) and math.isfinite(grad[X])


def test_table_without_extrapolation_raises_outside():
    e = table(V("x"), [0.0, 1.0, 2.0], [0.0, 10.0, 0.0], extrapolate=False)
    assert e.evaluate({X: 0.5})[0] == pytest.approx(5.0)
    with pytest.raises(DomainError):
        e.evaluate({X: 3.0})


def test_time_leaf_and_variables():
    e = sin(TIME) * V("x") + I("Vs")
    assert e.variables() == {X, Z}
    assert e.uses_time()
    assert not e.is_affine()
    assert (2 * V("x") - I("Vs") + 1).is_affine()


def test_affine_coefficients():
    off, grad = affine_coefficients(2 * V("x") - 3 * I("Vs") + 4)
    assert off == 4.0 and grad == {X: 2.0, Z: -3.0}
    with pytest.raises(ValueError):
        affine_coefficients(V("x") * V("y"))


def test_eval_behavioral_reports_missing_reference():
    with pytest.raises(UnknownNode):
        eval_behavioral(V("nowhere"), {X: 1.0})


def _zoo():
    x, y, i = V("x"), V("y"), I("Vs")
    return [
        3 * x + 2,
        x * y - i,
        x / (y + 3.0),
        sin(x) * cos(y),
        exp(0.3 * x) - 1,
        sqrt(x * x + 1.0),
        minimum(x, y, 0.5),
        maximum(x, 2 * y),
        clamp(x * y, -0.5, 0.7),
        table(x, [-2.0, 0.0, 1.0, 3.0], [1.0, -1.0, 2.0, 0.0]),
        (x - y) * (x + y) / (1.0 + i * i),
        -x + const(4.0) * sin(TIME),
        1.0 - x * exp(-y * y),
    ]


finite = st.floats(-2.5, 2.5, allow_nan=False)


def _kinked(e, env):
    # min/max/clamp/table are only piecewise differentiable
    x, y = env[X], env[Y]
    near = [x, y, x - y, x - 0.5, y - 0.5, x - 2 * y, x * y + 0.5, x * y - 0.7, x + 2, x - 1, x - 3]
    return any(abs(d) < 1e-4 for d in near)


@given(finite, finite, finite, st.floats(0.0, 1.0))
def test_partials_match_central_differences(x, y, i, t):
    env = {X: x, Y: y, Z: i}
    h = 1e-6
    for e in _zoo():
        if _kinked(e, env):
            continue
        _, grad = e.evaluate(env, t)
        for k in env:
            up, dn = dict(env), dict(env)
            up[k] += h
            dn[k] -= h
            fd = (e.evaluate(up, t)[0] - e.evaluate(dn, t)[0]) / (2 * h)
            g = grad.get(k, 0.0)
            assert abs(fd - g) <= 1e-5 * max(1.0, abs(g)), (str(e), k, fd, g)


@given(finite, finite, finite, st.floats(0.0, 1.0))
def test_compiled_code_matches_tree_evaluation(x, y, i, t):
    exprs = _zoo()
    index = {X: 0, Y: 1, Z: 2}
    fn, layout = compile_exprs(exprs, index)
    f = np.zeros(len(exprs))
    jv = np.zeros(fn.n_partials)
    fn(np.array([x, y, i]), t, f, jv)
    env = {X: x, Y: y, Z: i}
    for k, e in enumerate(exprs):
        val, grad = e.evaluate(env, t)
        assert f[k] == pytest.approx(val, rel=1e-14, abs=1e-14)
        for var, slot in layout[k]:
            assert jv[slot] == pytest.approx(grad.get(var, 0.0), rel=1e-14, abs=1e-14)


def test_shared_subexpressions_compile_once():
    s = sin(V("x") * V("y"))
    fn, _ = compile_exprs([s * s + s], {X: 0, Y: 1})
    assert fn.source.count("_sin(") == 1
