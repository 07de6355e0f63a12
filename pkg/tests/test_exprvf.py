import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toruskit.errors import ConfigError, DomainError, ExprSyntaxError, UnknownSymbol
from toruskit.exprvf import (Binary, Const, Dual, Unary, Var, check_periodic, compile_field,
                             eval_jacobian, evaluate, parse_expr, symbols, system_from_dict,
                             to_source)


def ev(src, **env):
    return evaluate(parse_expr(src), env)


@pytest.mark.parametrize("src,value", [
    ("1 + 2*3", 7.0),
    ("(1 + 2)*3", 9.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("8/4/2", 1.0),
    ("1 - 2 - 3", -4.0),
    ("+3", 3.0),
    ("sqrt(16) + abs(-2)", 6.0),
    ("exp(0) + log(1)", 1.0),
    ("1.5e2", 150.0),
    (".5", 0.5),
])
def test_precedence_and_literals(src, value):
    assert ev(src) == pytest.approx(value)


def test_tree_shape():
    tree = parse_expr("-x^2 + y")
    assert tree == Binary("+", Unary("neg", Binary("^", Var("x"), Const(2.0))), Var("y"))
    assert symbols(tree) == {"x", "y"}


@pytest.mark.parametrize("src,pos", [("1 +", 3), ("(1 + 2", 6), ("1 $ 2", 2), ("sin 1", 4),
                                     ("1 2", 2), (")", 0)])
def test_syntax_errors_carry_position(src, pos):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(src)
    assert info.value.position == pos
    assert info.value.exit_code == 2


def test_empty_expression():
    with pytest.raises(ExprSyntaxError):
        parse_expr("   ")


def test_unknown_symbol():
    with pytest.raises(UnknownSymbol) as info:
        parse_expr("x1 + zeta", {"x1"})
    assert info.value.name == "zeta"
    assert info.value.position == 5


@pytest.mark.parametrize("src", ["log(0)", "sqrt(-1)", "1/0", "0^-1", "(-2)^0.5"])
def test_domain_errors(src):
    with pytest.raises(DomainError):
        ev(src)


def test_dual_chain_rule():
    x = Dual(0.7, [1.0, 0.0])
    y = Dual(1.3, [0.0, 1.0])
    out = evaluate(parse_expr("sin(x*y) + x^3/y"), {"x": x, "y": y})
    assert out.val == pytest.approx(math.sin(0.91) + 0.343 / 1.3)
    assert out.der[0] == pytest.approx(1.3 * math.cos(0.91) + 3 * 0.49 / 1.3)
    assert out.der[1] == pytest.approx(0.7 * math.cos(0.91) - 0.343 / 1.69)


def test_to_source_round_trip():
    src = "-(x + 2)^3*sin(y)/exp(-x)"
    tree = parse_expr(src)
    assert parse_expr(to_source(tree)) == tree


# random expressions over x1, x2 built from everywhere-defined operations
_leaf = st.one_of(st.sampled_from(["x1", "x2"]), st.floats(-3, 3).map(lambda v: f"({v!r})"))


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
            lambda t: f"({t[0]} {t[1]} {t[2]})"),
        children.map(lambda c: f"sin({c})"),
        children.map(lambda c: f"cos({c})"),
        children.map(lambda c: f"({c})^2"),
        children.map(lambda c: f"exp(0.1*{c})" if len(c) < 40 else c),
    )


expressions = st.recursive(_leaf, _combine, max_leaves=8)


@settings(max_examples=60, deadline=None)
@given(expressions, st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_compiled_matches_interpreter(src, x, y):
    tree = parse_expr(src)
    ref = evaluate(tree, {"x1": x, "x2": y})
    field = compile_field([tree], ("x1", "x2"))
    (f,), J = field(0.0, np.array([x, y]), 0.0, want="fj")
    assert f == pytest.approx(ref, rel=1e-12, abs=1e-12)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        (fp,) = field(0.0, np.array([x, y]) + e, 0.0)
        (fm,) = field(0.0, np.array([x, y]) - e, 0.0)
        fd = (fp[0] - fm[0]) / (2 * h)
        assert J[0, i] == pytest.approx(fd, rel=1e-5, abs=1e-5 * (1 + abs(fd)))


def test_compiled_field_batched():
    field = compile_field([parse_expr("x1*x2 + mu"), parse_expr("x1^2")], ("x1", "x2"))
    X = np.arange(12, dtype=float).reshape(3, 2, 2)
    f, J = field(0.0, X, 0.5, want="fj")
    assert f.shape == (3, 2, 2)
    assert J.shape == (3, 2, 2, 2)
    assert np.allclose(f[..., 0], X[..., 0] * X[..., 1] + 0.5)
    assert np.allclose(J[..., 1, 0], 2 * X[..., 0])


def test_mu_derivative():
    vf = system_from_dict({"dimension": 2, "kind": "autonomous",
                           "fields": [["mu^2*x1", "sin(mu)*x2"]]})
    J, M = eval_jacobian(vf, [2.0, 3.0], mu=0.5, wrt_mu=True)
    assert np.allclose(J, np.diag([0.25, math.sin(0.5)]))
    assert np.allclose(M, [2.0, 3 * math.cos(0.5)])


@pytest.mark.parametrize("src,periodic", [
    ("sin(t)", True),
    ("cos(2*t)*x1", True),
    ("sin(t/2)", False),
    ("t", False),
    ("exp(sin(3*t))", True),
    ("x1^2", True),
    ("sin(w*t)", True),
])
def test_periodicity_rule(src, periodic):
    assert check_periodic(parse_expr(src), 2 * math.pi, {"w": 2.0}) is periodic


def _periodic_spec(**over):
    spec = {"dimension": 2, "kind": "periodic", "period": 2 * math.pi, "order_k": 1,
            "fields": [["x2", "-x1 + sin(t)"]]}
    spec.update(over)
    return spec


@pytest.mark.parametrize("over,match", [
    ({"kind": "chaotic"}, "kind"),
    ({"dimension": 1}, "dimension"),
    ({"order_k": 2}, "order_k"),
    ({"fields": [["x2", "sin(t/3)"]]}, "periodic"),
    ({"fields": [["x2", "x3"]]}, "x3"),
    ({"fields": [["x2"]]}, "components"),
    ({"period": -1.0}, "period"),
    ({"constants": {"mu": 1.0}}, "reserved"),
    ({"colour": "red"}, "unknown"),
])
def test_system_validation(over, match):
    with pytest.raises(ConfigError, match=match):
        system_from_dict(_periodic_spec(**over))


def test_series_rhs_matches_terms():
    spec = _periodic_spec(order_k=2, fields=[["x2*cos(t)", "x1"], ["x1^2", "sin(t)*x2"]],
                          f_tilde=["eps*x1", "x2"])
    vf = system_from_dict(spec)
    x = np.array([0.3, -0.7])
    t, mu, eps = 0.4, 0.1, 0.05
    (f,) = vf.rhs(t, x, mu, eps)
    (f1,) = vf.term(1, t, x, mu)
    (f2,) = vf.term(2, t, x, mu)
    tilde = np.array([eps * x[0], x[1]])
    assert np.allclose(f, eps * f1 + eps ** 2 * f2 + eps ** 3 * tilde, rtol=1e-14)
