import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robolin import expr as ex
from tests.helpers import random_expr

x1, x2, p1 = ex.var("x1"), ex.var("x2"), ex.var("p1")


class TestParseEvaluate:
    def test_additive_identity(self):
        assert ex.evaluate(ex.parse("x1 + 0", ["x1"]), {"x1": 3.0}) == 3.0

    def test_sin_zero(self):
        space = ex.VariableSpace(states=("x1",), params=("p1",))
        assert ex.evaluate(ex.parse("sin(x1)*p1", space), {"x1": 0.0, "p1": 5.0}) == 0.0

    def test_rational(self):
        e = ex.parse("x1^2/(1+x2)", ["x1", "x2"])
        assert ex.evaluate(e, {"x1": 2.0, "x2": 1.0}) == pytest.approx(2.0, abs=1e-15)

    def test_constant(self):
        assert ex.evaluate(ex.const(7), {}) == 7.0

    def test_ln_exp_inverse(self):
        e = ex.parse("ln(exp(x1))", ["x1"])
        assert ex.evaluate(e, {"x1": 3.5}) == pytest.approx(3.5, abs=1e-15)

    def test_division_by_zero(self):
        with pytest.raises(ex.ExprDomainError):
            ex.evaluate(ex.parse("x1/x2", ["x1", "x2"]), {"x1": 1.0, "x2": 0.0})

    @pytest.mark.parametrize("text", ["ln(x1)", "sqrt(x1)"])
    def test_domain_errors(self, text):
        with pytest.raises(ex.ExprDomainError):
            ex.evaluate(ex.parse(text, ["x1"]), {"x1": -1.0})

    def test_unknown_identifier(self):
        with pytest.raises(ex.UnknownIdentifierError):
            ex.parse("x1 + q", ["x1"])

    @pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 ^ 1.5", "sin x1", "x1 $ 2"])
    def test_syntax_errors(self, text):
        with pytest.raises(ex.ExprError):
            ex.parse(text, ["x1"])

    def test_precedence(self):
        assert ex.evaluate(ex.parse("-x1^2", ["x1"]), {"x1": 3.0}) == -9.0
        assert ex.evaluate(ex.parse("2^3^2", []), {}) == 64.0
        assert ex.evaluate(ex.parse("1 - 2 - 3", []), {}) == -4.0
        assert ex.evaluate(ex.parse("8 / 4 / 2", []), {}) == 1.0

    def test_negative_integer_power(self):
        assert ex.evaluate(ex.parse("x1^-2", ["x1"]), {"x1": 2.0}) == 0.25

    def test_missing_binding(self):
        with pytest.raises(KeyError):
            ex.evaluate(x1 + x2, {"x1": 1.0})

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ex.VariableSpace(states=("a",), params=("a",))


class TestStructure:
    def test_hash_consing(self):
        a = ex.parse("sin(x1)*x2 + 1", ["x1", "x2"])
        b = ex.sin(x1) * x2 + 1
        assert a is b

    def test_smart_constructors(self):
        assert x1 + 0 is x1
        assert x1 * 1 is x1
        assert (x1 * 0).is_const and (x1 * 0).value == 0.0
        assert (ex.const(2) + ex.const(3)).value == 5.0

    def test_shared_subexpressions_counted_once(self):
        s = ex.sin(x1 * x2)
        e = s * s + s
        assert ex.node_count(e) == ex.node_count(s) + 2

    def test_free_vars_and_substitute(self):
        e = x1 * p1 + ex.cos(x2)
        assert ex.free_vars(e) == {"x1", "x2", "p1"}
        f = ex.substitute(e, {"p1": 2.0, "x2": 0.0})
        assert ex.free_vars(f) == {"x1"}
        assert ex.evaluate(f, {"x1": 3.0}) == 7.0

    def test_dag_round_trip_and_pickle(self):
        e = ex.exp(x1) * ex.sin(x1 * x2) - x2 ** 3 / (1 + x1 * x1)
        table, roots = ex.to_dag([e, x1])
        back = ex.from_dag(table, roots)
        assert back[0] is e and back[1] is x1
        assert pickle.loads(pickle.dumps(e)) is e

    def test_deep_chain_does_not_recurse(self):
        e = x1
        for _ in range(5000):
            e = ex.sin(e)
        d = ex.diff(e, "x1")
        assert math.isfinite(ex.evaluate(d, {"x1": 0.1}))
        assert ex.to_string(e).startswith("sin(")

    def test_to_string_parses_back(self):
        e = -(x1 ** 2) / (1 + ex.absolute(x2)) - ex.tan(x1) * ex.sqrt(x2 * x2 + 1)
        assert ex.parse(ex.to_string(e), ["x1", "x2"]) is e


class TestDiff:
    def test_power_rule(self):
        assert ex.diff(x1 ** 2, "x1") is 2 * x1

    def test_sin(self):
        assert ex.evaluate(ex.diff(ex.sin(x1), "x1"), {"x1": 0.0}) == 1.0

    def test_product_and_exp(self):
        d = ex.diff(x1 * x2 + ex.exp(x1), "x1")
        val = ex.evaluate(d, {"x1": 1.0, "x2": 2.0})
        assert val == pytest.approx(2 + math.e, abs=1e-12)
        f = lambda a: a * 2.0 + math.exp(a)  # noqa: E731
        h = 1e-6
        assert val == pytest.approx((f(1 + h) - f(1 - h)) / (2 * h), abs=1e-6)

    def test_constant_derivative(self):
        assert ex.diff(ex.sin(x2), "x1") is ex.ZERO

    @given(st.integers(0, 10_000))
    def test_gradient_matches_finite_difference(self, seed):
        rng = np.random.default_rng(seed)
        e = random_expr(rng, 6)
        pt = {"x": float(rng.uniform(-1, 1)), "y": float(rng.uniform(-1, 1))}
        for name in ("x", "y"):
            d = ex.evaluate(ex.diff(e, name), pt)
            h = 1e-6
            hi, lo = dict(pt), dict(pt)
            hi[name] += h
            lo[name] -= h
            fd = (ex.evaluate(e, hi) - ex.evaluate(e, lo)) / (2 * h)
            assert abs(d - fd) <= 1e-5 * (1 + abs(d))


class TestCompile:
    def test_scalar_matches_evaluate(self, rng):
        exprs = [random_expr(rng, 5) for _ in range(6)]
        fn = ex.compile_exprs(exprs, ["x", "y"])
        for _ in range(20):
            a, b = rng.uniform(-1, 1, 2)
            got = fn([a, b])
            for e, g in zip(exprs, got):
                assert g == pytest.approx(ex.evaluate(e, {"x": a, "y": b}), rel=1e-12, abs=1e-12)

    def test_vectorized_columns(self, rng):
        e = ex.sin(ex.var("x")) * ex.var("y") + 3
        fn = ex.compile_exprs([e, ex.const(2.0)], ["x", "y"], vectorized=True)
        xs, ys = rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50)
        out = fn([xs, ys])
        np.testing.assert_allclose(out[0], np.sin(xs) * ys + 3, rtol=1e-14)
        assert np.shape(np.broadcast_to(out[1], (50,))) == (50,)

    def test_compiled_domain_error(self):
        fn = ex.compile_exprs([ex.ln(ex.var("x"))], ["x"])
        with pytest.raises(ex.ExprDomainError):
            fn([-1.0])
