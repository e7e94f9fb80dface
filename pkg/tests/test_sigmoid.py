import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsfnet import adgraph as ad
from dsfnet.sigmoid import (SigmoidKind, SigmoidSpec, eval_sigmoid, parse_kind,
                            sigmoid_values, tail_delta, verify_sigmoid_axioms)

KINDS = [SigmoidKind.LOGISTIC, SigmoidKind.RECIPROCAL, SigmoidKind.CAUCHY, SigmoidKind.OPTIMAL]


def value(spec, x):
    return eval_sigmoid(spec, ad.const(x)).item()


class TestValues:
    def test_optimal_at_zero(self):
        assert value(SigmoidSpec("optimal", 1.0), 0.0) == 0.5

    def test_optimal_tail(self):
        assert value(SigmoidSpec("optimal", 1.0), 1.0) == 1 - 1 / 16

    def test_optimal_pieces(self):
        spec = SigmoidSpec("optimal", 2.0)
        assert value(spec, 0.1) == pytest.approx(0.7)
        assert value(spec, -3.0) == pytest.approx(1 / 96)
        assert value(spec, 3.0) == pytest.approx(1 - 1 / 96)

    def test_logistic(self):
        assert value(SigmoidSpec("logistic", 1.0), 1.0) == pytest.approx(1 / (1 + math.exp(-1)),
                                                                         abs=1e-15)
        assert value(SigmoidSpec("logistic", 1.0), 1.0) == pytest.approx(0.731059, abs=1e-6)

    def test_logistic_extreme_inputs_stay_finite(self):
        v = sigmoid_values(SigmoidSpec("logistic", 1.0), np.array([-1e4, 1e4]))
        np.testing.assert_array_equal(v, [0.0, 1.0])

    def test_reciprocal_and_cauchy_closed_forms(self):
        assert value(SigmoidSpec("reciprocal", 2.0), 1.0) == pytest.approx(0.5 * 2 / 3 + 0.5)
        assert value(SigmoidSpec("cauchy", 1.0), 1.0) == pytest.approx(0.75)

    @pytest.mark.parametrize("kind", KINDS)
    def test_symmetry(self, kind):
        rng = np.random.default_rng(0)
        spec = SigmoidSpec(kind, 1.3)
        x = rng.uniform(-50, 50, size=100)
        np.testing.assert_allclose(sigmoid_values(spec, x) + sigmoid_values(spec, -x), 1.0,
                                   atol=1e-12, rtol=0)

    @pytest.mark.parametrize("kind", KINDS)
    def test_range_and_strict_monotone(self, kind):
        spec = SigmoidSpec(kind, 0.7)
        x = np.linspace(-30, 30, 2001)
        v = sigmoid_values(spec, x)
        assert np.all((v >= 0) & (v <= 1))
        g = eval_sigmoid(spec, ad.leaf(x))
        grads = ad.backward(ad.total(g))
        assert np.all(list(grads.values())[0] > 0)


class TestSpec:
    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            SigmoidSpec("logistic", 0.0)
        with pytest.raises(ValueError):
            SigmoidSpec("logistic", -1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            parse_kind("softsign")

    def test_logistic_art_not_implemented(self):
        with pytest.raises(NotImplementedError):
            eval_sigmoid(SigmoidSpec("logistic_art", 1.0), ad.const(0.0))


class TestOptimalKnots:
    @pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
    def test_c1_at_knots(self, beta):
        spec = SigmoidSpec("optimal", beta)
        for knot in (0.25 / beta, -0.25 / beta):
            x = ad.leaf(knot)
            ad.backward(eval_sigmoid(spec, x))
            assert x.grad == pytest.approx(beta, rel=1e-12)
            for side in (-1e-9, 1e-9):
                xs = ad.leaf(knot + side)
                ad.backward(eval_sigmoid(spec, xs))
                assert xs.grad == pytest.approx(beta, rel=1e-6)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
    def test_grad_check_at_knots(self, beta):
        spec = SigmoidSpec("optimal", beta)
        for knot in (0.25 / beta, -0.25 / beta):
            assert ad.grad_check(lambda v: eval_sigmoid(spec, v), [knot], h=1e-5) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
@settings(max_examples=50, deadline=None)
@given(x=st.floats(-20, 20), beta=st.floats(0.1, 10))
def test_grad_check_random(kind, x, beta):
    spec = SigmoidSpec(kind, beta)
    assert ad.grad_check(lambda v: eval_sigmoid(spec, v), [x], h=1e-5) < 1e-4


class TestAxioms:
    def test_optimal_all_pass(self):
        rep = verify_sigmoid_axioms(SigmoidSpec("optimal", 1.0), 1000, (-100.0, 100.0))
        assert rep.passed
        assert rep.delta == pytest.approx(1 / (16 * 100))

    def test_logistic_beta2(self):
        assert verify_sigmoid_axioms(SigmoidSpec("logistic", 2.0)).passed

    @pytest.mark.parametrize("kind", KINDS)
    def test_every_kind_passes(self, kind):
        assert verify_sigmoid_axioms(SigmoidSpec(kind, 1.0)).passed

    def test_constant_negative_control(self):
        # a constant is non-decreasing, so (i) holds; (ii)-(v) fail
        rep = verify_sigmoid_axioms(lambda x: np.full_like(x, 0.4))
        assert not rep.passed
        assert not rep.half_at_zero
        assert not rep.symmetric
        assert rep.non_decreasing

    def test_decreasing_negative_control(self):
        rep = verify_sigmoid_axioms(lambda x: 1.0 - sigmoid_values(SigmoidSpec("logistic"), x))
        assert not rep.non_decreasing
        assert rep.half_at_zero

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            verify_sigmoid_axioms(SigmoidSpec(), samples=1)

    @pytest.mark.parametrize("kind", KINDS)
    def test_tail_delta_matches_value(self, kind):
        spec = SigmoidSpec(kind, 1.5)
        for bound in (1.0, 10.0, 100.0):
            assert tail_delta(spec, bound) == pytest.approx(
                float(sigmoid_values(spec, -bound)), rel=1e-9)
