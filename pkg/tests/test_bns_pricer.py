import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from conftest import bns_params
from utilhedge.bns_models import BnsParams, gamma_ou_exponent
from utilhedge.bns_pricer import BnsHedgeEngine
from utilhedge.errors import IntegrabilityViolation, NonPositivePrice, ValidationError
from utilhedge.payoff_transforms import call_transform, monomial_transform, put_transform


@pytest.fixture(scope="module")
def call2():
    return BnsHedgeEngine(bns_params(), 2.0, call_transform(100.0))


@pytest.fixture(scope="module")
def put2():
    return BnsHedgeEngine(bns_params(), 2.0, put_transform(100.0))


@pytest.mark.parametrize("p", [2.0, 150.0])
@pytest.mark.parametrize("t", [0.0, 0.1, 0.2])
def test_exponents_vanish_at_zero_and_one(p, t):
    eng = BnsHedgeEngine(bns_params(), p, call_transform(100.0))
    for z in (0.0, 1.0):
        P0, P1 = eng.psi01(t, z)
        assert abs(P0) <= 1e-12 and abs(P1) <= 1e-12


@pytest.mark.parametrize("p", [2.0, 7.0])
def test_psi0_against_time_quadrature(p):
    eng = BnsHedgeEngine(bns_params(), p, call_transform(100.0))
    P, t, z = eng.params, 0.05, 1.2 + 3.5j

    def part(s):
        base = eng.co.alpha1(s)
        v = gamma_ou_exponent(P, base + eng.psi1(s, z)) - gamma_ou_exponent(P, base)
        return complex(v)

    re = integrate.quad(lambda s: part(s).real, t, P.T, epsabs=1e-14)[0]
    im = integrate.quad(lambda s: part(s).imag, t, P.T, epsabs=1e-14)[0]
    assert complex(eng.psi0(t, z)) == pytest.approx(re + 1j * im, rel=1e-10)


@given(s=st.floats(10.0, 1000.0))
def test_feedback_coefficient(s):
    eng = BnsHedgeEngine(bns_params(), 150.0, call_transform(100.0))
    assert s * eng.a_tilde(s) == pytest.approx(-1.404 / 150.0)


@given(s=st.floats(70.0, 140.0), t=st.floats(0.0, 0.2), y=st.floats(0.01, 0.2))
def test_put_call_parity(call2, put2, s, t, y):
    Vc, Xc, cc = call2.evaluate(t, s, y, with_certificate=True)
    Vp, Xp, cp = put2.evaluate(t, s, y, with_certificate=True)
    tol = 2 * max(cc.error_estimate, cp.error_estimate, 1e-6)
    assert Vc - Vp == pytest.approx(s - 100.0, abs=tol)
    assert Xc - Xp == pytest.approx(1.0, abs=1e-6)


def test_price_against_independent_quadrature(call2):
    # line integral by QUADPACK without the lognormal control
    P, R = call2.params, 1.2

    def part(y):
        z = R + 1j * y
        v = np.exp(z * math.log(P.S0) + complex(call2.psi0(0.0, z)) + call2.psi1(0.0, z) * P.y0)
        return float((v * call2.payoff.kernel(z) * 1j).real)

    ref = sum(integrate.quad(part, lo, hi, epsabs=1e-11, limit=400)[0]
              for lo, hi in ((-300, -40), (-40, 40), (40, 300)))
    assert call2.marginal_price() == pytest.approx(ref, rel=1e-7)


def test_monomials():
    P = bns_params()
    stock = BnsHedgeEngine(P, 2.0, monomial_transform(1.0))
    V, X = stock.evaluate(0.1, 95.0, 0.03)
    assert V == pytest.approx(95.0) and X == pytest.approx(1.0)
    assert stock.squared_error() == pytest.approx(0.0, abs=1e-10)
    one = BnsHedgeEngine(P, 2.0, monomial_transform(0.0))
    assert one.evaluate(0.1, 95.0, 0.03)[0] == pytest.approx(1.0)
    # variance jumps make the squared stock unattainable
    assert BnsHedgeEngine(P, 2.0, monomial_transform(2.0)).squared_error() > 0


def test_payoff_recovered_at_maturity(call2):
    V, X = call2.evaluate(0.25, np.array([90.0, 110.0]), 0.05)
    np.testing.assert_allclose(V, [0.0, 10.0], atol=1e-12)


def test_regression_values(call2):
    # converged values frozen from an earlier run
    assert call2.marginal_price() == pytest.approx(4.278394063714676, rel=1e-8)
    assert call2.initial_hedge() == pytest.approx(0.52139197031857, rel=1e-8)


@pytest.mark.slow
def test_premium_positive_and_converged(call2):
    prem, cert = call2.risk_premium(241.0, with_certificate=True)
    assert cert.converged and prem > 0
    assert prem == pytest.approx(0.004025473327074302, rel=1e-6)


def test_validation(call2):
    with pytest.raises(ValidationError):
        call2.evaluate(-0.1, 100.0, 0.05)
    with pytest.raises(ValidationError):
        call2.evaluate(0.1, 100.0, -0.05)
    with pytest.raises(NonPositivePrice):
        call2.evaluate(0.1, 0.0, 0.05)
    heavy = BnsParams(mu=20.0, lam=0.5, ou_a=1.0, ou_b=2.0, y0=0.05, S0=100, T=1.0)
    with pytest.raises(IntegrabilityViolation):
        BnsHedgeEngine(heavy, 0.5, call_transform(100.0))
