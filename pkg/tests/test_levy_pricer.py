import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from conftest import brownian_model, kou_model, merton_model
from utilhedge.contour_quadrature import QuadratureSpec
from utilhedge.errors import NonPositivePrice, ValidationError
from utilhedge.levy_pricer import LevyHedgeEngine, feedback_hedge
from utilhedge.payoff_transforms import call_transform, monomial_transform, put_transform


def bs_call(s, K, var):
    d1 = (math.log(s / K) + 0.5 * var) / math.sqrt(var)
    return s * norm.cdf(d1) - K * norm.cdf(d1 - math.sqrt(var)), norm.cdf(d1)


@pytest.fixture(scope="module")
def kou_call():
    return LevyHedgeEngine(kou_model(), 2.0, call_transform(100.0))


@pytest.fixture(scope="module")
def kou_put():
    return LevyHedgeEngine(kou_model(), 2.0, put_transform(100.0))


def test_brownian_reduces_to_black_scholes():
    eng = LevyHedgeEngine(brownian_model(), 2.0, call_transform(100.0))
    price, delta = bs_call(100.0, 100.0, 0.04 * 0.25)
    V, cert = eng.marginal_price(with_certificate=True)
    assert cert.converged
    assert V == pytest.approx(price, rel=1e-6)
    assert eng.initial_hedge() == pytest.approx(delta, abs=1e-6)
    assert eng.risk_premium(241.0) <= 1e-8


@pytest.mark.parametrize("model", [kou_model(), merton_model(), brownian_model()])
def test_capital_psi_vanishes_at_zero_and_one(model):
    eng = LevyHedgeEngine(model, 3.0 if model.T == 0.5 else 2.0, call_transform(100.0, 1.5))
    assert abs(eng.capital_psi(0.0)) <= 1e-12
    assert abs(eng.capital_psi(1.0)) <= 1e-12
    assert eng.weight(1.0) == pytest.approx(1.0, abs=1e-12)


@given(s=st.floats(10.0, 1000.0))
def test_feedback_coefficient_is_minus_fraction(s):
    eng = LevyHedgeEngine(kou_model(), 2.0, call_transform(100.0))
    assert s * eng.a_tilde(s) == pytest.approx(-eng.sol.eta_hat, abs=1e-8)


@given(s=st.floats(60.0, 160.0), t=st.floats(0.0, 0.24))
def test_put_call_parity(kou_call, kou_put, s, t):
    Vc, Xc, cc = kou_call.evaluate(t, s, with_certificate=True)
    Vp, Xp, cp = kou_put.evaluate(t, s, with_certificate=True)
    tol = 2 * max(cc.error_estimate, cp.error_estimate, 1e-8 * 100.0)
    assert Vc - Vp == pytest.approx(s - 100.0, abs=tol)
    assert Xc - Xp == pytest.approx(1.0, abs=1e-7)
    assert cc.imag_residual <= 1e-10 * (1 + abs(Vc))


def test_price_against_independent_quadrature(kou_call):
    # the same line integral with QUADPACK and no lognormal control
    eng, R, S0, T = kou_call, 1.2, 100.0, 0.25
    kernel = eng.payoff.kernel

    def part(y, k):
        z = R + 1j * y
        v = S0**z * np.exp(eng.capital_psi(z) * T) * kernel(z) * 1j
        return float(v.real if k == 0 else v.imag)

    ref = sum(integrate.quad(part, lo, hi, args=(0,), epsabs=1e-11, limit=400)[0]
              for lo, hi in ((-400, -50), (-50, 50), (50, 400)))
    assert eng.marginal_price() == pytest.approx(ref, rel=1e-7)


def test_kou_fixture_regression(kou_call):
    # values frozen from a converged run; independent checks live in the acceptance file
    assert kou_call.marginal_price() == pytest.approx(3.4941175951682486, rel=1e-8)
    assert kou_call.initial_hedge() == pytest.approx(0.48277733438108505, rel=1e-8)


def test_payoff_recovered_at_maturity(kou_call):
    s = np.array([80.0, 99.0, 101.0, 130.0])
    V, X = kou_call.evaluate(0.25, s)
    np.testing.assert_allclose(V, np.maximum(s - 100.0, 0.0), atol=1e-9)


def test_monomials_are_attainable_or_constant():
    model = kou_model()
    one = LevyHedgeEngine(model, 2.0, monomial_transform(0.0))
    V, X = one.evaluate(0.1, 90.0)
    assert V == pytest.approx(1.0) and X == pytest.approx(0.0, abs=1e-15)
    assert one.squared_error() == pytest.approx(0.0, abs=1e-12)
    stock = LevyHedgeEngine(model, 2.0, monomial_transform(1.0))
    V, X = stock.evaluate(0.1, 90.0)
    assert V == pytest.approx(90.0) and X == pytest.approx(1.0)
    assert stock.squared_error() == pytest.approx(0.0, abs=1e-9)
    # squared claims are not attainable with jumps
    assert LevyHedgeEngine(model, 2.0, monomial_transform(2.0)).squared_error() > 0


def test_premium_positive_and_scaled(kou_call):
    err2, cert = kou_call.squared_error(with_certificate=True)
    assert cert.converged
    prem = kou_call.risk_premium(241.0)
    assert prem > 0
    sol = kou_call.sol
    assert prem == pytest.approx(2.0 * math.exp((sol.a_euro - sol.a) * 0.25) / (2 * 241.0) * err2, rel=1e-12)


def test_feedback_recursion_by_hand():
    times = np.array([0.0, 0.5, 1.0])
    S = np.array([[10.0, 11.0, 9.0]])

    def surface(i, s, _y):
        return s * 0.5 + 1.0, np.full_like(s, 0.25)

    res = feedback_hedge(times, S, 6.5, surface, lambda s: -0.1 / s, lambda s: s - 5.0)
    # step 0: V = 6 so phi = 0.25 - (6.5 - 6)(-0.01)
    phi0 = 0.25 + 0.5 * 0.01
    G1 = phi0 * 1.0
    phi1 = 0.25 - (6.5 + G1 - 6.5) * (-0.1 / 11.0)
    assert res.phi[0, 0] == pytest.approx(phi0)
    assert res.phi[0, 1] == pytest.approx(phi1)
    assert res.terminal_error[0] == pytest.approx(6.5 + G1 - 2 * phi1 - 4.0)


def test_stock_claim_hedges_exactly():
    eng = LevyHedgeEngine(kou_model(), 2.0, monomial_transform(1.0))
    times = np.linspace(0, 0.25, 6)
    path = np.array([100.0, 97.0, 104.0, 88.0, 91.0, 120.0])
    res = eng.hedge_along_path(times, path)
    np.testing.assert_allclose(res.phi, 1.0)
    assert res.terminal_error == pytest.approx(0.0, abs=1e-10)


def test_validation(kou_call):
    with pytest.raises(ValidationError):
        kou_call.evaluate(0.3, 100.0)
    with pytest.raises(NonPositivePrice):
        kou_call.evaluate(0.1, -1.0)
    with pytest.raises(ValidationError):
        # S^R must stay integrable under the tilted law
        LevyHedgeEngine(kou_model(), 2.0, call_transform(100.0, 30.0))
    with pytest.raises(ValidationError):
        kou_call.premium_factor(0.0)
