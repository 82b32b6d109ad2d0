import pytest
from hypothesis import settings

from utilhedge.bns_models import BnsParams
from utilhedge.levy_models import ExpLevyModel, KouJumps, MertonJumps, drift_for_fraction

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

KOU_DRIFT = 0.0259893132422366


def kou_model(S0=100.0):
    return ExpLevyModel(S0=S0, sigma2=0.02, drift_b=KOU_DRIFT, jumps=KouJumps(3, 0.4, 25, 20), T=0.25)


def brownian_model(S0=100.0):
    return ExpLevyModel(S0=S0, sigma2=0.04, drift_b=0.04, T=0.25)


def merton_model():
    base = ExpLevyModel(S0=100.0, sigma2=0.03, drift_b=0.0, jumps=MertonJumps(2.0, -0.05, 0.1), T=0.5)
    return base.with_drift(drift_for_fraction(base, 3.0, 0.3))


def bns_params(S0=100.0):
    return BnsParams(mu=1.404, lam=2.54, ou_a=0.848, ou_b=17.5, y0=0.0485, S0=S0, T=0.25)


@pytest.fixture
def kou():
    return kou_model()


@pytest.fixture
def brownian():
    return brownian_model()


@pytest.fixture
def merton():
    return merton_model()


@pytest.fixture
def bns():
    return bns_params()
