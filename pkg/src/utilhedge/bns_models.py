"""BNS stochastic volatility with a Gamma-OU variance process.

The return process is ``dX = mu y dt + sqrt(y) dW`` and the variance follows
``dy = -lam y dt + dZ`` with ``Z`` compound Poisson (rate ``lam a``,
exponential jumps with rate ``b``).  All time coefficients are exponential
affine in time, so integrals of the driver exponent along them have a closed
form through partial fractions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .contour_quadrature import gauss_kronrod
from .errors import IntegrabilityViolation, PoleHit, PolePath, ValidationError
from .levy_models import check_risk_aversion

__all__ = [
    "BnsParams",
    "ExpAffineArg",
    "AffineCoefficients",
    "IntegrabilityReport",
    "gamma_ou_exponent",
    "exp_affine_integral",
    "distinguished_log_ratio",
    "alpha_functions",
    "psiZ_euro",
    "integrability_report",
]

ArrayLike = Union[float, complex, np.ndarray]


@dataclass(frozen=True, kw_only=True)
class BnsParams:
    """Parameters of the BNS model with a Gamma-OU variance process."""

    mu: float
    lam: float
    ou_a: float
    ou_b: float
    y0: float
    S0: float
    T: float

    def __post_init__(self):
        for name in ("lam", "ou_a", "ou_b", "y0", "S0", "T"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not math.isfinite(self.mu):
            raise ValidationError("mu must be finite")

    def with_S0(self, S0: float) -> "BnsParams":
        return BnsParams(mu=self.mu, lam=self.lam, ou_a=self.ou_a, ou_b=self.ou_b,
                         y0=self.y0, S0=S0, T=self.T)

    def decay_integral(self, t=0.0):
        """``(1 - e^{-lam (T - t)}) / lam``."""
        return -np.expm1(-self.lam * (self.T - np.asarray(t, dtype=float))) / self.lam


def gamma_ou_exponent(params: BnsParams, u: ArrayLike):
    """Driver exponent ``lam a u / (b - u)``."""
    u = np.asarray(u, dtype=complex)
    gap = params.ou_b - u
    if np.any(np.abs(gap) < 1e-12):
        raise PoleHit("argument hits the pole of the Gamma-OU exponent")
    out = params.lam * params.ou_a * u / gap
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class ExpAffineArg:
    """``m(s) = c1 (e^{-lam (t_anchor - s)} - 1) + c2 e^{-lam (t_anchor - s)} + c3``.

    Coefficients may be arrays (broadcast together) so whole grids of
    arguments are handled at once.
    """

    c1: ArrayLike
    c2: ArrayLike
    c3: ArrayLike
    t_anchor: float
    lam: float

    @property
    def slope(self):
        """Coefficient of ``e^{-lam (t_anchor - s)}``."""
        return np.asarray(self.c1) + np.asarray(self.c2)

    @property
    def level(self):
        """Constant part ``c3 - c1``."""
        return np.asarray(self.c3) - np.asarray(self.c1)

    def __call__(self, s):
        e = np.exp(-self.lam * (self.t_anchor - np.asarray(s, dtype=float)))
        return self.slope * e + self.level

    def reanchor(self, t_new: float) -> "ExpAffineArg":
        scale = math.exp(-self.lam * (self.t_anchor - t_new))
        return ExpAffineArg(0.0, self.slope * scale, self.level, t_new, self.lam)

    def __add__(self, other):
        if isinstance(other, ExpAffineArg):
            if other.lam != self.lam:
                raise ValidationError("cannot add arguments with different rates")
            o = other.reanchor(self.t_anchor)
            return ExpAffineArg(0.0, self.slope + o.slope, self.level + o.level, self.t_anchor, self.lam)
        return ExpAffineArg(self.c1, self.c2, np.asarray(self.c3) + other, self.t_anchor, self.lam)

    __radd__ = __add__


def distinguished_log_ratio(w1, w2, pole_tol: float = 1e-10):
    """Continuous logarithm of ``w1 / w2`` along the straight segment joining them.

    For an exponential-affine argument the shifted path ``m(s) - b`` runs
    along a straight segment (a real monotone factor times a fixed complex
    slope plus a constant).  The argument swept along a segment that avoids
    the origin is less than pi in magnitude, so the continuous branch equals
    the principal logarithm of the ratio.  Segments passing within
    ``pole_tol`` of the origin are rejected.
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    d = w2 - w1
    dd = np.abs(d) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(dd > 0, -np.real(np.conj(w1) * d) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    dist = np.abs(w1 + t * d)
    if np.any(dist < pole_tol):
        raise PolePath("exponential-affine path passes through the pole")
    return np.log(w1 / w2)


def _quad_integral(params, m: ExpAffineArg, t1, t2):
    slope = np.atleast_1d(m.slope).ravel()[:, None]
    level = np.atleast_1d(m.level).ravel()[:, None]
    flat = ExpAffineArg(0.0, slope, level, m.t_anchor, m.lam)
    vals = gauss_kronrod(lambda s: gamma_ou_exponent(params, flat(s[None, :])), t1, t2,
                         atol=1e-13, rtol=1e-13)
    return np.asarray(vals).reshape(np.shape(m.slope))


def exp_affine_integral(params: BnsParams, m: ExpAffineArg, t1: float, t2: float,
                        degenerate_tol: float = 1e-8):
    """``int_{t1}^{t2} psi_Z(m(s)) ds`` in closed form.

    Generic case (``b != c3 - c1``)::

        -a/(b - D) * (-lam (t2 - t1) D - b log((m(t1) - b)/(m(t2) - b)))

    with ``D = c3 - c1`` and the distinguished logarithm.  When ``b = D``
    exactly the integrand reduces to ``-lam a - lam a b e^{lam(t_anchor - s)}/C``
    with ``C = c1 + c2``.  Coefficients within ``degenerate_tol`` of that
    case but not equal are integrated numerically.
    """
    if t2 < t1:
        raise ValidationError("integration bounds must satisfy t1 <= t2")
    C = np.asarray(m.slope, dtype=complex)
    D = np.asarray(m.level, dtype=complex)
    C, D = np.broadcast_arrays(C, D)
    shape = C.shape
    C, D = C.ravel(), D.ravel()
    out = np.zeros(C.shape, dtype=complex)
    if t2 == t1:
        return out.reshape(shape) if shape else complex(out[0])
    a, b, lam = params.ou_a, params.ou_b, params.lam
    dt = t2 - t1
    e1 = math.exp(-lam * (m.t_anchor - t1))
    e2 = math.exp(-lam * (m.t_anchor - t2))
    gap = b - D
    exact = gap == 0
    near = (np.abs(gap) < degenerate_tol * max(1.0, b)) & ~exact
    gen = ~(exact | near)
    if np.any(gen):
        Cg, Dg, gg = C[gen], D[gen], gap[gen]
        w1 = Cg * e1 + Dg - b
        w2 = Cg * e2 + Dg - b
        lg = distinguished_log_ratio(w1, w2)
        out[gen] = (-a / gg) * (-lam * dt * Dg - b * lg)
    if np.any(exact):
        Ce = C[exact]
        if np.any(np.abs(Ce) < 1e-300):
            raise PolePath("argument is identically at the pole")
        out[exact] = -lam * a * dt + (a * b / Ce) * (1.0 / e2 - 1.0 / e1)
    if np.any(near):
        sub = ExpAffineArg(0.0, C[near], D[near], m.t_anchor, lam)
        out[near] = _quad_integral(params, sub, t1, t2)
    return out.reshape(shape) if shape else complex(out[0])


@dataclass(frozen=True)
class IntegrabilityReport:
    """Exponential-moment conditions for the Gamma-OU driver.

    Each entry is ``(name, required, exponent, passes)``; a condition holds
    when its exponent stays below ``b``.
    """

    p: float
    bound: float
    entries: tuple

    @property
    def all_pass(self) -> bool:
        return all(ok for _, req, _, ok in self.entries if req)

    def failing(self):
        return [name for name, req, _, ok in self.entries if req and not ok]

    def as_dict(self) -> dict:
        return {name: {"required": req, "exponent": float(x), "bound": self.bound, "passes": ok}
                for name, req, x, ok in self.entries}


def integrability_report(params: BnsParams, p: float) -> IntegrabilityReport:
    """Check the exponential moments needed for the opportunity processes and
    for square integrability of the stock under the tilted measure."""
    p = check_risk_aversion(p)
    mu2 = params.mu**2
    k = float(params.decay_integral(0.0))
    b = params.ou_b
    opp = (1 - p) / (2 * p) * mu2 * k
    euro = (1 + p) * (2 - p) / (2 * p * p) * mu2 * k
    square = k * ((1 + p) * (2 - p) / (2 * p * p) * mu2 + 2 - params.mu / p)
    entries = (
        ("opportunity", p < 1, opp, opp < b),
        ("tilted_opportunity", p < 2, euro, euro < b),
        ("square_integrability", True, square, square < b),
    )
    return IntegrabilityReport(p, b, entries)


class AffineCoefficients:
    """Coefficients of the exponential-affine opportunity processes.

    ``L = exp(alpha0 + alpha1 y)``, ``L_euro = exp(alpha0_euro + alpha1_euro y)``
    and ``L_dollar = L / L_euro``.  All vanish at the horizon.
    """

    def __init__(self, params: BnsParams, p: float, check: bool = True):
        self.params = params
        self.p = p = check_risk_aversion(p)
        if check:
            rep = integrability_report(params, p)
            if not rep.all_pass:
                raise IntegrabilityViolation(f"conditions fail: {', '.join(rep.failing())}")
        lam, mu2 = params.lam, params.mu**2
        self.k1 = (1 - p) / (2 * p) * mu2 / lam
        self.k1_euro = (1 + p) * (2 - p) / (2 * p * p) * mu2 / lam

    def arg(self, k: float) -> ExpAffineArg:
        """``k (1 - e^{-lam (T - s)})`` as an exponential-affine argument."""
        return ExpAffineArg(-k, 0.0, 0.0, self.params.T, self.params.lam)

    def _one(self, t):
        return -np.expm1(-self.params.lam * (self.params.T - np.asarray(t, dtype=float)))

    def alpha1(self, t):
        return self.k1 * self._one(t)

    def alpha1_euro(self, t):
        return self.k1_euro * self._one(t)

    def alpha1_dollar(self, t):
        return (self.k1 - self.k1_euro) * self._one(t)

    def _alpha0(self, k, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        vals = np.array([exp_affine_integral(self.params, self.arg(k), float(s), self.params.T).real
                         for s in ts])
        return vals if np.ndim(t) else float(vals[0])

    def alpha0(self, t):
        return self._alpha0(self.k1, t)

    def alpha0_euro(self, t):
        return self._alpha0(self.k1_euro, t)

    def alpha0_dollar(self, t):
        return np.asarray(self.alpha0(t)) - np.asarray(self.alpha0_euro(t))

    def psiZ_euro(self, t, u):
        """Driver exponent under the tilted measure at time ``t``."""
        shift = self.alpha1_euro(t)
        return gamma_ou_exponent(self.params, np.asarray(u) + shift) - gamma_ou_exponent(self.params, shift)


def alpha_functions(params: BnsParams, p: float, t):
    """``(alpha1, alpha0, alpha1_euro, alpha0_euro, alpha1_dollar, alpha0_dollar)`` at ``t``."""
    co = AffineCoefficients(params, p)
    a1, a0 = co.alpha1(t), co.alpha0(t)
    e1, e0 = co.alpha1_euro(t), co.alpha0_euro(t)
    return a1, a0, e1, e0, a1 - e1, np.asarray(a0) - np.asarray(e0)


def psiZ_euro(params: BnsParams, p: float, t: float, u):
    """``psi_Z(u + alpha1_euro(t)) - psi_Z(alpha1_euro(t))``."""
    return AffineCoefficients(params, p, check=False).psiZ_euro(t, u)
