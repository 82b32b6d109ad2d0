"""Exponential Lévy models ``S = S0 * stochastic_exp(X)`` and the power-utility
investment problem.

Jump laws are given on the log-jump ``u`` of the log price; the jump of the
return process is ``x = e^u - 1``.  Jump integrals run on the ``u`` axis with
cached adaptive Gauss-Kronrod rules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline

from .contour_quadrature import adaptive_partition
from .errors import BoundaryMaximizer, DivergentExponent, OutsideCone, ValidationError

__all__ = [
    "MertonJumps",
    "KouJumps",
    "ExpLevyModel",
    "InvestmentSolution",
    "TiltedExponent",
    "check_risk_aversion",
    "levy_exponent",
    "g_objective",
    "g_derivative",
    "solve_investment",
    "drift_for_fraction",
    "tilted_exponent",
    "tilted_log_exponent",
]

_TAIL = 46.0  # log of the neglected relative tail mass


@dataclass(frozen=True)
class MertonJumps:
    """Normal log-jumps with the given intensity, mean and standard deviation."""

    intensity: float
    mean: float
    stdev: float

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValidationError("jump intensity must be positive")
        if not self.stdev > 0:
            raise ValidationError("log-jump stdev must be positive")

    def mgf(self, z):
        return np.exp(z * self.mean + 0.5 * z * z * self.stdev**2)

    def strip(self):
        return -math.inf, math.inf

    def density(self, u):
        s = self.stdev
        return np.exp(-0.5 * ((u - self.mean) / s) ** 2) / (s * math.sqrt(2 * math.pi))

    def intervals(self, re_lo, re_hi, extra=0.0):
        s, m = self.stdev, self.mean
        width = math.sqrt(2 * (_TAIL + extra)) * s
        return [(m + min(re_lo, 0.0) * s * s - width, m + max(re_hi, 0.0) * s * s + width)]

    def support_signs(self):
        return True, True

    def sample(self, rng, n):
        return rng.normal(self.mean, self.stdev, n)


@dataclass(frozen=True)
class KouJumps:
    """Double-exponential log-jumps: up with probability ``p_up`` and rate
    ``rate_up``, down with rate ``rate_down``."""

    intensity: float
    p_up: float
    rate_up: float
    rate_down: float

    def __post_init__(self):
        if not self.intensity > 0:
            raise ValidationError("jump intensity must be positive")
        if not 0 <= self.p_up <= 1:
            raise ValidationError("up-jump probability must lie in [0, 1]")
        if not (self.rate_up > 0 and self.rate_down > 0):
            raise ValidationError("Kou rates must be positive")

    def mgf(self, z):
        q = self.p_up
        return q * self.rate_up / (self.rate_up - z) + (1 - q) * self.rate_down / (self.rate_down + z)

    def strip(self):
        lo = -self.rate_down if self.p_up < 1 else -math.inf
        hi = self.rate_up if self.p_up > 0 else math.inf
        return lo, hi

    def density(self, u):
        u = np.asarray(u, dtype=float)
        up = self.p_up * self.rate_up * np.exp(-self.rate_up * np.abs(u))
        down = (1 - self.p_up) * self.rate_down * np.exp(-self.rate_down * np.abs(u))
        return np.where(u >= 0, up, down)

    def intervals(self, re_lo, re_hi, extra=0.0):
        out = []
        if self.p_up < 1:
            out.append((-(_TAIL + extra) / (self.rate_down + min(re_lo, 0.0)), 0.0))
        if self.p_up > 0:
            out.append((0.0, (_TAIL + extra) / (self.rate_up - max(re_hi, 0.0))))
        return out

    def support_signs(self):
        return self.p_up < 1, self.p_up > 0

    def sample(self, rng, n):
        up = rng.random(n) < self.p_up
        e = rng.standard_exponential(n)
        return np.where(up, e / self.rate_up, -e / self.rate_down)


JumpFamily = Optional[Union[MertonJumps, KouJumps]]


def check_risk_aversion(p: float) -> float:
    """Validate the relative risk aversion of power utility (``p > 0``, ``p != 1``)."""
    p = float(p)
    if not p > 0 or p == 1.0:
        raise ValidationError("risk aversion p must be positive and different from 1")
    return p


@dataclass(frozen=True, kw_only=True)
class ExpLevyModel:
    """Discounted stock ``S = S0 * E(X)`` driven by a Lévy process ``X``.

    ``drift_b`` is the drift of ``X`` relative to the truncation ``h(x) = x``
    and ``sigma2`` its diffusion variance rate.
    """

    S0: float
    sigma2: float
    drift_b: float
    jumps: JumpFamily = None
    T: float

    def __post_init__(self):
        if not self.S0 > 0:
            raise ValidationError("S0 must be positive")
        if not self.sigma2 >= 0:
            raise ValidationError("sigma2 must be non-negative")
        if not self.T > 0:
            raise ValidationError("horizon T must be positive")
        if not math.isfinite(self.drift_b):
            raise ValidationError("drift must be finite")
        if self.sigma2 == 0:
            if self.jumps is None:
                raise ValidationError("model without diffusion or jumps is monotone")
            down, up = self.jumps.support_signs()
            fv_drift = self.drift_b - self.jumps.intensity * (self.jumps.mgf(1.0) - 1.0)
            if (up and not down and fv_drift >= 0) or (down and not up and fv_drift <= 0):
                raise ValidationError("return process is monotone")
        if isinstance(self.jumps, KouJumps) and self.jumps.p_up > 0 and self.jumps.rate_up <= 2:
            raise ValidationError("Kou up-rate must exceed 2 for finite second moments")

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None

    def cone(self):
        """Closure of the admissible set of fractions ``{eta : 1 + eta x > 0}``."""
        if self.jumps is None:
            return -math.inf, math.inf
        down, up = self.jumps.support_signs()
        # x ranges over (-1, 0) for down jumps and (0, inf) for up jumps
        lo = 0.0 if up else -math.inf
        hi = 1.0 if down else math.inf
        return lo, hi

    def with_drift(self, drift_b: float) -> "ExpLevyModel":
        return ExpLevyModel(S0=self.S0, sigma2=self.sigma2, drift_b=drift_b, jumps=self.jumps, T=self.T)

    def with_S0(self, S0: float) -> "ExpLevyModel":
        return ExpLevyModel(S0=S0, sigma2=self.sigma2, drift_b=self.drift_b, jumps=self.jumps, T=self.T)


# --------------------------------------------------------------------------- #
# Jump quadrature on the log-jump axis
# --------------------------------------------------------------------------- #

def _tilt(u, eta, power):
    if eta == 0.0 or power == 0.0:
        return np.ones_like(u)
    with np.errstate(over="ignore"):
        return np.exp(power * np.log1p(eta * np.expm1(u)))


@lru_cache(maxsize=512)
def _jump_rule(jumps, eta=0.0, power=0.0, re_lo=-1.0, re_hi=4.0, freq=0.0):
    """Nodes and weights (intensity and density folded in, tilt excluded)."""
    extra = abs(power) * abs(math.log1p(-eta)) if 0 < eta < 1 else 0.0
    intervals = jumps.intervals(re_lo, re_hi, extra)

    def probe(u):
        base = jumps.intensity * jumps.density(u) * _tilt(u, eta, power)
        rows = [base * np.exp(r * u) for r in (re_lo, 0.0, re_hi)]
        rows.append(base * np.expm1(u) ** 2)
        if freq > 0:
            env = base * np.exp(max(re_hi, 0.0) * u)
            for f in np.linspace(freq / 6, freq, 6):
                rows.append(env * np.cos(f * u))
                rows.append(env * np.sin(f * u))
        return np.array(rows)

    u, w = adaptive_partition(probe, intervals, atol=1e-11, rtol=1e-13)
    return u, w * jumps.intensity * jumps.density(u)


def _jump_integral(jumps, fun, eta=0.0, power=0.0, re_lo=-1.0, re_hi=4.0):
    """``int fun(u) (1 + eta x)^power F(du)`` with ``x = e^u - 1``."""
    u, w = _jump_rule(jumps, float(eta), float(power), float(re_lo), float(re_hi))
    return np.asarray(fun(u)) @ (w * _tilt(u, eta, power))


def _check_strip(jumps, z, widen=0.0):
    if jumps is None:
        return
    lo, hi = jumps.strip()
    re = np.real(z)
    if np.any(re <= lo) or np.any(re >= hi + widen):
        raise DivergentExponent(f"Re(z) outside the convergence strip ({lo}, {hi + widen})")


def levy_exponent(model: ExpLevyModel, z):
    """Exponent ``psi`` of the log price with ``E exp(z log(S_t/S0)) = exp(t psi(z))``."""
    z = np.asarray(z, dtype=complex)
    c, b = model.sigma2, model.drift_b
    out = z * (b - 0.5 * c) + 0.5 * z * z * c
    if model.jumps is not None:
        _check_strip(model.jumps, z)
        j = model.jumps
        out = out + j.intensity * (j.mgf(z) - 1.0) - z * j.intensity * (j.mgf(1.0) - 1.0)
    return out if out.ndim else complex(out)


# --------------------------------------------------------------------------- #
# Investment problem
# --------------------------------------------------------------------------- #

def _check_cone(model, eta):
    lo, hi = model.cone()
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < lo) or np.any(eta > hi):
        raise OutsideCone(f"fraction outside the admissible cone [{lo}, {hi}]")


def _g_jump(model, p, eta):
    j = model.jumps
    etas = np.atleast_1d(np.asarray(eta, dtype=float))
    u, w = _jump_rule(j, float(np.max(etas)), 1.0 - p, -1.0, 1.0)
    x = np.expm1(u)[None, :]
    e = etas[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = (np.expm1((1.0 - p) * np.log1p(e * x)) / (1.0 - p) - e * x) @ w
    return vals if np.ndim(eta) else float(vals[0])


def g_objective(model: ExpLevyModel, p: float, eta):
    """Objective whose maximiser is the optimal fraction of wealth in stock.

    Accepts a scalar or an array of fractions.
    """
    p = check_risk_aversion(p)
    _check_cone(model, eta)
    eta_arr = np.asarray(eta, dtype=float)
    out = eta_arr * model.drift_b - 0.5 * p * eta_arr**2 * model.sigma2
    if model.jumps is not None:
        out = out + _g_jump(model, p, eta_arr)
    return float(out) if np.ndim(out) == 0 else out


def g_derivative(model: ExpLevyModel, p: float, eta: float) -> float:
    """Derivative of :func:`g_objective` in the fraction."""
    out = model.drift_b - p * eta * model.sigma2
    if model.jumps is not None and eta != 0.0:
        with np.errstate(over="ignore", invalid="ignore"):
            val = _jump_integral(model.jumps, np.expm1, eta, -p, -1.0, 1.0)
            val -= _jump_integral(model.jumps, np.expm1)
        out += float(val)
    return float(out) if math.isfinite(out) else (-math.inf if eta > 0 else math.inf)


@dataclass(frozen=True)
class InvestmentSolution:
    """Optimal fraction and the exponential rates of the opportunity processes.

    ``L_t = exp(a (T - t))`` and ``L_euro_t = exp(a_euro (T - t))``.
    """

    eta_hat: float
    a: float
    a_euro: float
    interior: bool
    C0: float
    C1: float
    foc_residual: float = 0.0

    def L_dollar(self, t: float, T: float) -> float:
        return math.exp((self.a - self.a_euro) * (T - t))

    def require_interior(self):
        if not self.interior:
            raise BoundaryMaximizer("optimal fraction lies on the boundary of the admissible cone")


def _a_euro(model, p, eta):
    """Rate of ``L_euro`` making ``L_euro * E(eta X)^(-1-p)`` a martingale."""
    b, c = model.drift_b, model.sigma2
    out = -(1 + p) * eta * b + 0.5 * (p + 1) * (p + 2) * eta**2 * c
    if model.jumps is not None and eta != 0.0:
        j = model.jumps
        tilted = _jump_integral(j, np.ones_like, eta, -1.0 - p, -1.0, 1.0)
        plain = _jump_integral(j, lambda u: 1.0 - (1 + p) * eta * np.expm1(u))
        out += float(tilted - plain)
    return float(out)


def solve_investment(model: ExpLevyModel, p: float, tol: float = 1e-10,
                     boundary_tol: float = 1e-6, strict: bool = False) -> InvestmentSolution:
    """Maximise the concave objective over the admissible cone.

    Without jumps the maximiser is ``b / (p c)``.  With jumps the derivative
    is bisected on the cone; a maximiser within ``boundary_tol`` of the cone
    edge is flagged ``interior=False`` (or raised with ``strict=True``).
    """
    p = check_risk_aversion(p)
    b, c = model.drift_b, model.sigma2
    interior = True
    if model.jumps is None:
        eta = b / (p * c)
    else:
        lo, hi = model.cone()
        lo_e = lo + boundary_tol if math.isfinite(lo) else -1.0
        hi_e = hi - boundary_tol if math.isfinite(hi) else 1.0
        while not math.isfinite(lo) and g_derivative(model, p, lo_e) < 0:
            lo_e *= 2.0
        while not math.isfinite(hi) and g_derivative(model, p, hi_e) > 0:
            hi_e *= 2.0
        d_lo, d_hi = g_derivative(model, p, lo_e), g_derivative(model, p, hi_e)
        if d_lo <= 0:
            eta, interior = lo, False
        elif d_hi >= 0:
            eta, interior = hi, False
        else:
            a_, b_ = lo_e, hi_e
            while b_ - a_ > tol:
                mid = 0.5 * (a_ + b_)
                if g_derivative(model, p, mid) > 0:
                    a_ = mid
                else:
                    b_ = mid
            eta = 0.5 * (a_ + b_)
    if not interior:
        if strict:
            raise BoundaryMaximizer(f"optimal fraction {eta} lies on the cone boundary")
        return InvestmentSolution(eta, math.nan, math.nan, False, math.nan, math.nan)
    a = (1 - p) * g_objective(model, p, eta)
    a_euro = _a_euro(model, p, eta)
    T = model.T
    return InvestmentSolution(eta, a, a_euro, True, math.exp(a * T), math.exp(a_euro * T),
                              g_derivative(model, p, eta))


def drift_for_fraction(model: ExpLevyModel, p: float, eta: float) -> float:
    """Drift ``b`` that makes ``eta`` the optimal fraction (first-order condition).

    The objective's derivative is affine in ``b`` with unit slope, so the
    drift is read off from the derivative at zero drift.
    """
    p = check_risk_aversion(p)
    _check_cone(model, eta)
    return -g_derivative(model.with_drift(0.0), p, float(eta))


# --------------------------------------------------------------------------- #
# Exponent of the log price under the tilted measure
# --------------------------------------------------------------------------- #

class TiltedExponent:
    """Exponent of the log price under the measure whose jump law is
    ``(1 + eta x)^(-1-p) F(dx)`` and whose drift is ``b_euro``.

    The jump transform uses a Gauss-Kronrod rule built once per frequency
    band; evaluation at many points on a single vertical line may go through
    a cubic-spline table of the jump transform.
    """

    def __init__(self, model: ExpLevyModel, p: float, eta: float, re_lo=-2.0, re_hi=4.0):
        self.model, self.p, self.eta = model, float(p), float(eta)
        if model.jumps is not None:
            lo, hi = model.jumps.strip()
            re_lo, re_hi = max(re_lo, 0.5 * (lo - 1.0)), min(re_hi, 0.5 * (hi + 1.0))
        self.re_lo, self.re_hi = float(re_lo), float(re_hi)
        c = model.sigma2
        self.c = c
        if model.jumps is None:
            self.kappa = self.m1 = self.m2 = 0.0
        else:
            j, pw = model.jumps, -1.0 - self.p
            self.kappa = float(_jump_integral(j, np.ones_like, eta, pw, self.re_lo, self.re_hi))
            self.m1 = float(_jump_integral(j, np.expm1, eta, pw, self.re_lo, self.re_hi))
            self.m2 = float(_jump_integral(j, lambda u: np.expm1(u) ** 2, eta, pw, self.re_lo, self.re_hi))
        # drift of the return process relative to h(x) = x
        self.b_euro = -self.eta * (c + self.m2)
        self._rules = {}
        self._tables = {}

    def strip(self):
        if self.model.jumps is None:
            return -math.inf, math.inf
        lo, hi = self.model.jumps.strip()
        return lo, hi + (1 + self.p if self.eta > 0 else 0.0)

    def _rule(self, freq):
        band = 2.0 ** math.ceil(math.log2(max(freq, 16.0)))
        if band not in self._rules:
            j = self.model.jumps
            u, w = _jump_rule(j, self.eta, -1.0 - self.p, self.re_lo, self.re_hi, band)
            self._rules[band] = (u, w * _tilt(u, self.eta, -1.0 - self.p))
        return self._rules[band]

    def jump_transform(self, z):
        """``int e^{z u} F_euro(du)`` evaluated directly on the cached rule."""
        z = np.asarray(z, dtype=complex)
        re = np.real(z)
        if np.any(re < self.re_lo - 1e-12) or np.any(re > self.re_hi + 1e-12):
            raise DivergentExponent("Re(z) outside the band covered by the jump rule")
        u, w = self._rule(float(np.max(np.abs(np.imag(z)), initial=0.0)))
        flat = z.ravel()
        out = np.empty(flat.shape, dtype=complex)
        step = max(1, 4_000_000 // max(u.size, 1))
        for k in range(0, flat.size, step):
            out[k:k + step] = np.exp(np.outer(flat[k:k + step], u)) @ w
        return out.reshape(z.shape)

    def _table(self, re, ymax):
        key = (re, ymax)
        if key not in self._tables:
            h = 0.02
            y = np.linspace(-ymax, ymax, int(round(2 * ymax / h)) + 1)
            vals = self.jump_transform(re + 1j * y)
            self._tables[key] = CubicSpline(y, vals)
        return self._tables[key]

    def continuous_part(self, z):
        """Quadratic polynomial left after dropping the oscillating jump transform."""
        z = np.asarray(z, dtype=complex)
        c = self.c
        return z * (self.b_euro - 0.5 * c - self.m1) + 0.5 * c * z * z - self.kappa

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        _check_strip(self.model.jumps, z, widen=(1 + self.p) if self.eta > 0 else 0.0)
        c = self.c
        out = z * (self.b_euro - 0.5 * c) + 0.5 * c * z * z
        if self.model.jumps is not None:
            out = out + self.jump_transform(z) - self.kappa - z * self.m1
        return out if out.ndim else complex(out)

    def on_line(self, re: float, y):
        """Exponent at ``re + iy`` for large arrays, via an interpolated jump table."""
        y = np.asarray(y, dtype=float)
        z = re + 1j * y
        c = self.c
        out = z * (self.b_euro - 0.5 * c) + 0.5 * c * z * z
        if self.model.jumps is None:
            return out
        ymax = float(2.0 ** math.ceil(math.log2(max(np.max(np.abs(y)), 16.0))))
        jt = self._table(float(re), ymax)(y)
        return out + jt - self.kappa - z * self.m1


@lru_cache(maxsize=64)
def tilted_exponent(model: ExpLevyModel, p: float, eta: float) -> TiltedExponent:
    """Cached :class:`TiltedExponent` for ``(model, p, eta)``."""
    return TiltedExponent(model, p, eta)


def tilted_log_exponent(model: ExpLevyModel, p: float, sol: InvestmentSolution, z):
    """Exponent of the log price under the tilted measure at ``z``."""
    sol.require_interior()
    return tilted_exponent(model, float(p), float(sol.eta_hat))(z)
