"""Marginal price, hedge and risk premium in the BNS Gamma-OU model.

Under the marginal pricing measure the mean value process is
``V_t = int S_t^z exp(Psi0(t, z) + Psi1(t, z) y_t) l(z) dz`` and the pure
hedge is its derivative in ``S``.  The risk premium is a time integral of a
double line integral whose time coefficients are all exponential affine, so
every inner time integral uses the closed form from :mod:`bns_models`.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .bns_models import (
    AffineCoefficients,
    BnsParams,
    ExpAffineArg,
    exp_affine_integral,
    gamma_ou_exponent,
    integrability_report,
)
from .contour_quadrature import (
    Certificate,
    QuadratureSpec,
    double_line_integral,
    line_extension,
    line_integral,
    strip_tail,
    time_integral,
)
from .errors import IntegrabilityViolation, NegativePremium, NonPositivePrice, QuadratureDivergence, ValidationError
from .levy_pricer import PathHedgeResult, feedback_hedge
from .payoff_transforms import PayoffTransform, black_expectation

__all__ = ["BnsHedgeEngine"]

_DAMPING_CUTOFF = 40.0


class BnsHedgeEngine:
    """Pricing and hedging engine for one payoff in the BNS Gamma-OU model."""

    def __init__(self, params: BnsParams, p: float, payoff: PayoffTransform,
                 quad: QuadratureSpec = QuadratureSpec()):
        report = integrability_report(params, p)
        if not report.all_pass:
            raise IntegrabilityViolation(f"conditions fail: {', '.join(report.failing())}")
        self.params, self.p, self.payoff, self.quad = params, float(p), payoff, quad
        self.report = report
        self.co = AffineCoefficients(params, p)
        self.eta_hat = params.mu / self.p

    # -- affine exponents ----------------------------------------------------
    def _B(self, z):
        z = np.asarray(z, dtype=complex)
        return (1.0 - z) * z / (2.0 * self.params.lam)

    def _decay(self, t):
        return math.expm1(-self.params.lam * (self.params.T - t))

    def psi1(self, t, z):
        """``Psi1(t, z) = (1 - z) z (e^{-lam (T - t)} - 1) / (2 lam)``."""
        return self._B(z) * self._decay(t)

    def psi0(self, t, z):
        """``int_t^T psi_Z(alpha1(s) + Psi1(s, z)) - psi_Z(alpha1(s)) ds``."""
        P = self.params
        z = np.asarray(z, dtype=complex)
        if t >= P.T:
            return np.zeros(z.shape, dtype=complex)
        # alpha1(s) + Psi1(s, z) = (B - k1)(e^{-lam (T - s)} - 1), anchored at T
        arg = ExpAffineArg(self._B(z) - self.co.k1, 0.0, 0.0, P.T, P.lam)
        return exp_affine_integral(P, arg, t, P.T) - self.co.alpha0(t)

    def psi01(self, t, z):
        return self.psi0(t, z), self.psi1(t, z)

    def a_tilde(self, s_minus):
        s = np.asarray(s_minus, dtype=float)
        if np.any(~(s > 0)):
            raise NonPositivePrice("price must be positive")
        return -self.eta_hat / s

    # -- mean value and hedge --------------------------------------------------
    def _tau(self, t):
        T = self.params.T
        if not (-1e-14 <= t <= T + 1e-14):
            raise ValidationError(f"time {t} outside [0, {T}]")
        return max(T - float(t), 0.0)

    def _control(self, t, y):
        """Lognormal part ``exp(Psi1 y + D)``: ``(A, D)`` with ``Psi1 y = A (z^2 - z)``."""
        tau = self._tau(t)
        A = -math.expm1(-self.params.lam * tau) * y / (2.0 * self.params.lam)
        D = -self.params.lam * self.params.ou_a * tau - self.co.alpha0(min(t, self.params.T))
        return A, D

    def uses_control(self, t, y) -> bool:
        A, _ = self._control(t, np.min(y))
        return bool(self.payoff.legs) and A * self.quad.M**2 < _DAMPING_CUTOFF

    def evaluate(self, t, s, y, with_certificate=False):
        """``(V, xi)`` at time ``t`` for prices ``s`` and variances ``y``."""
        t = float(t)
        self._tau(t)
        scalar = np.ndim(s) == 0 and np.ndim(y) == 0
        s_arr, y_arr = np.broadcast_arrays(np.atleast_1d(np.asarray(s, dtype=float)),
                                           np.atleast_1d(np.asarray(y, dtype=float)))
        if np.any(~(s_arr > 0)):
            raise NonPositivePrice("price must be positive")
        if np.any(~(y_arr > 0)):
            raise ValidationError("variance must be positive")
        V = np.zeros(s_arr.shape)
        X = np.zeros(s_arr.shape)
        for z0, w0 in self.payoff.atoms:
            z0, w0 = complex(z0), complex(w0)
            p0, p1 = self.psi01(t, z0)
            g = np.exp(complex(p0) + complex(p1) * y_arr)
            V += (w0 * s_arr**z0 * g).real
            X += (w0 * z0 * s_arr ** (z0 - 1) * g).real
        cert = None
        tr = self.payoff
        if tr.has_kernel and tr.legs and self._tau(t) == 0.0:
            # at the horizon the value is the payoff and the hedge ratio is undefined
            V += tr.payoff(s_arr) - sum((complex(w) * s_arr ** complex(z)).real for z, w in tr.atoms)
            X[:] = np.nan
        elif tr.has_kernel:
            control = self.uses_control(t, y_arr)
            A, D = self._control(t, y_arr)
            logs = np.log(s_arr)
            cache = {}

            def integrand(z):
                key = (z.size, float(z[-1].imag))
                if key not in cache:
                    cache[key] = self.psi01(t, z)
                P0, P1 = cache[key]
                expo = np.outer(P1, y_arr) + np.outer(z, logs)
                if control:
                    grow = np.exp(expo) * (np.exp(P0) - np.exp(D))[:, None]
                else:
                    grow = np.exp(expo + P0[:, None])
                lz = tr.kernel(z)[:, None]
                out = np.empty((z.size, 2, s_arr.size), dtype=complex)
                out[:, 0, :] = grow * lz
                out[:, 1, :] = grow * lz * z[:, None] / s_arr[None, :]
                return out

            tail = self._extension(integrand, t, A, s_arr) if control else None
            val, cert = line_integral(integrand, tr.R, self.quad, tail=tail)
            imag = float(np.max(np.abs(val.imag)))
            cert.imag_residual = imag
            if imag > 1e-10 * (1.0 + float(np.max(np.abs(val.real)))):
                raise QuadratureDivergence(f"imaginary residual {imag:.3e} in mean value")
            V += val[0].real
            X += val[1].real
            if control:
                price, delta = black_expectation(tr, s_arr, -A, 2 * A)
                V += math.exp(D) * price
                X += math.exp(D) * delta
        if scalar:
            V, X = float(V[0]), float(X[0])
        return (V, X, cert) if with_certificate else (V, X)

    def _extension(self, integrand, t, A, s_arr):
        """Line beyond the default truncation for short maturities.

        After the lognormal part is removed, the jump residual still decays
        only like ``|z|^-2`` until either the Gaussian factor ``exp(-A y^2)``
        or the saturation of the Gamma-OU exponent sets in, so the line is
        extended to the nearer of those two scales.
        """
        tau = self._tau(t)
        if tau <= 0:
            return None
        b = self.params.ou_b
        far = min(math.sqrt(_DAMPING_CUTOFF / max(float(np.min(A)), 1e-300)), math.sqrt(400.0 * b / tau))
        if far <= self.quad.M:
            return None
        logs = np.log(s_arr)
        spread = max(float(np.max(np.abs(logs - math.log(K)))) for _, _, K in self.payoff.legs)
        h = min(1.0, math.pi / (4.0 * max(spread, 1e-12)))
        R = self.payoff.R
        return lambda M: line_extension(integrand, R, M, max(far, 2 * M), h)

    def mean_value(self, t, s, y, with_certificate=False):
        V, _, cert = self.evaluate(t, s, y, with_certificate=True)
        return (V, cert) if with_certificate else V

    def xi(self, t, s_minus, y_minus, with_certificate=False):
        _, X, cert = self.evaluate(t, s_minus, y_minus, with_certificate=True)
        return (X, cert) if with_certificate else X

    def marginal_price(self, with_certificate=False):
        P = self.params
        return self.mean_value(0.0, P.S0, P.y0, with_certificate)

    def initial_hedge(self, S0: Optional[float] = None) -> float:
        P = self.params
        return self.xi(0.0, P.S0 if S0 is None else S0, P.y0)

    def hedge_paths(self, times, S, y) -> PathHedgeResult:
        times = np.asarray(times, dtype=float)
        if abs(times[0]) > 1e-12 or abs(times[-1] - self.params.T) > 1e-9:
            raise ValidationError("time grid must run from 0 to the horizon")
        price = self.marginal_price()
        return feedback_hedge(times, S, price,
                              lambda i, s, yy: self.evaluate(times[i], s, yy),
                              self.a_tilde, self.payoff.payoff, y=y)

    def hedge_along_path(self, times, S, y) -> PathHedgeResult:
        res = self.hedge_paths(times, np.asarray(S, dtype=float)[None, :], np.asarray(y, dtype=float)[None, :])
        for name in ("S", "V", "xi", "phi", "gain", "payoff", "y"):
            setattr(res, name, getattr(res, name)[0])
        return res

    # -- risk premium ----------------------------------------------------------
    def premium_factor(self, v: float) -> float:
        """``p C1 / (2 v C0)`` from the opportunity-process coefficients at time zero."""
        if not v > 0:
            raise ValidationError("initial endowment must be positive")
        co, y0 = self.co, self.params.y0
        expo = co.alpha0_euro(0.0) - co.alpha0(0.0) + (co.alpha1_euro(0.0) - co.alpha1(0.0)) * y0
        return self.p / (2.0 * v) * math.exp(expo)

    def _psiZ_euro(self, t, u):
        shift = float(self.co.alpha1_euro(t))
        return gamma_ou_exponent(self.params, u + shift) - gamma_ou_exponent(self.params, shift)

    def premium_integrand(self, t, z1, z2, psi0_1=None, psi0_2=None):
        """``J(t, z1, z2)`` for broadcastable ``z1``, ``z2``."""
        P, co = self.params, self.co
        lam = P.lam
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        if psi0_1 is None:
            psi0_1 = self.psi0(t, z1)
        if psi0_2 is None:
            psi0_2 = self.psi0(t, z2)
        u1, u2 = self.psi1(t, z1), self.psi1(t, z2)
        a1d = float(co.alpha1_dollar(t))
        pz = self._psiZ_euro
        j = pz(t, a1d + u1 + u2) + pz(t, a1d) - pz(t, a1d + u1) - pz(t, a1d + u2)
        w = z1 + z2
        g = (2 * P.mu + self.p) / (2 * self.p) * w - 0.5 * w * w
        A = a1d + u1 + u2
        e = math.exp(-lam * t)
        ups1 = A * e + g * (e - 1.0) / lam
        # Upsilon1(r) + alpha1_euro(r) on [0, t], anchored at t
        E = co.k1_euro
        arg = ExpAffineArg(0.0, A + g / lam - E * math.exp(-lam * (P.T - t)), E - g / lam, t, lam)
        ups0 = exp_affine_integral(P, arg, 0.0, t) - (co.alpha0_euro(0.0) - co.alpha0_euro(t))
        rest = float(co.alpha0_dollar(t)) + psi0_1 + psi0_2
        return np.exp(w * math.log(P.S0) + ups0 + ups1 * P.y0 + rest) * j

    def _double_at(self, t):
        tr, R = self.payoff, self.payoff.R
        if t >= self.params.T:
            return 0.0, None
        cache = {}

        def psi0_line(y):
            key = (y.size, float(y[0]), float(y[-1]))
            if key not in cache:
                cache[key] = self.psi0(t, R + 1j * y)
            return cache[key]

        def integrand(z1, z2):
            y1, y2 = np.imag(z1).ravel(), np.imag(z2).ravel()
            J = self.premium_integrand(t, z1, z2, psi0_line(y1)[:, None], psi0_line(y2)[None, :])
            return J * tr.kernel(z1) * tr.kernel(z2)

        def pointwise(z1, z2):
            return self.premium_integrand(t, z1, z2) * tr.kernel(z1) * tr.kernel(z2)

        return double_line_integral(integrand, R, R, self.quad, hermitian=True,
                                    tail=lambda M: strip_tail(pointwise, R, R, M))

    def squared_error(self, with_certificate=False):
        """Time integral of the double line integral: the minimal expected
        squared hedging error under the tilted measure."""
        tr = self.payoff
        atoms = [(complex(z), complex(w)) for z, w in tr.atoms]
        inner = []

        def f(t):
            total = 0.0
            for z1, a1 in atoms:
                for z2, a2 in atoms:
                    total += (a1 * a2 * self.premium_integrand(t, z1, z2)).real
            if tr.has_kernel:
                val, cert = self._double_at(t)
                total += float(np.real(val))
                if cert is not None:
                    inner.append(cert)
                for z0, a0 in atoms:
                    def cross(z, z0=z0, a0=a0):
                        return 2.0 * a0 * self.premium_integrand(t, z, np.full_like(z, z0)) * tr.kernel(z)
                    cval, _ = line_integral(cross, tr.R, self.quad)
                    total += cval.real
            return total

        value, tcert = time_integral(f, self.params.T, self.quad)
        value = float(np.real(value))
        err = tcert.error_estimate + self.params.T * max((c.error_estimate for c in inner), default=0.0)
        tail = self.params.T * max((c.tail_bound for c in inner), default=0.0)
        cert = Certificate(value, err, tail, self.quad.M, max((c.n for c in inner), default=0),
                           tcert.converged and all(c.converged for c in inner),
                           tcert.refinements, history=tcert.history)
        return (value, cert) if with_certificate else value

    def risk_premium(self, v: float, with_certificate=False):
        err2, cert = self.squared_error(with_certificate=True)
        value = self.premium_factor(v) * err2
        if value < -1e-10:
            raise NegativePremium(f"risk premium {value:.3e} is negative")
        return (value, cert) if with_certificate else value
