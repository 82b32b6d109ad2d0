"""Marginal price, hedge and risk premium for exponential Levy models.

Everything is driven by the exponent ``psi`` of the log price under the
tilted measure.  With ``var = psi(2) - 2 psi(1)`` and the hedge weight
``w(z) = (psi(z+1) - psi(z) - psi(1)) / var`` the mean value process is
``V_t = int S_t^z exp(Psi(z)(T-t)) l(z) dz`` with
``Psi(z) = psi(z) - psi(1) w(z)``, and the pure hedge replaces ``S^z`` by
``S^(z-1) w(z)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .contour_quadrature import QuadratureSpec, double_line_integral, line_integral, strip_tail
from .errors import (
    NegativePremium,
    NonPositivePrice,
    QuadratureDivergence,
    ValidationError,
)
from .levy_models import ExpLevyModel, InvestmentSolution, solve_investment, tilted_exponent
from .payoff_transforms import PayoffTransform, black_expectation

__all__ = ["LevyHedgeEngine", "PathHedgeResult", "feedback_hedge"]

# A Gaussian factor exp(-A tau y^2) below exp(-40) at the truncation height
# makes the plain line integral trustworthy; otherwise the lognormal part is
# taken out in closed form.
_DAMPING_CUTOFF = 40.0


@dataclass
class PathHedgeResult:
    """Discretised hedge along one path (or a batch, with a leading path axis).

    ``V`` and ``xi`` are evaluated at the left end of each step; ``V`` carries
    one extra entry holding the payoff at maturity.  ``phi[i]`` is held over
    ``(t_i, t_{i+1}]`` and ``gain[i]`` is the accumulated trading gain at
    ``t_i``.
    """

    times: np.ndarray
    S: np.ndarray
    V: np.ndarray
    xi: np.ndarray
    phi: np.ndarray
    gain: np.ndarray
    price: float
    payoff: np.ndarray
    y: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def terminal_error(self):
        """``pi0 + G_T - H`` per path."""
        return self.price + self.gain[..., -1] - self.payoff


def feedback_hedge(times, S, price, surface: Callable, a_tilde: Callable, payoff: Callable, y=None):
    """Run the feedback recursion on a batch of paths.

    ``surface(i, S_left, y_left)`` returns ``(V, xi)`` at ``times[i]``; the
    position for step ``i -> i+1`` uses only left-point information:
    ``phi = xi - (price + G - V) * a_tilde(S_left)``.
    """
    times = np.asarray(times, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if np.any(~(S > 0)):
        raise NonPositivePrice("price path must stay strictly positive")
    if S.shape[1] != times.size:
        raise ValidationError("path length does not match the time grid")
    if y is not None:
        y = np.atleast_2d(np.asarray(y, dtype=float))
    n_paths, n_pts = S.shape
    V = np.empty((n_paths, n_pts))
    xi = np.empty((n_paths, n_pts - 1))
    phi = np.empty((n_paths, n_pts - 1))
    G = np.zeros((n_paths, n_pts))
    for i in range(n_pts - 1):
        s_left = S[:, i]
        v, x = surface(i, s_left, None if y is None else y[:, i])
        V[:, i], xi[:, i] = v, x
        phi[:, i] = x - (price + G[:, i] - v) * a_tilde(s_left)
        G[:, i + 1] = G[:, i] + phi[:, i] * (S[:, i + 1] - s_left)
    H = payoff(S[:, -1])
    V[:, -1] = H
    return PathHedgeResult(times, S, V, xi, phi, G, float(price), H, y)


def _premium_kernel(k, psi_sum, T):
    """``(e^{kT} - e^{psi_sum T}) / (k - psi_sum)`` without overflow, with its
    limit ``T e^{psi_sum T}`` when the two exponents meet."""
    d = k - psi_sum
    small = np.abs(d * T) < 1e-9
    safe = np.where(small, 1.0, d)
    up = np.real(d) > 0
    with np.errstate(over="ignore", invalid="ignore"):
        lead = np.exp(np.where(up, k, psi_sum) * T)
        frac = np.where(up, -np.expm1(-d * T), np.expm1(d * T)) / safe
        bridge = T * np.exp(psi_sum * T) * (1.0 + 0.5 * d * T)
    out = np.where(small, bridge, lead * frac)
    return np.where(np.isfinite(out), out, 0.0)


class LevyHedgeEngine:
    """Pricing and hedging engine for one payoff in one exponential Levy model."""

    def __init__(self, model: ExpLevyModel, p: float, payoff: PayoffTransform,
                 quad: QuadratureSpec = QuadratureSpec(), solution: Optional[InvestmentSolution] = None):
        self.model, self.p, self.payoff, self.quad = model, float(p), payoff, quad
        self.sol = solution if solution is not None else solve_investment(model, p)
        self.sol.require_interior()
        self.psi = tilted_exponent(model, self.p, float(self.sol.eta_hat))
        self.psi1 = float(np.real(self.psi(1.0)))
        self.var = float(np.real(self.psi(2.0))) - 2.0 * self.psi1
        if not self.var > 0:
            raise ValidationError("tilted log-price variance rate must be positive")
        self.ratio = self.psi1 / self.var
        if payoff.has_kernel:
            lo, hi = self.psi.strip()
            R = payoff.R
            if not (lo < R and R + 1 < hi):
                raise ValidationError(f"abscissa {R} leaves the strip where S_T^R is integrable")
        # quadratic part of Psi: A z^2 + B z + D
        c = model.sigma2
        alpha = 0.5 * c
        beta = self.psi.b_euro - 0.5 * c - self.psi.m1
        self._w_lin = (2 * alpha / self.var, (alpha + beta - self.psi1) / self.var)
        self._quad_coef = (alpha, beta - 2 * self.ratio * alpha,
                           -self.psi.kappa - self.ratio * (alpha + beta - self.psi1))
        self._line_cache = {}

    # -- exponents ----------------------------------------------------------
    def weight(self, z):
        """Hedge weight ``(psi(z+1) - psi(z) - psi(1)) / var``."""
        z = np.asarray(z, dtype=complex)
        return (self.psi(z + 1) - self.psi(z) - self.psi1) / self.var

    def capital_psi(self, z):
        z = np.asarray(z, dtype=complex)
        out = self.psi(z) - self.psi1 * self.weight(z)
        return out if np.ndim(out) else complex(out)

    def a_tilde(self, s_minus):
        s = np.asarray(s_minus, dtype=float)
        if np.any(~(s > 0)):
            raise NonPositivePrice("price must be positive")
        return self.ratio / s

    def _on_line(self, R, y):
        key = (R, y.size, float(y[0]), float(y[-1]))
        if key not in self._line_cache:
            pz = self.psi.on_line(R, y)
            pz1 = self.psi.on_line(R + 1.0, y)
            w = (pz1 - pz - self.psi1) / self.var
            self._line_cache[key] = (pz - self.psi1 * w, w)
        return self._line_cache[key]

    def _quadratic(self, z):
        A, B, D = self._quad_coef
        return A * z * z + B * z + D

    # -- mean value and hedge ------------------------------------------------
    def _tau(self, t):
        T = self.model.T
        if not (-1e-14 <= t <= T + 1e-14):
            raise ValidationError(f"time {t} outside [0, {T}]")
        return max(T - float(t), 0.0)

    def uses_control(self, t) -> bool:
        """Whether the lognormal part is split off at time ``t``."""
        tau = self._tau(t)
        A = self._quad_coef[0]
        return bool(self.payoff.legs) and A * tau * self.quad.M**2 < _DAMPING_CUTOFF

    def evaluate(self, t, s, with_certificate=False):
        """``(V, xi)`` at time ``t`` for prices ``s`` (scalar or array)."""
        tau = self._tau(t)
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(~(s_arr > 0)):
            raise NonPositivePrice("price must be positive")
        V = np.zeros(s_arr.shape)
        X = np.zeros(s_arr.shape)
        for z0, w0 in self.payoff.atoms:
            z0, w0 = complex(z0), complex(w0)
            growth = np.exp(self.capital_psi(z0) * tau)
            V += (w0 * s_arr**z0 * growth).real
            X += (w0 * s_arr ** (z0 - 1) * self.weight(z0) * growth).real
        cert = None
        tr = self.payoff
        if tr.has_kernel and tr.legs and tau == 0.0:
            # at the horizon the value is the payoff and the hedge ratio is undefined
            V += tr.payoff(s_arr) - sum((complex(w) * s_arr ** complex(z)).real for z, w in tr.atoms)
            X[:] = np.nan
        elif tr.has_kernel:
            control = self.uses_control(t)
            logs = np.log(s_arr)
            R = tr.R

            def integrand(z):
                Psi, w = self._on_line(R, np.imag(z))
                grow = np.exp(Psi * tau)
                wv, wx = grow, w * grow
                if control:
                    q = np.exp(self._quadratic(z) * tau)
                    a1, a0 = self._w_lin
                    wv = grow - q
                    wx = w * grow - (a1 * z + a0) * q
                lz = tr.kernel(z)
                sz = np.exp(np.outer(z, logs))
                out = np.empty((z.size, 2, logs.size), dtype=complex)
                out[:, 0, :] = sz * (wv * lz)[:, None]
                out[:, 1, :] = sz / s_arr[None, :] * (wx * lz)[:, None]
                return out

            val, cert = line_integral(integrand, R, self.quad)
            imag = float(np.max(np.abs(val.imag)))
            cert.imag_residual = imag
            if imag > 1e-10 * (1.0 + float(np.max(np.abs(val.real)))):
                raise QuadratureDivergence(f"imaginary residual {imag:.3e} in mean value")
            V += val[0].real
            X += val[1].real
            if control:
                A, B, D = self._quad_coef
                a1, a0 = self._w_lin
                price, delta = black_expectation(tr, s_arr, B * tau, 2 * A * tau)
                scale = math.exp(D * tau)
                V += scale * price
                X += scale * (a1 * delta + a0 * price / s_arr)
        if np.ndim(s) == 0:
            V, X = float(V[0]), float(X[0])
        return (V, X, cert) if with_certificate else (V, X)

    def mean_value(self, t, s, with_certificate=False):
        V, _, cert = self.evaluate(t, s, with_certificate=True)
        return (V, cert) if with_certificate else V

    def xi(self, t, s_minus, with_certificate=False):
        _, X, cert = self.evaluate(t, s_minus, with_certificate=True)
        return (X, cert) if with_certificate else X

    def marginal_price(self, with_certificate=False):
        return self.mean_value(0.0, self.model.S0, with_certificate)

    def initial_hedge(self) -> float:
        """Position at time zero; the feedback term vanishes there."""
        return self.xi(0.0, self.model.S0)

    # -- hedging along paths ---------------------------------------------------
    def surface(self, t, s, grid_points: int = 4001):
        """``(V, xi)`` at many prices via a cubic spline in log price."""
        s = np.asarray(s, dtype=float)
        if s.size <= grid_points:
            return self.evaluate(t, s)
        lo, hi = np.log(np.min(s)), np.log(np.max(s))
        pad = 1e-3 + 1e-3 * (hi - lo)
        grid = np.exp(np.linspace(lo - pad, hi + pad, grid_points))
        V, X = self.evaluate(t, grid)
        lg = np.log(grid)
        return CubicSpline(lg, V)(np.log(s)), CubicSpline(lg, X)(np.log(s))

    def hedge_paths(self, times, S, grid_points: int = 4001) -> PathHedgeResult:
        """Feedback hedge on a batch of paths sampled on ``times``."""
        times = np.asarray(times, dtype=float)
        if abs(times[0]) > 1e-12 or abs(times[-1] - self.model.T) > 1e-9:
            raise ValidationError("time grid must run from 0 to the horizon")
        price = self.marginal_price()
        return feedback_hedge(times, S, price,
                              lambda i, s, _y: self.surface(times[i], s, grid_points),
                              self.a_tilde, self.payoff.payoff)

    def hedge_along_path(self, times, S) -> PathHedgeResult:
        res = self.hedge_paths(times, np.asarray(S, dtype=float)[None, :])
        for name in ("S", "V", "xi", "phi", "gain", "payoff"):
            setattr(res, name, getattr(res, name)[0])
        return res

    # -- risk premium --------------------------------------------------------
    def premium_factor(self, v: float) -> float:
        """``p exp((a_euro - a) T) / (2 v)``."""
        if not v > 0:
            raise ValidationError("initial endowment must be positive")
        return self.p * math.exp((self.sol.a_euro - self.sol.a) * self.model.T) / (2.0 * v)

    def _J(self, z1, z2, p1, p1s, p2, p2s, psi12):
        """Premium integrand without the kernels, from exponent values
        ``p = psi(z)``, ``ps = psi(z + 1)`` and ``psi12 = psi(z1 + z2)``."""
        w1 = (p1s - p1 - self.psi1) / self.var
        w2 = (p2s - p2 - self.psi1) / self.var
        k = p1 - self.psi1 * w1 + p2 - self.psi1 * w2 - self.psi1 * self.ratio
        j = psi12 - p1 - p2 - self.var * w1 * w2
        return np.exp((z1 + z2) * math.log(self.model.S0)) * j * _premium_kernel(k, psi12, self.model.T)

    def _strip_integrand(self, z1, z2):
        return self._J_direct(z1, z2) * self.payoff.kernel(z1) * self.payoff.kernel(z2)

    def _J_direct(self, z1, z2):
        z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=complex), np.asarray(z2, dtype=complex))
        ps = self.psi
        return self._J(z1, z2, ps(z1), ps(z1 + 1), ps(z2), ps(z2 + 1), ps(z1 + z2))

    def squared_error(self, with_certificate=False):
        """Minimal expected squared hedging error under the tilted measure."""
        tr = self.payoff
        total = 0.0
        atoms = [(complex(z), complex(w)) for z, w in tr.atoms]
        for z1, a1 in atoms:
            for z2, a2 in atoms:
                total += (a1 * a2 * self._J_direct(z1, z2)).real
        cert = None
        if tr.has_kernel:
            R = tr.R
            lo, hi = self.psi.strip()
            if not (lo < 2 * R < hi):
                raise ValidationError("twice the abscissa leaves the integrability strip")

            def integrand(z1, z2):
                y1, y2 = np.imag(z1).ravel(), np.imag(z2).ravel()
                on = self.psi.on_line
                psi12 = on(2 * R, y1[:, None] + y2[None, :])
                f = self._J(z1, z2, on(R, y1)[:, None], on(R + 1, y1)[:, None],
                            on(R, y2)[None, :], on(R + 1, y2)[None, :], psi12)
                return f * tr.kernel(z1) * tr.kernel(z2)

            val, cert = double_line_integral(integrand, R, R, self.quad, hermitian=True,
                                             tail=lambda M: strip_tail(self._strip_integrand, R, R, M))
            total += val.real
            for z0, a0 in atoms:
                def cross(z, z0=z0, a0=a0):
                    return 2.0 * a0 * self._J_direct(z, np.full_like(z, z0)) * tr.kernel(z)

                cval, _ = line_integral(cross, R, self.quad)
                total += cval.real
        return (float(total), cert) if with_certificate else float(total)

    def risk_premium(self, v: float, with_certificate=False):
        err2, cert = self.squared_error(with_certificate=True)
        value = self.premium_factor(v) * err2
        if value < -1e-10:
            raise NegativePremium(f"risk premium {value:.3e} is negative")
        return (value, cert) if with_certificate else value
