"""Monte Carlo oracles: path simulation under the physical and the tilted
measure, reweighting to the marginal pricing measure, hedging errors along
simulated paths and a grid search for the optimal fraction.

Every path draws from its own Philox stream keyed by ``(seed, path_id)``, so a
path does not depend on how the batch is split across threads.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bns_models import AffineCoefficients, BnsParams, integrability_report
from .errors import (
    EnvelopeOverflow,
    GridMismatch,
    IntegrabilityViolation,
    MissingWeights,
    ThinningBoundViolation,
    ValidationError,
)
from .levy_models import ExpLevyModel, InvestmentSolution, g_objective, tilted_exponent

__all__ = [
    "PathSet",
    "McEstimate",
    "path_rng",
    "simulate_levy",
    "simulate_bns",
    "hedging_error",
    "q0_price",
    "brute_force_eta",
]

MEASURES = ("P", "P_euro")


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream for one path."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path_id)])))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("UTILHEDGE_THREADS", "1")))
    except ValueError:
        return 1


def _run_paths(one_path, n_paths: int, seed: int):
    """Apply ``one_path(rng)`` to every path id and stack the outputs."""
    def block(ids):
        return [one_path(path_rng(seed, k)) for k in ids]

    ids = range(n_paths)
    threads = min(_threads(), max(1, n_paths))
    if threads == 1:
        rows = block(ids)
    else:
        chunks = [ids[k::threads] for k in range(threads)]
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(block, chunks))
        rows = [None] * n_paths
        for k, part in enumerate(parts):
            rows[k::threads] = part
    return [np.array(col) for col in zip(*rows)]


@dataclass
class McEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_steps: int

    @classmethod
    def from_samples(cls, x, n_steps: int = 0) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        return cls(float(np.mean(x)), se, n, n_steps)

    def zscore(self, target: float) -> float:
        return abs(self.mean - target) / self.stderr if self.stderr > 0 else (
            0.0 if self.mean == target else math.inf)

    def agrees(self, target: float, k: float = 3.0, rel: float = 0.0) -> bool:
        """``|mean - target| <= k * stderr + rel * |target|``."""
        return abs(self.mean - target) <= k * self.stderr + rel * abs(target)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths, "n_steps": self.n_steps}


@dataclass
class PathSet:
    """Simulated price (and variance) paths on a uniform grid.

    ``weights`` are the reweighting factors to the marginal pricing measure,
    present only when requested on physical-measure paths.
    """

    measure: str
    times: np.ndarray
    S: np.ndarray
    y: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValidationError(f"measure must be one of {MEASURES}")
        if np.any(~(self.S > 0)):
            raise ValidationError("simulated prices must be positive")
        if self.y is not None and np.any(~(self.y > 0)):
            raise ValidationError("simulated variances must be positive")

    @property
    def n_paths(self) -> int:
        return self.S.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        """One row per path and grid point: ``path_id, t, S, y, weight``.

        Variance and weight columns are empty when absent; the weight is the
        terminal reweighting factor repeated on every row of its path.
        """
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["path_id", "t", "S", "y", "weight"])
            for k in range(self.n_paths):
                w = "" if self.weights is None else repr(float(self.weights[k]))
                for i, t in enumerate(self.times):
                    yv = "" if self.y is None else repr(float(self.y[k, i]))
                    out.writerow([k, repr(float(t)), repr(float(self.S[k, i])), yv, w])


def _grid(T: float, n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ValidationError("need at least one time step")
    if not T > 0:
        raise ValidationError("horizon must be positive")
    return np.linspace(0.0, T, n_steps + 1)


def _check_run(measure, n_paths):
    if measure not in MEASURES:
        raise ValidationError(f"measure must be one of {MEASURES}")
    if n_paths < 1:
        raise ValidationError("need at least one path")


# --------------------------------------------------------------------------- #
# Exponential Levy paths
# --------------------------------------------------------------------------- #

def _levy_envelope(model: ExpLevyModel, p: float, eta: float) -> float:
    """``sup (1 + eta x)^(-1-p)`` over the jump support of the return process."""
    down, _ = model.jumps.support_signs()
    if down and eta > 0:
        if eta >= 1.0:
            raise EnvelopeOverflow("fraction at the cone edge: tilted jump density is unbounded")
        env = math.exp((-1.0 - p) * math.log1p(-eta))
        if not math.isfinite(env) or env > 1e12:
            raise EnvelopeOverflow(f"rejection envelope {env:.3e} too large")
        return env
    return 1.0


def simulate_levy(model: ExpLevyModel, p: float, sol: InvestmentSolution, measure: str,
                  n_paths: int, n_steps: int, seed: int, with_weights: bool = False) -> PathSet:
    """Exact-in-law paths of ``S = S0 E(X)`` on a uniform grid.

    Under ``P_euro`` the jump law is ``(1 + eta x)^(-1-p) F(dx)``: jumps are
    proposed from ``F`` at the intensity inflated by the envelope and accepted
    with probability ``(1 + eta x)^(-1-p) / envelope``.
    """
    _check_run(measure, n_paths)
    times = _grid(model.T, n_steps)
    T, dt, c = model.T, model.T / n_steps, model.sigma2
    eta = float(sol.eta_hat)
    jumps = model.jumps
    tilted = measure == "P_euro"
    if tilted:
        te = tilted_exponent(model, float(p), eta)
        drift = te.b_euro - 0.5 * c - te.m1
    else:
        mean_jump = 0.0 if jumps is None else jumps.intensity * (float(jumps.mgf(1.0)) - 1.0)
        drift = model.drift_b - 0.5 * c - mean_jump
    env = _levy_envelope(model, p, eta) if (tilted and jumps is not None) else 1.0
    rate = 0.0 if jumps is None else jumps.intensity * env
    if with_weights:
        if tilted:
            raise ValidationError("reweighting factors are defined on physical-measure paths")
        if not sol.interior:
            raise ValidationError("reweighting needs an interior optimal fraction")
        mean_jump = 0.0 if jumps is None else jumps.intensity * (float(jumps.mgf(1.0)) - 1.0)
        x_drift = model.drift_b - mean_jump
    sd = math.sqrt(c * dt)

    def one_path(rng):
        z = rng.standard_normal(n_steps)
        incr = drift * dt + sd * z
        log_tilt = 0.0
        if rate > 0:
            n = rng.poisson(rate * T)
            when = rng.uniform(0.0, T, n)
            u = jumps.sample(rng, n)
            if tilted:
                keep = rng.random(n) * env < np.exp((-1.0 - p) * np.log1p(eta * np.expm1(u)))
                when, u = when[keep], u[keep]
            idx = np.minimum((when / dt).astype(np.int64), n_steps - 1)
            incr = incr + np.bincount(idx, weights=u, minlength=n_steps)
            if with_weights:
                log_tilt = float(np.sum(np.log1p(eta * np.expm1(u))))
        logS = np.concatenate(([0.0], np.cumsum(incr)))
        out = model.S0 * np.exp(logS)
        if not with_weights:
            return (out,)
        log_se = eta * x_drift * T + eta * sd * float(np.sum(z)) - 0.5 * eta * eta * c * T + log_tilt
        return out, -sol.a * T - p * log_se

    cols = _run_paths(one_path, n_paths, seed)
    weights = np.exp(cols[1]) if with_weights else None
    return PathSet(measure, times, cols[0], None, weights, seed)


# --------------------------------------------------------------------------- #
# BNS paths
# --------------------------------------------------------------------------- #

def simulate_bns(params: BnsParams, p: float, measure: str, n_paths: int, n_steps: int,
                 seed: int, with_weights: bool = False) -> PathSet:
    """Paths of the BNS model with a Gamma-OU variance.

    The variance is exact: jumps of the driver arrive as a (thinned) Poisson
    process, decay exponentially and integrate in closed form over each step.
    Given the variance path the log-price increment over a step is Gaussian
    with mean ``(drift - 1/2) IV`` and variance ``IV``, which is exact in law.
    """
    _check_run(measure, n_paths)
    report = integrability_report(params, p)
    if not report.all_pass:
        raise IntegrabilityViolation(f"conditions fail: {', '.join(report.failing())}")
    co = AffineCoefficients(params, p, check=False)
    times = _grid(params.T, n_steps)
    T, dt, lam = params.T, params.T / n_steps, params.lam
    a, b = params.ou_a, params.ou_b
    tilted = measure == "P_euro"
    eta = params.mu / p
    drift = -eta if tilted else params.mu

    if tilted:
        def size_rate(t):
            return b - co.alpha1_euro(t)

        probe = size_rate(np.linspace(0.0, T, 1025))
        if np.min(probe) <= 0:
            raise ThinningBoundViolation("tilted jump law is not integrable")
        bound = lam * a * b / np.min(probe) * (1.0 + 1e-9)
    else:
        bound = lam * a

    if with_weights:
        if tilted:
            raise ValidationError("reweighting factors are defined on physical-measure paths")
        log_w0 = -co.alpha0(0.0) - co.alpha1(0.0) * params.y0

    decay = np.exp(-lam * times)
    step_fill = -math.expm1(-lam * dt) / lam

    def one_path(rng):
        n = rng.poisson(bound * T)
        when = np.sort(rng.uniform(0.0, T, n))
        if tilted:
            rates = size_rate(when)
            intensity = lam * a * b / rates
            if np.any(intensity > bound):
                raise ThinningBoundViolation("jump intensity exceeds the thinning bound")
            keep = rng.random(n) * bound < intensity
            when = when[keep]
            sizes = rng.standard_exponential(when.size) / rates[keep]
        else:
            sizes = rng.standard_exponential(n) / b
        y = params.y0 * decay
        partial = np.zeros(n_steps)
        for tau, J in zip(when, sizes):
            j = min(int(np.searchsorted(times, tau, side="right")) - 1, n_steps - 1)
            y[j + 1:] += J * np.exp(-lam * (times[j + 1:] - tau))
            partial[j] += J * (-math.expm1(-lam * (times[j + 1] - tau))) / lam
        # a jump inside step j only reaches y from t_{j+1} on
        iv = y[:-1] * step_fill + partial
        z = rng.standard_normal(n_steps)
        dx = drift * iv + np.sqrt(iv) * z
        logS = np.concatenate(([0.0], np.cumsum(dx - 0.5 * iv)))
        out = params.S0 * np.exp(logS)
        if not with_weights:
            return out, y
        X_T, qv = float(np.sum(dx)), float(np.sum(iv))
        return out, y, log_w0 - p * (eta * X_T - 0.5 * eta * eta * qv)

    cols = _run_paths(one_path, n_paths, seed)
    weights = np.exp(cols[2]) if with_weights else None
    return PathSet(measure, times, cols[0], cols[1], weights, seed)


# --------------------------------------------------------------------------- #
# Oracles
# --------------------------------------------------------------------------- #

def _horizon(engine) -> float:
    return float(engine.params.T if hasattr(engine, "params") else engine.model.T)


def hedging_error(engine, paths: PathSet, chunk: int = 20000) -> McEstimate:
    """Mean squared terminal error ``(pi0 + G_T - H)^2`` of the feedback hedge.

    The recursion is the one in :func:`feedback_hedge`, run step by step over
    all paths without storing the intermediate surfaces.  Levy engines
    evaluate each time slice through a spline in log price.
    """
    if paths.measure != "P_euro":
        raise GridMismatch("hedging errors are measured on tilted-measure paths")
    if abs(paths.horizon - _horizon(engine)) > 1e-9 * max(1.0, paths.horizon):
        raise GridMismatch("path grid does not end at the engine horizon")
    dts = np.diff(paths.times)
    if np.any(dts <= 0) or np.max(np.abs(dts - dts[0])) > 1e-9 * dts[0]:
        raise GridMismatch("path grid must be uniform")
    bns = hasattr(engine, "params")
    if bns and paths.y is None:
        raise GridMismatch("BNS hedging needs variance paths")
    price = float(engine.marginal_price())
    S = paths.S
    G = np.zeros(paths.n_paths)
    for i in range(paths.n_steps):
        t = float(paths.times[i])
        s = S[:, i]
        if bns:
            V = np.empty_like(s)
            X = np.empty_like(s)
            for k in range(0, s.size, chunk):
                V[k:k + chunk], X[k:k + chunk] = engine.evaluate(t, s[k:k + chunk], paths.y[k:k + chunk, i])
        else:
            V, X = engine.surface(t, s)
        phi = X - (price + G - V) * engine.a_tilde(s)
        G = G + phi * (S[:, i + 1] - s)
    err = price + G - engine.payoff.payoff(S[:, -1])
    return McEstimate.from_samples(err**2, paths.n_steps)


def q0_price(payoff, paths: PathSet) -> McEstimate:
    """Weighted mean of ``H = f(S_T)`` on reweighted physical paths.

    ``payoff`` is a callable on terminal prices or anything with a
    ``payoff`` method (a transform or an engine's transform).
    """
    if paths.weights is None:
        raise MissingWeights("path set carries no reweighting factors")
    if hasattr(payoff, "payoff") and hasattr(payoff.payoff, "payoff"):
        fn = payoff.payoff.payoff
    elif hasattr(payoff, "payoff"):
        fn = payoff.payoff
    else:
        fn = payoff
    H = np.asarray(fn(paths.S[:, -1]), dtype=float)
    return McEstimate.from_samples(paths.weights * H, paths.n_steps)


def brute_force_eta(model: ExpLevyModel, p: float, grid_step: float = 1e-4) -> float:
    """Grid argmax of the investment objective over the interior of the cone.

    An unbounded side of the cone starts at distance one and is doubled while
    the argmax sits on that edge.
    """
    if not grid_step > 0:
        raise ValidationError("grid step must be positive")
    lo, hi = model.cone()
    reach_lo = -1.0 if not math.isfinite(lo) else None
    reach_hi = 1.0 if not math.isfinite(hi) else None
    while True:
        a = lo + grid_step if reach_lo is None else reach_lo
        b = hi - grid_step if reach_hi is None else reach_hi
        grid = np.arange(a, b + 0.5 * grid_step, grid_step)
        with np.errstate(all="ignore"):
            vals = np.asarray(g_objective(model, p, grid), dtype=float)
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        k = int(np.argmax(vals))
        if reach_lo is not None and k == 0:
            reach_lo *= 2.0
        elif reach_hi is not None and k == grid.size - 1:
            reach_hi *= 2.0
        else:
            return float(grid[k])
