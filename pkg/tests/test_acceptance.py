"""Acceptance checks, one per criterion.

Each check returns ``(passed, detail)``; the tests print one PASS/FAIL line
each and then assert.  Run this file directly to get just the summary lines.
"""
import csv
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from conftest import bns_params, brownian_model, kou_model, merton_model
from utilhedge.bns_models import ExpAffineArg, exp_affine_integral, gamma_ou_exponent
from utilhedge.bns_pricer import BnsHedgeEngine
from utilhedge.cli import load_config, run_command
from utilhedge.levy_models import ExpLevyModel, KouJumps, MertonJumps, drift_for_fraction, solve_investment
from utilhedge.levy_pricer import LevyHedgeEngine
from utilhedge.mc_verifier import brute_force_eta, hedging_error, q0_price, simulate_bns, simulate_levy
from utilhedge.payoff_transforms import call_transform, put_transform


def _bs_call(S0, K, var):
    d1 = (math.log(S0 / K) + 0.5 * var) / math.sqrt(var)
    return S0 * norm.cdf(d1) - K * norm.cdf(d1 - math.sqrt(var)), norm.cdf(d1)


def check_complete_market():
    start = time.perf_counter()
    eng = LevyHedgeEngine(brownian_model(), 2.0, call_transform(100.0))
    price, delta = _bs_call(100.0, 100.0, 0.04 * 0.25)
    pi0 = eng.marginal_price()
    xi0 = eng.initial_hedge()
    prem = eng.risk_premium(241.0)
    took = time.perf_counter() - start
    rel = abs(pi0 / price - 1)
    ok = rel <= 1e-6 and abs(xi0 - delta) <= 1e-6 and prem <= 1e-8 and took < 5
    return ok, (f"eta={eng.sol.eta_hat:.6f} pi0 rel err {rel:.1e}, |xi0-delta| {abs(xi0 - delta):.1e}, "
                f"pi'={prem:.1e}, {took:.1f}s")


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def check_bns_figures():
    start = time.perf_counter()
    cfg = load_config("bns_default")
    with tempfile.TemporaryDirectory() as tmp:
        hedge, code_h = run_command("hedge", cfg, Path(tmp))
        prem, code_p = run_command("premium", cfg, Path(tmp))
        row = next(r for r in _read(Path(tmp) / "price_curve_p150.csv") if float(r["q"]) == 1.0)
    took = time.perf_counter() - start
    between = 100 * hedge["outputs"]["max_rel_diff_between_p"]
    vs_bs = 100 * hedge["outputs"]["max_rel_diff_vs_bs"]
    prems = [prem["outputs"][k]["risk_premium"] for k in ("p2", "p150")]
    bid, bs, ask = float(row["bid"]), float(row["bs_price"]), float(row["ask"])
    ok = (code_h == 0 and code_p == 0 and abs(between - 0.4) <= 0.2 and abs(vs_bs - 8.9) <= 1.5
          and min(prems) > 0 and bid < bs < ask and took < 600)
    return ok, (f"(i) p2 vs p150 {between:.3f}% (ii) p2 vs BS {vs_bs:.3f}% "
                f"(iii) pi' = {prems[0]:.4g}, {prems[1]:.4g}; q=1 bid {bid:.4f} < BS {bs:.4f} < ask {ask:.4f}; "
                f"{took:.0f}s")


def check_levy_hedging_error(n_paths=100_000, n_steps=252, seed=20240611):
    start = time.perf_counter()
    model, p, v = kou_model(), 2.0, 241.0
    eng = LevyHedgeEngine(model, p, call_transform(100.0))
    sol = eng.sol
    prem, cert = eng.risk_premium(v, with_certificate=True)
    target = (2 * v / p) * math.exp((sol.a - sol.a_euro) * model.T) * prem
    paths = simulate_levy(model, p, sol, "P_euro", n_paths, n_steps, seed)
    est = hedging_error(eng, paths)
    took = time.perf_counter() - start
    ok = cert.converged and est.agrees(target, 3.0, 0.02) and took < 900
    return ok, (f"eta={sol.eta_hat:.6f} MC {est.mean:.4f} +- {est.stderr:.4f} vs {target:.4f} "
                f"(z={est.zscore(target):.2f}, {n_paths} paths x {n_steps} steps), {took:.0f}s")


def _investment_fixtures():
    kou = kou_model()
    merton = merton_model()
    skewed = ExpLevyModel(S0=50.0, sigma2=0.01, drift_b=0.0, jumps=KouJumps(8.0, 0.7, 12.0, 9.0), T=1.0)
    skewed = skewed.with_drift(drift_for_fraction(skewed, 4.0, 0.6))
    pure_jump = ExpLevyModel(S0=1.0, sigma2=0.0, drift_b=0.0, jumps=MertonJumps(5.0, 0.02, 0.15), T=1.0)
    pure_jump = pure_jump.with_drift(drift_for_fraction(pure_jump, 0.5, 0.35))
    return [("kou p=2", kou, 2.0), ("kou p=5", kou, 5.0), ("merton p=3", merton, 3.0),
            ("skewed kou p=4", skewed, 4.0), ("pure-jump merton p=0.5", pure_jump, 0.5)]


def check_investment():
    start = time.perf_counter()
    worst = 0.0
    for _, model, p in _investment_fixtures():
        sol = solve_investment(model, p)
        worst = max(worst, abs(brute_force_eta(model, p, 1e-4) - sol.eta_hat))
    bm = ExpLevyModel(S0=1.0, sigma2=0.09, drift_b=0.05, T=1.0)
    closed = abs(solve_investment(bm, 3.0).eta_hat - 0.05 / (3.0 * 0.09))
    took = time.perf_counter() - start
    ok = worst <= 1e-4 and closed <= 1e-10 and took < 60
    return ok, f"max |grid - solver| {worst:.1e} over 5 fixtures, Brownian closed form {closed:.1e}, {took:.1f}s"


def check_invariants():
    start = time.perf_counter()
    fails = []
    cert_count = 0
    levy = [(kou_model(), 2.0), (merton_model(), 3.0), (brownian_model(), 2.0)]
    for model, p in levy:
        call = LevyHedgeEngine(model, p, call_transform(100.0))
        put = LevyHedgeEngine(model, p, put_transform(100.0))
        if max(abs(call.capital_psi(0.0)), abs(call.capital_psi(1.0))) > 1e-12:
            fails.append("Psi(0), Psi(1)")
        for s in (70.0, 100.0, 135.0):
            if abs(s * call.a_tilde(s) + call.sol.eta_hat) > 1e-8:
                fails.append("s a_tilde")
        for t in (0.0, 0.5 * model.T):
            s = np.array([80.0, 100.0, 120.0])
            Vc, _, cc = call.evaluate(t, s, with_certificate=True)
            Vp, _, cp = put.evaluate(t, s, with_certificate=True)
            cert_count += 2
            tol = 2 * max(cc.error_estimate, cp.error_estimate, 1e-8 * 100.0)
            if np.max(np.abs(Vc - Vp - (s - 100.0))) > tol:
                fails.append("Levy parity")
            for c, V in ((cc, Vc), (cp, Vp)):
                if not c.converged or c.imag_residual > 1e-10 * (1 + np.max(np.abs(V))):
                    fails.append("Levy certificate")
    P = bns_params()
    for p in (2.0, 150.0):
        call = BnsHedgeEngine(P, p, call_transform(100.0))
        put = BnsHedgeEngine(P, p, put_transform(100.0))
        for t in (0.0, 0.1):
            for z in (0.0, 1.0):
                P0, P1 = call.psi01(t, z)
                if max(abs(P0), abs(P1)) > 1e-12:
                    fails.append("Psi0, Psi1")
            s = np.array([80.0, 100.0, 120.0])
            Vc, _, cc = call.evaluate(t, s, 0.05, with_certificate=True)
            Vp, _, cp = put.evaluate(t, s, 0.05, with_certificate=True)
            cert_count += 2
            tol = 2 * max(cc.error_estimate, cp.error_estimate, 1e-8 * 100.0)
            if np.max(np.abs(Vc - Vp - (s - 100.0))) > tol:
                fails.append("BNS parity")
            for c, V in ((cc, Vc), (cp, Vp)):
                if not c.converged or c.imag_residual > 1e-10 * (1 + np.max(np.abs(V))):
                    fails.append("BNS certificate")
        if abs(100.0 * call.a_tilde(100.0) + call.eta_hat) > 1e-8:
            fails.append("BNS s a_tilde")
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        c1, c2, c3 = rng.normal(0, 8, 3) + 1j * rng.normal(0, 8, 3)
        t1, t2 = np.sort(rng.uniform(0, P.T, 2))
        m = ExpAffineArg(c1, c2, c3, P.T, P.lam)
        f = lambda s: complex(gamma_ou_exponent(P, m(s)))
        ref = (integrate.quad(lambda s: f(s).real, t1, t2, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
               + 1j * integrate.quad(lambda s: f(s).imag, t1, t2, epsabs=1e-14, epsrel=1e-13, limit=200)[0])
        worst = max(worst, abs(exp_affine_integral(P, m, t1, t2) - ref) / max(1.0, abs(ref)))
    if worst > 1e-8:
        fails.append("Gamma-OU integral")
    took = time.perf_counter() - start
    ok = not fails and took < 120
    return ok, (f"{cert_count} certified evaluations, Gamma-OU worst rel err {worst:.1e}, "
                f"failures: {sorted(set(fails)) or 'none'}, {took:.1f}s")


def check_q0_prices(n_paths=100_000, seed=99):
    start = time.perf_counter()
    parts, ok = [], True
    eng = LevyHedgeEngine(kou_model(), 2.0, call_transform(100.0))
    paths = simulate_levy(kou_model(), 2.0, eng.sol, "P", n_paths, 1, seed, with_weights=True)
    est, target = q0_price(eng, paths), eng.marginal_price()
    ok &= est.agrees(target)
    parts.append(f"Kou {est.mean:.4f}+-{est.stderr:.4f} vs {target:.4f}")
    for p in (2.0, 150.0):
        beng = BnsHedgeEngine(bns_params(), p, call_transform(100.0))
        bpaths = simulate_bns(bns_params(), p, "P", n_paths, 1, seed + int(p), with_weights=True)
        est, target = q0_price(beng, bpaths), beng.marginal_price()
        ok &= est.agrees(target)
        parts.append(f"BNS p={p:g} {est.mean:.4f}+-{est.stderr:.4f} vs {target:.4f}")
    took = time.perf_counter() - start
    return ok and took < 600, "; ".join(parts) + f", {took:.0f}s"


CRITERIA = [
    (1, "complete-market degeneration", check_complete_market),
    (2, "BNS hedge and premium figures", check_bns_figures),
    (3, "Levy hedging error vs risk premium", check_levy_hedging_error),
    (4, "investment optimiser vs grid search", check_investment),
    (5, "invariant suite", check_invariants),
    (6, "Q0 pricing cross-check", check_q0_prices),
]


def _report(number, name, fn):
    passed, detail = fn()
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({name}): {detail}"
    return passed, line


@pytest.mark.slow
@pytest.mark.parametrize("number,name,fn", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(number, name, fn, capsys):
    passed, line = _report(number, name, fn)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    for number, name, fn in CRITERIA:
        print(_report(number, name, fn)[1], flush=True)
