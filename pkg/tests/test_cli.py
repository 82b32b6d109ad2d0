import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from utilhedge.cli import load_config, main, parse_config
from utilhedge.errors import ValidationError

BROWNIAN = """
[model]
kind = levy
S0 = 100
T = 0.25
sigma2 = 0.04
eta = 0.5
jumps = none

[utility]
p = 2
v = 241

[payoff]
kind = {kind}
K = 100

[sweep]
S0 = 80:120:9
q = 0:2:5
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, command, text, *extra, out="out"):
    cfg = write(tmp_path, text, f"{command}_{out}.cfg")
    code = main([command, "--config", cfg, "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


@given(S0=st.floats(1.0, 500.0), T=st.floats(0.01, 5.0), sig=st.floats(0.001, 1.0),
       eta=st.floats(-2.0, 2.0), K=st.floats(1.0, 500.0))
def test_config_echo_round_trip(S0, T, sig, eta, K):
    text = (BROWNIAN.format(kind="call").replace("S0 = 100", f"S0 = {S0!r}")
            .replace("T = 0.25", f"T = {T!r}").replace("sigma2 = 0.04", f"sigma2 = {sig!r}")
            .replace("eta = 0.5", f"eta = {eta!r}").replace("K = 100", f"K = {K!r}"))
    cfg = parse_config(text)
    again = parse_config(cfg.echo())
    assert again.as_dict() == cfg.as_dict()
    assert again.echo() == cfg.echo()


@pytest.mark.parametrize("edit", [
    lambda t: t.replace("jumps = none", "jumps = none\ncolour = red"),
    lambda t: t + "\n[extra]\nx = 1\n",
    lambda t: t.replace("eta = 0.5", "eta = 0.5\ndrift = 0.04"),
    lambda t: t.replace("sigma2 = 0.04\n", ""),
    lambda t: t.replace("kind = call", "kind = digital"),
    lambda t: t.replace("p = 2", "p = 1"),
    lambda t: t.replace("S0 = 80:120:9", "S0 = 120:80:9"),
])
def test_invalid_configs_exit_2(tmp_path, capsys, edit):
    code, _ = run(tmp_path, "invest", edit(BROWNIAN.format(kind="call")))
    assert code == 2
    assert json.loads(capsys.readouterr().out)["exit_code"] == 2


def test_invest_writes_record(tmp_path, capsys):
    code, out = run(tmp_path, "invest", BROWNIAN.format(kind="call"))
    assert code == 0
    rec = json.loads((out / "result.json").read_text())
    assert rec["outputs"]["p2"]["eta_hat"] == pytest.approx(0.5)
    assert rec["outputs"]["p2"]["grid_agrees"]
    assert rec["inputs"]["model"]["sigma2"] == 0.04
    assert json.loads(capsys.readouterr().out) == rec


def test_hedge_curve_is_black_scholes_delta_and_deterministic(tmp_path):
    code, out = run(tmp_path, "hedge", BROWNIAN.format(kind="call"))
    assert code == 0
    first = (out / "hedge_curve.csv").read_bytes()
    cols = read_csv(out / "hedge_curve.csv")
    assert list(cols) == ["S0", "phi_p2", "bs_delta"]
    assert np.max(np.abs(cols["phi_p2"] - cols["bs_delta"])) < 1e-6
    code, out2 = run(tmp_path, "hedge", BROWNIAN.format(kind="call"), out="again")
    assert (out2 / "hedge_curve.csv").read_bytes() == first


def test_price_sweeps_satisfy_parity(tmp_path):
    _, call_out = run(tmp_path, "price", BROWNIAN.format(kind="call"), out="call")
    _, put_out = run(tmp_path, "price", BROWNIAN.format(kind="put"), out="put")
    c, p = read_csv(call_out / "price_sweep.csv"), read_csv(put_out / "price_sweep.csv")
    np.testing.assert_allclose(c["pi0_p2"] - p["pi0_p2"], c["S0"] - 100.0, atol=1e-6)
    np.testing.assert_allclose(c["pi0_p2"], c["bs_price"], rtol=1e-6)


def test_premium_vanishes_for_brownian(tmp_path):
    code, out = run(tmp_path, "premium", BROWNIAN.format(kind="call"), "--sweep", "0:1:3")
    assert code == 0
    rec = json.loads((out / "result.json").read_text())
    assert abs(rec["outputs"]["p2"]["risk_premium"]) <= 1e-8
    curve = read_csv(out / "price_curve.csv")
    np.testing.assert_allclose(curve["q"], [0.0, 0.5, 1.0])
    assert np.all(curve["bid"] <= curve["ask"])
    assert (out / "price_curve_p2.csv").exists()


def test_unconverged_quadrature_exits_3(tmp_path):
    text = BROWNIAN.format(kind="call").replace("jumps = none", (
        "jumps = kou\nintensity = 3\np_up = 0.4\nrate_up = 25\nrate_down = 20"))
    text += "\n[quadrature]\nM = 5\nmax_depth = 0\nrtol = 1e-14\n"
    code, _ = run(tmp_path, "price", text)
    assert code == 3


def test_verify_on_attainable_claim(tmp_path):
    text = BROWNIAN.format(kind="monomial").replace("K = 100", "z0 = 1\nw = 1")
    text += "\n[mc]\nn_paths = 4000\nn_steps = 20\nhedge_paths = 200\nseed = 3\n"
    code, out = run(tmp_path, "verify", text)
    rec = json.loads((out / "result.json").read_text())
    assert code == 0, rec["outputs"]["checks"]
    names = {c["check"] for c in rec["outputs"]["checks"]}
    assert names == {"weight_mean", "martingale", "price", "hedging_error"}


def test_packaged_config_and_module_entry():
    cfg = load_config("bns_default")
    assert cfg.kind == "bns" and tuple(cfg.p_values) == (2.0, 150.0)
    with pytest.raises(ValidationError):
        load_config("no_such_config")
    res = subprocess.run([sys.executable, "-m", "utilhedge", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "invest" in res.stdout
