import json
import math

import numpy as np
import pytest

from feemarket.cli import ConfigError, load_config, lower_bound_summary, main
from feemarket.adversaries import LowerBoundAdversary
from feemarket.controllers import ChoiceFunction, StepSchedule, fixed_eta_for_horizon
from feemarket.evaluation import average_regret_bound, read_trace_csv

STOCHASTIC = {
    "kind": "stochastic",
    "seed": 17,
    "tx_count_range": [1, 4],
    "welfare_dist": {"kind": "uniform", "low": 0.0, "high": 4.0},
    "consumption_dist": [{"kind": "uniform", "low": 0.0, "high": 1.5}, {"kind": "uniform", "low": 0.0, "high": 2.0}],
    "limit": [2.0, 3.0],
    "loss": {"kind": "quadratic_overage", "target": [1.0, 1.5]},
    "exclusion_prob": 0.1,
}
LOWER = {"kind": "lower_bound", "seed": 5, "target": [1.0, 1.0], "limit": [2.0, 3.0], "price_bound": 1.0}


def _config(tmp_path, name="cfg.json", **over):
    cfg = {
        "scenario": STOCHASTIC,
        "controller": {"kind": "norm_squared", "p0": [0.0, 0.0]},
        "horizon": 150,
        "replications": 2,
        "bounds": {"M": 3.0},
        "output": {"dir": str(tmp_path / "out"), "prefix": "t"},
    }
    cfg.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_zero_horizon_rejected(tmp_path, capsys):
    assert main(["simulate", str(_config(tmp_path, horizon=0))]) == 2
    assert "horizon" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(_config(tmp_path, horizon=0))


def test_bad_configs_exit_2(tmp_path):
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["regret", str(bad)]) == 2
    assert main(["simulate", str(_config(tmp_path, replications=0))]) == 2
    assert main(["lowerbound", str(_config(tmp_path))]) == 2


def test_simulate_is_byte_identical(tmp_path):
    path = _config(tmp_path)
    assert main(["simulate", str(path), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["simulate", str(path), "--output-dir", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["t_summary.json", "t_trace_r0.csv", "t_trace_r1.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "t_summary.json").read_text())
    assert all("bound_value" in run for run in summary["runs"])


def test_env_overrides_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FEEMARKET_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", str(_config(tmp_path))]) == 0
    assert (tmp_path / "env" / "t_summary.json").exists()
    assert not (tmp_path / "out").exists()


def test_regret_command_consistency(tmp_path):
    path = _config(tmp_path, oracle={"norm": "2"})
    assert main(["regret", str(path)]) == 0
    out = json.loads((tmp_path / "out" / "t_regret.json").read_text())
    B = math.sqrt(4 + 9)
    for run in out["runs"]:
        assert run["regret"] == pytest.approx(run["algo_total"] - run["oracle_total"])
        assert run["bound_value"] == pytest.approx(average_regret_bound("gradient", B=B, M=3.0, T=150, m=2))
        assert run["bound_value"] == pytest.approx(B * 3.0 / math.sqrt(150))
        assert run["passed"]
    assert out["passed"] and out["violations"] == 0


def test_lowerbound_trace_gradients_are_signed_slack(tmp_path):
    path = _config(
        tmp_path,
        scenario=LOWER,
        controller={"kind": "norm_squared", "p0": [0.0, 0.0], "price_cap": 1.0},
        bounds={"M": 1.0},
        horizon=10_000,
        replications=1,
    )
    assert main(["simulate", str(path)]) == 0
    cols = read_trace_csv(tmp_path / "out" / "t_trace_r0.csv")
    for i in (1, 2):
        assert set(np.abs(cols[f"g_{i}"]).tolist()) == {1.0}


def test_lower_bound_summary_small():
    adv = LowerBoundAdversary(7, [1.0, 1.0], [2.0, 3.0], 1.0)
    cf = ChoiceFunction("norm_squared", [0.0, 0.0], price_cap=1.0)
    eta = fixed_eta_for_horizon(cf, math.sqrt(13), 1.0, 400)
    rep = lower_bound_summary(adv, cf, StepSchedule("fixed", eta), 400, 40, 1.0, optimal_reps=2)
    assert rep["optimal_accounting_replications"] == 2
    assert rep["threshold"] == pytest.approx(2 * 20 / 24)
    assert rep["lower_bound_pass"]


def test_stochastic_command(tmp_path):
    scen = {
        "kind": "stochastic",
        "seed": 7,
        "tx_count_range": [1, 1],
        "welfare_dist": {"kind": "choice", "values": [4.0, 1.0], "probs": [0.5, 0.5]},
        "consumption_dist": [{"kind": "constant", "value": 2.0}],
        "limit": [2.0],
        "loss": {"kind": "quadratic_overage", "target": [1.0]},
    }
    path = _config(
        tmp_path, scenario=scen, controller={"kind": "norm_squared", "p0": [0.0], "price_cap": 1.0},
        bounds={"M": 1.0}, horizon=200, replications=10, heldout=500,
    )
    assert main(["stochastic", str(path)]) == 0
    out = json.loads((tmp_path / "out" / "t_stochastic.json").read_text())
    assert out["bound_value"] == pytest.approx(4.0 / math.sqrt(200))


def test_verify_walk(capsys):
    assert main(["verify", "walk"]) == 0
    assert "PASS walk" in capsys.readouterr().out


def test_verify_ftrl_equiv():
    assert main(["verify", "ftrl-equiv"]) == 0


def test_verify_unknown_suite(capsys):
    assert main(["verify", "nonsense"]) == 2
    assert "invalid choice" in capsys.readouterr().err
