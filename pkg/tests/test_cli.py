import json

import numpy as np
import pandas as pd
import pytest

from qrmsm.cli import main, render_table
from qrmsm.panel import write_panel_csv
from qrmsm.simgen import DGPConfig, simulate_cohort
from qrmsm.simgen.montecarlo import MonteCarloCell, MonteCarloReport


def _write(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


SIM = {"mode": "simulate", "seed": 3,
       "simulate": {"mechanism": "bernoulli", "gamma_sets": [1], "n": 250, "R": 10,
                    "estimators": ["OLS", "IPT", "IIV", "FIPTM", "AAIIW"]}}


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = _write(d / "sim.json", SIM)
    code = main(["--config", cfg, "--out", str(d / "out")])
    return code, d


def test_simulate_smoke(sim_run):
    code, d = sim_run
    assert code == 0
    df = pd.read_csv(d / "out" / "montecarlo.csv")
    assert (df.R == 10).all()
    assert {"OLS", "IPTc", "IIVc", "DWc", "AAIIWc"} <= set(df.estimator)
    for name in ("summary.txt", "replicates.csv", "resolved_config.json"):
        assert (d / "out" / name).exists()
    reps = pd.read_csv(d / "out" / "replicates.csv")
    assert len(reps) == 10 * len(df)


def test_simulate_idempotent(sim_run, tmp_path):
    _, d = sim_run
    cfg = _write(tmp_path / "sim.json", SIM)
    assert main(["--config", cfg, "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "montecarlo.csv").read_bytes() == (d / "out" / "montecarlo.csv").read_bytes()


def test_embedded_config_reproduces(sim_run, tmp_path):
    _, d = sim_run
    resolved = json.loads((d / "out" / "resolved_config.json").read_text())
    resolved["output_dir"] = str(tmp_path / "re")
    assert main(["--config", _write(tmp_path / "r.json", resolved)]) == 0
    assert (tmp_path / "re" / "montecarlo.csv").read_bytes() == (d / "out" / "montecarlo.csv").read_bytes()


def test_seed_flag_overrides(sim_run, tmp_path):
    _, d = sim_run
    small = json.loads(json.dumps(SIM))
    small["simulate"]["estimators"] = ["OLS"]
    cfg = _write(tmp_path / "s.json", small)
    main(["--config", cfg, "--out", str(tmp_path / "a")])
    main(["--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "montecarlo.csv").read_bytes() != (tmp_path / "b" / "montecarlo.csv").read_bytes()


def test_both_modes_is_config_error(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.json", {"simulate": {"R": 1}, "estimate": {"input": "x.csv"}})
    assert main(["--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "simulate" in err and "estimate" in err


@pytest.mark.parametrize("cfg", [
    {"mode": "simulate", "simulate": {"mechanism": "weekly"}},
    {"mode": "simulate", "simulate": {"gamma_sets": [9]}},
    {"mode": "simulate", "simulate": {"bogus": 1}},
    {"mode": "estimate", "estimate": {"input": "does-not-exist.csv"}},
    {"mode": "other"},
])
def test_invalid_configs(tmp_path, cfg):
    assert main(["--config", _write(tmp_path / "c.json", cfg), "--out", str(tmp_path / "o")]) == 1


def test_unreadable_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["--config", str(p)]) == 1
    assert main(["--config", str(tmp_path / "missing.json")]) == 1


@pytest.fixture(scope="module")
def cohort_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("est")
    write_panel_csv(simulate_cohort(DGPConfig.from_gamma_set("bernoulli", 1, 300), 5), d / "cohort.csv")
    return d


def test_estimate_mode(cohort_csv):
    d = cohort_csv
    cfg = _write(d / "e.json", {"mode": "estimate", "seed": 1,
                                "estimate": {"input": "cohort.csv", "nuisance": {"mechanism": "bernoulli"},
                                             "bootstrap": {"B": 100}}})
    assert main(["--config", cfg, "--out", str(d / "out")]) == 0
    res = json.loads((d / "out" / "estimates.json").read_text())
    a = res["estimates"]["AAIIW"]
    assert a["ci"]["lower"] <= a["beta1"] <= a["ci"]["upper"]
    assert set(res["estimates"]) == {"OLS", "IPT", "IIV", "FIPTM", "AAIIW"}
    assert "ipt_max" in a["weights"] and len(a["ee_residual"]) == 2
    bal = pd.read_csv(d / "out" / "balance.csv")
    assert set(bal.stratum) == {"treatment=0", "treatment=1", "observed=0", "observed=1"}


def test_estimation_failure_exit_code(tmp_path):
    panel = simulate_cohort(DGPConfig.from_gamma_set("bernoulli", 1, 30), 2)
    full = panel.with_observed(np.ones(panel.n_rows), np.zeros(panel.n_rows))
    write_panel_csv(full, tmp_path / "all_observed.csv")
    cfg = _write(tmp_path / "e.json", {"mode": "estimate", "estimate": {
        "input": "all_observed.csv", "estimators": ["AAIIW"], "nuisance": {"mechanism": "bernoulli"}}})
    assert main(["--config", cfg, "--out", str(tmp_path / "o")]) == 2


def _cell(est, g, bias=0.004):
    return MonteCarloCell("bernoulli", str(g), 1000, est, "all-correct", 500, bias, bias ** 2 + 0.001, 0.001,
                          17.9, 17.9, 0)


class TestRender:
    def test_single_cell(self):
        text = render_table(MonteCarloReport([_cell("AAIIWc", 1)]))
        rows = [ln for ln in text.splitlines() if ln.startswith("AAIIWc")]
        assert len(rows) == 1 and "<0.01" in rows[0]

    def test_small_bias_rendered_below_threshold(self):
        line = [ln for ln in render_table(MonteCarloReport([_cell("DWc", 1, -0.004)])).splitlines()
                if ln.startswith("DWc")][0]
        assert line.split()[1:4] == ["(18,", "18)", "1B"] and line.split()[4] == "<0.01"

    def test_four_blocks_in_display_order(self):
        labels = ["AAIIWs.d", "OLS", "IPTc", "IPTnc", "DWc", "DWiptc", "DWiivc", "DWnc", "AAIIWc", "AAIIWs.a",
                  "AAIIWs.b", "AAIIWs.c"]
        cells = [_cell(lab, g, 0.5) for g in (1, 2, 3, 4) for lab in labels]
        text = render_table(MonteCarloReport(cells))
        rows = [ln.split()[0] for ln in text.splitlines() if ln and ln.split()[0] in labels]
        assert len(rows) == 48
        expected = ["OLS", "IPTc", "IPTnc", "DWc", "DWiptc", "DWiivc", "DWnc", "AAIIWc", "AAIIWs.a", "AAIIWs.b",
                    "AAIIWs.c", "AAIIWs.d"]
        assert rows == expected * 4
        assert "0.50" in text

    def test_empty_report(self):
        with pytest.raises(ValueError):
            render_table(MonteCarloReport())
