"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line, printed in the terminal summary.
The Monte Carlo checks run the full Bernoulli configuration through the
command line once with one worker and once with eight.
"""

import json

import numpy as np
import pandas as pd
import pytest
from scipy.stats import chi2_contingency

from conftest import ACCEPTANCE_LINES, random_panel
from oracles import central_gradient, normal_equations
from qrmsm.api import AAIIWEstimator
from qrmsm.cli import main
from qrmsm.estimators import compute_weights, estimate_aaiiw, estimate_fiptm, estimate_iiv, estimate_ipt, estimate_ols
from qrmsm.inference import VarianceInputs, asymptotic_variances, bootstrap_ci
from qrmsm.nuisance import log_partial_likelihood, logistic_loglik
from qrmsm.simgen import DGPConfig, replicate_seed, simulate_cohort, simulate_cohort_with_truth

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

R = 500
N = 1000


def record(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _run_cli(tmp, name, mechanism, sets, jobs, seed=20240501, **extra):
    cfg = {"mode": "simulate", "seed": seed, "jobs": jobs,
           "simulate": {"mechanism": mechanism, "gamma_sets": sets, "n": N, "R": R, **extra}}
    path = tmp / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp / name
    assert main(["--config", str(path), "--out", str(out)]) == 0
    return out / "montecarlo.csv"


@pytest.fixture(scope="module")
def bernoulli_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("acceptance")
    serial = _run_cli(tmp, "serial", "bernoulli", [1, 2, 3, 4], jobs=1)
    parallel = _run_cli(tmp, "parallel", "bernoulli", [1, 2, 3, 4], jobs=8)
    return serial, parallel


@pytest.fixture(scope="module")
def bernoulli(bernoulli_runs):
    return pd.read_csv(bernoulli_runs[0], dtype={"gamma_set": str})


@pytest.fixture(scope="module")
def poisson(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("acceptance_poisson")
    calibrated = pd.read_csv(_run_cli(tmp, "poisson", "poisson", [2], jobs=1), dtype={"gamma_set": str})
    unit = pd.read_csv(_run_cli(tmp, "poisson_c1", "poisson", [2], jobs=1, proportionality_constant=1.0),
                       dtype={"gamma_set": str})
    return calibrated, unit


def _cell(df, label, gamma_set, column="bias"):
    row = df[(df.estimator == label) & (df.gamma_set == str(gamma_set))]
    assert len(row) == 1, (label, gamma_set)
    return float(row[column].iloc[0])


def test_quadruple_robustness(bernoulli):
    labels = ["AAIIWc", "AAIIWs.a", "AAIIWs.b", "AAIIWs.c", "AAIIWs.d"]
    bias = {lab: _cell(bernoulli, lab, 2) for lab in labels}
    ok = all(abs(b) <= 0.03 for b in bias.values())
    record(1, ok, "Bernoulli set 2 AAIIW bias " + ", ".join(f"{k}={v:+.3f}" for k, v in bias.items())
           + " (need |bias| <= 0.03)")


def test_naive_bias_reproduction(bernoulli):
    checks = {
        "OLS set 1 in 0.47+-0.04": (_cell(bernoulli, "OLS", 1), lambda b: abs(b - 0.47) <= 0.04),
        "OLS set 2 in 1.30+-0.08": (_cell(bernoulli, "OLS", 2), lambda b: abs(b - 1.30) <= 0.08),
        "IPTc set 1 <= 0.02": (_cell(bernoulli, "IPTc", 1), lambda b: abs(b) <= 0.02),
        "IPTc set 2 in 0.93+-0.07": (_cell(bernoulli, "IPTc", 2), lambda b: abs(b - 0.93) <= 0.07),
    }
    for g in (1, 2, 3, 4):
        checks[f"DWc set {g} |bias| <= 0.03"] = (_cell(bernoulli, "DWc", g), lambda b: abs(b) <= 0.03)
    failed = [f"{k} (got {v:+.3f})" for k, (v, ok) in checks.items() if not ok(v)]
    passed = len(checks) - len(failed)
    record(2, not failed, f"{passed}/{len(checks)} naive-bias checks hold" + ("; failing: " + "; ".join(failed)
                                                                             if failed else ""))


def test_poisson_reproduction(poisson):
    # reference entries are magnitudes, so compare |bias|
    calibrated, unit = poisson
    dw, aa = abs(_cell(calibrated, "DWc", 2)), abs(_cell(calibrated, "AAIIWc", 2))
    ols, ipt = abs(_cell(calibrated, "OLS", 2)), abs(_cell(calibrated, "IPTc", 2))
    ev = (_cell(calibrated, "OLS", 2, "mean_events_a0"), _cell(calibrated, "OLS", 2, "mean_events_a1"))
    ordering = ols > ipt > dw
    at_one = ", ".join(f"{lab}={abs(_cell(unit, lab, 2)):.3f}" for lab in ("OLS", "IPTc", "DWc", "AAIIWc"))
    detail = (f"Poisson set 2 events=({ev[0]:.1f}, {ev[1]:.1f}) |DWc|={dw:.3f} (need 0.05+-0.05) "
              f"|AAIIWc|={aa:.3f} (need <= 0.03); property form ordering OLS>IPTc>DWc "
              f"{'holds' if ordering else 'fails'} ({ols:.3f}, {ipt:.3f}, {dw:.3f}); at c=1: {at_one}")
    record(3, abs(dw - 0.05) <= 0.05 and aa <= 0.03, detail)


def test_efficiency_dominance(bernoulli):
    wins = 0
    for k in range(100):
        cfg = DGPConfig.from_gamma_set("bernoulli", 2, 500)
        panel, truth = simulate_cohort_with_truth(cfg, replicate_seed(777, k))
        v = asymptotic_variances(panel, VarianceInputs.from_truth(truth))
        assert v.mu0 != 0 and v.mu1 != 0
        wins += v.sigma2_aaiiw < v.sigma2_fiptm
    ratios = {g: _cell(bernoulli, "AAIIWc", g, "variance") / _cell(bernoulli, "DWc", g, "variance")
              for g in (1, 2, 3, 4)}
    ok = wins == 100 and all(r <= 1 for r in ratios.values())
    record(4, ok, f"plug-in sigma2_AAIIW < sigma2_FIPTM in {wins}/100 oracle datasets; "
           "var(AAIIWc)/var(DWc) by set " + ", ".join(f"{g}:{r:.3f}" for g, r in ratios.items()))


def test_oracle_equivalences():
    rng = np.random.default_rng(5)
    worst_root = 0.0
    for _ in range(1000):
        ds = random_panel(rng, n_subjects=int(rng.integers(8, 40)), n_bins=int(rng.integers(2, 7)))
        e1 = rng.uniform(0.1, 0.9, ds.n_rows)
        rho = rng.uniform(0.1, 2.0, ds.n_rows) * ds.at_risk
        rho = np.where((ds.observed == 0) & (rng.random(ds.n_rows) < 0.2), 0.0, rho)
        w = compute_weights(ds, e1, rho)
        mk = (rng.normal(size=ds.n_rows), rng.normal(size=ds.n_rows))
        mv = (rng.normal(size=ds.n_rows), rng.normal(size=ds.n_rows))
        for r in (estimate_ols(ds), estimate_ipt(ds, w), estimate_iiv(ds, w), estimate_fiptm(ds, w),
                  estimate_fiptm(ds, w, form="ht"), estimate_aaiiw(ds, w, mk, mv)):
            worst_root = max(worst_root, r.root_check)

    worst_grad = 0.0
    for _ in range(100):
        ds = random_panel(rng, n_subjects=20, n_bins=4)
        X = np.column_stack([np.ones(ds.n_rows), ds.column("K1"), ds.column("K2")])
        beta = rng.normal(scale=0.5, size=3)
        g = logistic_loglik(beta, X, ds.treatment)[1]
        fd = central_gradient(lambda b: logistic_loglik(b, X, ds.treatment)[0], beta)
        worst_grad = max(worst_grad, np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
        V = np.column_stack([ds.treatment, ds.column("M"), ds.column("K1")])
        gam = rng.normal(scale=0.5, size=3)
        g = log_partial_likelihood(gam, V, ds.observed, ds.bin, ds.at_risk)[1]
        fd = central_gradient(lambda c: log_partial_likelihood(c, V, ds.observed, ds.bin, ds.at_risk)[0], gam)
        worst_grad = max(worst_grad, np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))

    worst_ols = 0.0
    for _ in range(100):
        ds = random_panel(rng)
        obs = ds.observed == 1
        X = np.column_stack([np.ones(obs.sum()), ds.treatment[obs]])
        ref = normal_equations(X, ds.outcome[obs])
        worst_ols = max(worst_ols, np.max(np.abs(estimate_ols(ds).params.as_array() - ref)))

    ok = worst_root <= 1e-10 and worst_grad <= 1e-5 and worst_ols <= 1e-10
    record(5, ok, f"closed form vs root max gap {worst_root:.1e} (1000 panels); gradient rel. error "
           f"{worst_grad:.1e} (100 panels); OLS vs normal equations {worst_ols:.1e}")


def test_generator_fidelity():
    panel, truth = simulate_cohort_with_truth(DGPConfig.from_gamma_set("bernoulli", 1, 10000), 314)
    first = panel.bin == 0
    A, M = panel.treatment, panel.column("M")
    moments = {
        "mean(K1)": (panel.column("K1")[first].mean(), 1.0, 0.05),
        "P(K2=1)": (panel.column("K2")[first].mean(), 0.55, 0.02),
        "sd(P)": (panel.column("P").std(), 0.3, 0.02),
        "mean(M|A=1)": (M[A == 1].mean(), 2.0, 0.05),
        "var(M|A=0)": (M[A == 0].var(), 2.0, 0.15),
        "E[Y1]-E[Y0]": (np.mean(truth.y1) - np.mean(truth.y0), 1.0, 0.05),
    }
    cfg = DGPConfig.from_gamma_set("bernoulli", 1, 10000).replace(gamma=(-1.0, 0, 0, 0, 0, 0, 0))
    null = simulate_cohort(cfg, 17)
    table = np.array([[np.sum((null.treatment == a) & (null.observed == o)) for o in (0, 1)] for a in (0, 1)])
    p = chi2_contingency(table)[1]
    ok = all(abs(v - t) <= tol for v, t, tol in moments.values()) and p > 0.01
    record(6, ok, ", ".join(f"{k}={v:.3f}" for k, (v, _, _) in moments.items()) + f", null-gamma chi2 p={p:.2f}")


def test_determinism(bernoulli_runs):
    serial, parallel = bernoulli_runs
    same = serial.read_bytes() == parallel.read_bytes()
    record(7, same, f"montecarlo.csv with --jobs 1 and --jobs 8 byte-identical: {same}")


def _coverage(mediator_mean):
    est = AAIIWEstimator(mechanism="bernoulli", mu_k_rows="iiv")
    cfg = DGPConfig.from_gamma_set("bernoulli", 1, 500).replace(mediator_mean=mediator_mean)
    cover = 0
    for k in range(100):
        panel = simulate_cohort(cfg, replicate_seed(9001, k))
        cover += bootstrap_ci(panel, est, B=200, seed=k).covers(1.0)
    return cover


def test_bootstrap_calibration():
    cover = _coverage("refit")
    record(8, 90 <= cover <= 99, f"95% percentile CI covers beta1=1 in {cover}/100 simulations (need 90-99)")


def test_bootstrap_calibration_iid_generator():
    # same check when cohorts are i.i.d. draws (no in-sample mediator refit)
    cover = _coverage("analytic")
    record("8 (i.i.d. cohorts)", 90 <= cover <= 99,
           f"95% percentile CI covers beta1=1 in {cover}/100 simulations (need 90-99)")
