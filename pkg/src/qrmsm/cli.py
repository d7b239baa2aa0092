"""Command line entry point.

``qrmsm --config experiment.json [--out DIR] [--jobs N] [--seed S]``

A config selects exactly one mode:

* ``simulate``: Monte Carlo study over coefficient sets, writing
  ``montecarlo.csv``, ``replicates.csv``, ``summary.txt`` and
  ``resolved_config.json``;
* ``estimate``: estimation on a panel CSV, writing ``estimates.json`` and
  ``balance.csv``.

Exit codes: 0 success, 1 configuration or input error, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional


from .api import ESTIMATOR_CLASSES
from .exceptions import ConfigError, EstimationError, PanelFormatError
from .inference import balance_table, bootstrap_ci
from .panel import PanelSchema, load_panel_csv
from .pipeline import REQUIRES, NuisanceCache, NuisanceSpec, fit_nuisance_suite, run_estimator
from .simgen.dgp import BERNOULLI_GAMMA_SETS, POISSON_GAMMA_SETS, DGPConfig
from .simgen.montecarlo import MonteCarloReport, run_monte_carlo
from .simgen.scenarios import DEFAULT_ESTIMATORS, DEFAULT_SCENARIOS, LABEL_ORDER

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION = 0, 1, 2
# "runs" is written to resolved configs for reference; it is recomputed on input.
SIMULATE_KEYS = {"runs", "mechanism", "gamma_sets", "gamma", "n", "R", "dgp", "scenarios", "estimators", "nuisance",
                 "recipes", "proportionality_constant", "max_failure_rate"}
ESTIMATE_KEYS = {"input", "schema", "estimators", "nuisance", "bootstrap"}


@dataclass
class ExperimentConfig:
    """Parsed experiment file.

    Exactly one of ``simulate`` and ``estimate`` is populated.
    """

    mode: str
    seed: int = 0
    jobs: int = 1
    output_dir: str = "out"
    simulate: Optional[dict] = None
    estimate: Optional[dict] = None
    source: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"mode", "seed", "jobs", "output_dir", "simulate", "estimate"}
        if unknown:
            raise ConfigError(f"unknown top-level config fields: {sorted(unknown)}")
        present = [k for k in ("simulate", "estimate") if d.get(k) is not None]
        if len(present) == 2:
            raise ConfigError("config sets both 'simulate' and 'estimate'; exactly one mode is allowed")
        mode = d.get("mode", present[0] if present else None)
        if mode not in ("simulate", "estimate"):
            raise ConfigError("config must set 'mode' to 'simulate' or 'estimate'")
        if present and present[0] != mode:
            raise ConfigError(f"'mode' is {mode!r} but the config populates {present[0]!r}")
        section = dict(d.get(mode) or {})
        allowed = SIMULATE_KEYS if mode == "simulate" else ESTIMATE_KEYS
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown {mode} fields: {sorted(bad)}")
        if mode == "estimate":
            if "input" not in section:
                raise ConfigError("estimate mode needs 'input'")
            p = Path(section["input"])
            section["input"] = str((p if p.is_absolute() else base_dir / p).resolve())
        seed = d.get("seed", 0)
        jobs = d.get("jobs", 1)
        if not isinstance(seed, int) or not isinstance(jobs, int) or jobs < 1:
            raise ConfigError("'seed' must be an integer and 'jobs' a positive integer")
        return cls(mode=mode, seed=seed, jobs=jobs, output_dir=str(d.get("output_dir", "out")),
                   simulate=section if mode == "simulate" else None,
                   estimate=section if mode == "estimate" else None, source=d)

    def resolved(self) -> dict:
        out = {"mode": self.mode, "seed": self.seed, "output_dir": self.output_dir}
        out[self.mode] = self.simulate if self.mode == "simulate" else self.estimate
        return out


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return "<0.01" if abs(x) < 0.01 else f"{abs(x):.2f}"


def render_table(report: MonteCarloReport) -> str:
    """Fixed-width summary table, one block per coefficient set.

    Bias is shown in absolute value and entries below 0.01 as ``<0.01``;
    the CSV keeps signed full-precision values.
    """
    if not report.cells:
        raise ValueError("empty report")
    rank = {lab: i for i, lab in enumerate(LABEL_ORDER)}
    groups: dict = {}
    for c in report.cells:
        groups.setdefault((c.mechanism, c.gamma_set), []).append(c)
    header = f"{'Estimator':<14}{'Events (A=0, A=1)':>20}{'Set':>6}{'|Bias|':>9}{'MSE':>9}{'Var':>9}{'R':>7}{'Fail':>6}"
    lines = [header, "-" * len(header)]
    for (mech, g), cells in groups.items():
        cells = sorted(cells, key=lambda c: (rank.get(c.estimator.split("/")[0], len(rank)), c.estimator))
        for i, c in enumerate(cells):
            ev = f"({c.mean_events_a0:.0f}, {c.mean_events_a1:.0f})" if i == 0 else ""
            st = f"{g}{'P' if mech == 'poisson' else 'B'}" if i == 0 else ""
            lines.append(f"{c.estimator:<14}{ev:>20}{st:>6}{_fmt(c.bias):>9}{_fmt(c.mse):>9}{_fmt(c.variance):>9}"
                         f"{c.R:>7}{c.failures:>6}")
        lines.append("-" * len(header))
    lines.append("Events: observed bins per 100 person-bins in each arm. Set suffix P = Poisson, B = Bernoulli.")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _simulate(cfg: ExperimentConfig, out: Path) -> int:
    s = cfg.simulate
    mech = s.get("mechanism", "bernoulli")
    if mech not in ("poisson", "bernoulli"):
        raise ConfigError(f"simulate.mechanism must be 'poisson' or 'bernoulli', got {mech!r}")
    sets = POISSON_GAMMA_SETS if mech == "poisson" else BERNOULLI_GAMMA_SETS
    dgp_extra = dict(s.get("dgp", {}))
    if "proportionality_constant" in s:
        dgp_extra["proportionality_constant"] = s["proportionality_constant"]
    n = int(s.get("n", 1000))
    runs = []
    if "gamma" in s:
        runs.append(("custom", DGPConfig.from_dict({"n": n, "mechanism": mech, "gamma": s["gamma"], **dgp_extra})))
    for g in s.get("gamma_sets", [] if "gamma" in s else [1, 2, 3, 4]):
        if g not in sets:
            raise ConfigError(f"simulate.gamma_sets entries must be in {sorted(sets)}, got {g!r}")
        base = DGPConfig.from_gamma_set(mech, g, n)
        runs.append((str(g), DGPConfig.from_dict({**base.to_dict(), **dgp_extra})))
    nuis = NuisanceSpec(**{"mu_k_rows": "iiv", **s.get("nuisance", {})})
    recipes = s.get("recipes")
    scenarios = s.get("scenarios", list(DEFAULT_SCENARIOS))
    if recipes:
        scenarios = [{"tag": t, "recipes": recipes} if isinstance(t, str) else t for t in scenarios]
    estimators = s.get("estimators", list(DEFAULT_ESTIMATORS))
    R = int(s.get("R", 100))
    report = MonteCarloReport()
    for label, dgp in runs:
        report.extend(run_monte_carlo(dgp, scenarios, estimators, R, cfg.seed, nuis, cfg.jobs, label,
                                      float(s.get("max_failure_rate", 0.05))))
    resolved = cfg.resolved()
    resolved["simulate"] = {**s, "n": n, "R": R, "scenarios": scenarios, "estimators": estimators,
                            "nuisance": nuis.to_dict(), "runs": {lab: d.to_dict() for lab, d in runs}}
    report.config = resolved
    report.to_csv(out / "montecarlo.csv")
    report.replicates_to_csv(out / "replicates.csv")
    text = render_table(report)
    (out / "summary.txt").write_text(text + "\nResolved config:\n" + json.dumps(resolved, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


def _estimate(cfg: ExperimentConfig, out: Path) -> int:
    e = cfg.estimate
    path = Path(e["input"])
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    schema = PanelSchema.from_dict(e.get("schema", {"confounders": ["K1", "K2", "K3"], "mediators": ["M"],
                                                    "pure_predictors": ["P"]}))
    panel = load_panel_csv(path, schema)
    spec = NuisanceSpec(**e.get("nuisance", {}))
    estimators = e.get("estimators", ["OLS", "IPT", "IIV", "FIPTM", "AAIIW"])
    boot = e.get("bootstrap")
    cache = NuisanceCache(panel)
    results = {}
    for tag in estimators:
        if tag not in REQUIRES:
            raise ConfigError(f"unknown estimator {tag!r}")
        res = run_estimator(tag, panel, spec, cache, check_root=True)
        suite = fit_nuisance_suite(panel, spec, REQUIRES[tag], cache)
        entry = {
            "beta0": res.beta0,
            "beta1": res.beta1,
            "ee_residual": [float(v) for v in res.ee_residual],
            "root_check": _finite(res.root_check),
            "weights": suite.weights.describe(),
            "provenance": res.nuisance_provenance,
        }
        if boot:
            est = ESTIMATOR_CLASSES[tag](**spec.to_dict())
            ci = bootstrap_ci(panel, est, B=int(boot.get("B", 200)), seed=cfg.seed,
                              level=float(boot.get("level", 0.95)), jobs=cfg.jobs)
            entry["ci"] = {"lower": ci.lower, "upper": ci.upper, "level": ci.level, "B": ci.replicates,
                           "skipped": ci.skipped}
        results[tag] = entry
    payload = {"n_subjects": panel.n_subjects, "n_rows": panel.n_rows, "estimates": results,
               "config": {**cfg.resolved(), "estimate": {**e, "nuisance": spec.to_dict()}}}
    (out / "estimates.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    w_t = fit_nuisance_suite(panel, spec, ("propensity",), cache).weights
    tables = [balance_table(panel, w_t, "treatment")]
    try:
        w_o = fit_nuisance_suite(panel, spec, ("observation",), cache).weights
        tables.append(balance_table(panel, w_o, "observed"))
    except EstimationError:
        pass
    import csv

    with open(out / "balance.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("covariate", "stratum", "unweighted_mean", "unweighted_sd", "weighted_mean", "weighted_sd", "n"))
        for t in tables:
            for r in t.rows:
                wr.writerow((r.covariate, f"{t.stratify_by}={r.stratum}", repr(r.unweighted_mean),
                             repr(r.unweighted_sd), repr(r.weighted_mean), repr(r.weighted_sd), r.n))
    for tag, r in results.items():
        ci = r.get("ci")
        extra = f"  CI [{ci['lower']:.3f}, {ci['upper']:.3f}]" if ci else ""
        sys.stdout.write(f"{tag:<6} beta0 = {r['beta0']:.4f}  beta1 = {r['beta1']:.4f}{extra}\n")
    return EXIT_OK


def run(config_path, out_dir: Optional[str] = None, jobs: Optional[int] = None, seed: Optional[int] = None) -> int:
    """Run an experiment file; return the process exit code."""
    try:
        path = Path(config_path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        cfg = ExperimentConfig.from_dict(raw, path.parent)
        if seed is not None:
            cfg.seed = seed
        if jobs is not None:
            if jobs < 1:
                raise ConfigError("--jobs must be positive")
            cfg.jobs = jobs
        if out_dir is not None:
            cfg.output_dir = out_dir
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        return _simulate(cfg, out) if cfg.mode == "simulate" else _estimate(cfg, out)
    except (ConfigError, PanelFormatError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except EstimationError as exc:
        sys.stderr.write(f"estimation failed: {exc}\n")
        return EXIT_ESTIMATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrmsm", description=__doc__.split("\n")[0])
    parser.add_argument("--config", required=True, metavar="PATH", help="experiment JSON file")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    parser.add_argument("--jobs", type=int, metavar="N", help="worker processes")
    parser.add_argument("--seed", type=int, metavar="S", help="base seed (overrides the config)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.config, args.out, args.jobs, args.seed)


if __name__ == "__main__":
    sys.exit(main())
