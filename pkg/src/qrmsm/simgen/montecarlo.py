"""Monte Carlo harness: replicate, estimate, aggregate.

Every replicate draws its own seed from ``(base_seed, r)`` and results are
aggregated in replicate order, so the report does not depend on how many
worker processes ran the replicates.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import EstimationError, MonteCarloFailure
from ..pipeline import NuisanceCache, NuisanceSpec, run_estimator
from .dgp import DGPConfig, event_percentages, replicate_seed, simulate_cohort
from .scenarios import DEFAULT_ESTIMATORS, DEFAULT_SCENARIOS, parse_scenarios, plan_cells

TRUE_EFFECT = 1.0
REPORT_COLUMNS = ("mechanism", "gamma_set", "n", "estimator", "scenario", "R", "bias", "mse", "variance",
                  "mean_events_a0", "mean_events_a1", "failures")


@dataclass
class MonteCarloCell:
    mechanism: str
    gamma_set: str
    n: int
    estimator: str
    scenario: str
    R: int
    bias: float
    mse: float
    variance: float
    mean_events_a0: float
    mean_events_a1: float
    failures: int


@dataclass
class MonteCarloReport:
    """Per-cell bias, MSE and variance of the effect estimate.

    ``replicates`` maps ``(gamma_set, estimator label)`` to the vector of
    per-replicate estimates (``NaN`` for failures).  Event columns are
    observed bins per 100 person-bins in each arm, averaged over replicates.
    """

    cells: List[MonteCarloCell] = field(default_factory=list)
    replicates: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def cell(self, estimator: str, gamma_set=None) -> MonteCarloCell:
        for c in self.cells:
            if c.estimator == estimator and (gamma_set is None or str(c.gamma_set) == str(gamma_set)):
                return c
        raise KeyError(f"no cell for estimator {estimator!r} and gamma set {gamma_set!r}")

    def extend(self, other: "MonteCarloReport") -> "MonteCarloReport":
        self.cells.extend(other.cells)
        self.replicates.update(other.replicates)
        return self

    def to_rows(self) -> List[dict]:
        return [asdict(c) for c in self.cells]

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(self.to_rows(), columns=list(REPORT_COLUMNS))

    def to_csv(self, path) -> None:
        """Write the report with round-trip float formatting."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in self.to_rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in REPORT_COLUMNS)])

    def replicates_to_csv(self, path) -> None:
        """Long table of per-replicate estimates: gamma_set, estimator, replicate, estimate."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("gamma_set", "estimator", "replicate", "estimate"))
            for (g, lab), vals in self.replicates.items():
                for r, v in enumerate(vals):
                    w.writerow((g, lab, r, "" if math.isnan(v) else repr(float(v))))


def summarize(values: np.ndarray, truth: float = TRUE_EFFECT) -> Tuple[float, float, float]:
    """Bias, MSE and (population) variance of the finite entries."""
    v = values[np.isfinite(values)]
    if v.size == 0:
        return math.nan, math.nan, math.nan
    err = v - truth
    return float(err.mean()), float(np.mean(err ** 2)), float(np.var(v))


def _replicate(args):
    cfg, cells, base_spec, base_seed, r = args
    panel = simulate_cohort(cfg, replicate_seed(base_seed, r))
    cache = NuisanceCache(panel)
    out = {}
    for c in cells:
        try:
            res = run_estimator(c.estimator, panel, c.scenario.nuisance_spec(base_spec), cache)
            out[c.label] = res.beta1
        except EstimationError:
            out[c.label] = math.nan
    return out, event_percentages(panel)


def run_monte_carlo(
    cfg: DGPConfig,
    scenarios: Sequence = DEFAULT_SCENARIOS,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    R: int = 100,
    base_seed: int = 0,
    nuisance: Optional[NuisanceSpec] = None,
    jobs: int = 1,
    gamma_set="custom",
    max_failure_rate: float = 0.05,
) -> MonteCarloReport:
    """Simulate ``R`` cohorts and evaluate every (estimator, scenario) cell.

    Parameters
    ----------
    cfg : DGPConfig
    scenarios : sequence of ScenarioSpec or tags
    estimators : sequence of {"OLS", "IPT", "IIV", "FIPTM", "AAIIW"}
    R : int
        Number of replicates.
    base_seed : int
        Replicate ``r`` uses the seed derived from ``(base_seed, r)``.
    nuisance : NuisanceSpec, optional
        Options shared by all cells (Breslow variant, row weighting of the
        outcome means, equation form).  The mechanism always follows ``cfg``.
    jobs : int
        Worker processes; the report is identical for any value.
    gamma_set : str or int
        Label written to the report.
    max_failure_rate : float
        Raise :class:`MonteCarloFailure` when a cell loses more replicates.

    Returns
    -------
    MonteCarloReport
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    scen = parse_scenarios(scenarios)
    cells = plan_cells(scen, estimators)
    base = (nuisance or NuisanceSpec()).replace(mechanism="rate" if cfg.mechanism == "poisson" else "bernoulli")
    tasks = [(cfg, cells, base, base_seed, r) for r in range(R)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=max(1, R // (4 * jobs))))
    else:
        results = [_replicate(t) for t in tasks]

    events = np.array([ev for _, ev in results])
    ev0, ev1 = (float(np.nanmean(events[:, a])) for a in (0, 1))
    report = MonteCarloReport(config={"dgp": cfg.to_dict(), "R": R, "base_seed": base_seed,
                                      "nuisance": base.to_dict(), "estimators": list(estimators),
                                      "scenarios": [s.tag for s in scen]})
    for c in cells:
        vals = np.array([res[c.label] for res, _ in results], dtype=float)
        fails = int(np.sum(~np.isfinite(vals)))
        if fails > max_failure_rate * R:
            raise MonteCarloFailure(f"{c.label}: {fails} of {R} replicates failed (limit {max_failure_rate:.0%})")
        bias, mse, var = summarize(vals)
        report.cells.append(MonteCarloCell(cfg.mechanism, str(gamma_set), cfg.n, c.label, c.scenario.tag, R,
                                           bias, mse, var, ev0, ev1, fails))
        report.replicates[(str(gamma_set), c.label)] = vals
    return report
