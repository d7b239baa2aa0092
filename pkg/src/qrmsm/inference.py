"""Uncertainty quantification and weighting diagnostics.

* :func:`asymptotic_variances` evaluates the plug-in asymptotic variances of
  the doubly weighted and the augmented estimators.
* :func:`bootstrap_ci` is a subject-level (cluster) percentile bootstrap that
  reruns the whole estimation recipe on every resample.
* :func:`balance_table` summarizes covariates by stratum before and after
  weighting.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from sklearn.base import clone

from ._validation import check_probability
from .estimators import WeightSet
from .exceptions import EstimationError, PositivityViolation, ResampleDegenerate


# ---------------------------------------------------------------------------
# asymptotic variances
# ---------------------------------------------------------------------------

@dataclass
class VarianceEstimate:
    sigma2_fiptm: float
    sigma2_aaiiw: float
    plug_in_inputs: str
    mu0: float
    mu1: float

    @property
    def difference(self) -> float:
        return self.sigma2_aaiiw - self.sigma2_fiptm


@dataclass
class VarianceInputs:
    """Nuisance values per row for :func:`asymptotic_variances`.

    ``y0`` and ``y1`` (potential outcomes) are only available from a
    simulator; when given, the oracle formulas are used.
    """

    e1: np.ndarray
    rho: np.ndarray
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None

    @classmethod
    def from_truth(cls, truth) -> "VarianceInputs":
        return cls(e1=truth.e1, rho=truth.rho, y0=truth.y0, y1=truth.y1)

    @classmethod
    def from_weights(cls, w: WeightSet) -> "VarianceInputs":
        return cls(e1=w.e1, rho=w.rho)


def asymptotic_variances(panel, inputs: VarianceInputs, params=None) -> VarianceEstimate:
    """Plug-in asymptotic variances of the doubly weighted and augmented estimators.

    ``sigma2_fiptm = sum_a E[(Y^a - mu_a)^2 / (rho e_a)]`` and
    ``sigma2_aaiiw = sigma2_fiptm - mu_1^2 E[(1 + e_1)/e_1] - mu_0^2 E[(1 + e_0)/e_0]``,
    with expectations taken as means over at-risk person-bins.

    Parameters
    ----------
    panel : PanelDataset
    inputs : VarianceInputs
        With potential outcomes (oracle mode) the first expectation is a
        plain mean of ``(Y^a - mu_a)^2 / (rho e_a)``.  Without them (fitted
        mode) it is estimated from observed arm-``a`` bins by inverse
        weighting, ``mean(dN 1{A=a} (Y - mu_a)^2 / (rho e_a)^2)``.
    params : MSMParams, optional
        Arm means.  Defaults to the potential-outcome means (oracle mode);
        required in fitted mode.

    Raises
    ------
    PositivityViolation
        Some ``e_a`` is outside (0, 1) or some ``rho`` is not positive.
    """
    risk = panel.at_risk == 1
    e1 = check_probability(np.asarray(inputs.e1, dtype=float)[risk], "treatment probability")
    rho = np.asarray(inputs.rho, dtype=float)[risk]
    if not np.all(np.isfinite(rho) & (rho > 0)):
        raise PositivityViolation("observation intensity must be positive at every at-risk bin")
    e = {1: e1, 0: 1.0 - e1}
    oracle = inputs.y0 is not None and inputs.y1 is not None
    if oracle:
        y = {0: np.asarray(inputs.y0, dtype=float)[risk], 1: np.asarray(inputs.y1, dtype=float)[risk]}
        mu = {a: float(y[a].mean()) for a in (0, 1)} if params is None else {a: params.arm_mean(a) for a in (0, 1)}
        s_f = sum(float(np.mean((y[a] - mu[a]) ** 2 / (rho * e[a]))) for a in (0, 1))
    else:
        if params is None:
            raise ValueError("fitted mode needs the estimated arm means")
        mu = {a: params.arm_mean(a) for a in (0, 1)}
        dN = panel.observed[risk]
        A = panel.treatment[risk]
        Y = np.where(dN == 1, panel.outcome[risk], 0.0)
        s_f = sum(float(np.mean(dN * (A == a) * (Y - mu[a]) ** 2 / (rho * e[a]) ** 2)) for a in (0, 1))
    s_a = s_f - sum(mu[a] ** 2 * float(np.mean((1.0 + e[a]) / e[a])) for a in (0, 1))
    return VarianceEstimate(s_f, s_a, "oracle" if oracle else "fitted", mu[0], mu[1])


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

@dataclass
class BootstrapCI:
    lower: float
    upper: float
    level: float
    replicates: int
    seed: int
    estimate: float = float("nan")
    skipped: int = 0
    estimates: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _effect(pipeline, panel) -> float:
    if hasattr(pipeline, "fit"):
        return float(clone(pipeline).fit(panel).coef_[1])
    return float(pipeline(panel))


def _degenerate(panel) -> bool:
    obs = panel.observed == 1
    return not (np.any(obs & (panel.treatment == 0)) and np.any(obs & (panel.treatment == 1)))


def _bootstrap_one(args):
    panel, pipeline, seed, b = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(b),)))
    idx = rng.integers(0, panel.n_subjects, panel.n_subjects)
    sample = panel.take_subjects(idx)
    if _degenerate(sample):
        return np.nan
    try:
        return _effect(pipeline, sample)
    except EstimationError:
        return np.nan


def bootstrap_ci(
    panel,
    pipeline: Union[Callable, object],
    B: int = 200,
    seed: int = 0,
    level: float = 0.95,
    jobs: int = 1,
    max_skip: float = 0.10,
) -> BootstrapCI:
    """Subject-level percentile bootstrap interval for the treatment effect.

    Parameters
    ----------
    panel : PanelDataset
    pipeline : estimator or callable
        A fitted-or-unfitted estimator with ``fit(panel).coef_`` (cloned for
        every resample) or a callable ``panel -> beta1``.
    B : int
        Number of resamples (at least 100).
    seed : int
        Resample ``b`` draws its subjects with a generator seeded by
        ``(seed, b)``.
    level : float
    jobs : int
        Worker processes; results do not depend on it.
    max_skip : float
        Largest tolerated share of degenerate or failed resamples.

    Raises
    ------
    ResampleDegenerate
        More than ``max_skip`` of the resamples lacked an arm, lacked events
        or failed to fit.
    """
    if B < 100:
        raise ValueError("bootstrap needs B >= 100 resamples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    point = np.nan
    try:
        point = _effect(pipeline, panel)
    except EstimationError:
        pass
    tasks = [(panel, pipeline, seed, b) for b in range(B)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            est = np.array(list(pool.map(_bootstrap_one, tasks, chunksize=max(1, B // (4 * jobs)))))
    else:
        est = np.array([_bootstrap_one(t) for t in tasks])
    ok = np.isfinite(est)
    skipped = int(B - ok.sum())
    if skipped > max_skip * B:
        raise ResampleDegenerate(f"{skipped} of {B} bootstrap resamples were degenerate or failed")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(est[ok], [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(float(lo), float(hi), level, B, seed, point, skipped, est)


# ---------------------------------------------------------------------------
# balance tables
# ---------------------------------------------------------------------------

BALANCE_COLUMNS = ("covariate", "stratum", "unweighted_mean", "unweighted_sd", "weighted_mean", "weighted_sd", "n")


@dataclass
class BalanceRow:
    covariate: str
    stratum: str
    unweighted_mean: float
    unweighted_sd: float
    weighted_mean: float
    weighted_sd: float
    n: int


@dataclass
class BalanceTable:
    rows: List[BalanceRow]
    stratify_by: str

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame([asdict(r) for r in self.rows], columns=list(BALANCE_COLUMNS))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BALANCE_COLUMNS)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])

    def get(self, covariate: str, stratum: str) -> BalanceRow:
        for r in self.rows:
            if r.covariate == covariate and r.stratum == str(stratum):
                return r
        raise KeyError((covariate, stratum))


def _wstats(x: np.ndarray, w: np.ndarray):
    """Frequency-weighted mean and standard deviation (``sum w - 1`` denominator)."""
    tot = w.sum()
    if tot <= 0:
        return np.nan, np.nan
    m = float(np.sum(w * x) / tot)
    sd = float(np.sqrt(np.sum(w * (x - m) ** 2) / (tot - 1))) if tot > 1 else np.nan
    return m, sd


def balance_table(
    panel,
    weights: Union[WeightSet, np.ndarray, None] = None,
    stratify_by: str = "treatment",
    covariates: Optional[Sequence[str]] = None,
) -> BalanceTable:
    """Covariate means and standard deviations per stratum, raw and weighted.

    Parameters
    ----------
    panel : PanelDataset
    weights : WeightSet, ndarray or None
        Per-row weights.  A :class:`WeightSet` contributes its treatment
        weights when stratifying by treatment and its visit weights (on
        observed rows; 1 elsewhere) when stratifying by observation.
        ``None`` means unit weights.
    stratify_by : {"treatment", "observed"}
    covariates : sequence of str, optional
        Defaults to every K, M and P column.
    """
    if stratify_by not in ("treatment", "observed"):
        raise ValueError("stratify_by must be 'treatment' or 'observed'")
    risk = panel.at_risk == 1
    if weights is None:
        w = np.ones(panel.n_rows)
    elif isinstance(weights, WeightSet):
        if stratify_by == "treatment":
            w = weights.ipt
        else:
            w = np.where((panel.observed == 1) & np.isfinite(weights.iiv), weights.iiv, 1.0)
    else:
        w = np.asarray(weights, dtype=float)
    strata = panel.treatment if stratify_by == "treatment" else panel.observed
    covariates = list(covariates or panel.schema.covariates)
    rows = []
    for cov in covariates:
        x = panel.column(cov)
        for s in (0, 1):
            sel = risk & (strata == s)
            xs = x[sel]
            um, usd = _wstats(xs, np.ones(xs.size))
            wm, wsd = _wstats(xs, w[sel])
            rows.append(BalanceRow(cov, str(s), um, usd, wm, wsd, int(sel.sum())))
    return BalanceTable(rows, stratify_by)
