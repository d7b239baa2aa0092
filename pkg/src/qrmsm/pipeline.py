"""Full estimation recipe: nuisance designs, fitting order and estimator dispatch."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .design import Design
from .estimators import (
    EstimateResult,
    WeightSet,
    compute_weights,
    estimate_aaiiw,
    estimate_fiptm,
    estimate_iiv,
    estimate_ipt,
    estimate_ols,
)
from .exceptions import ConfigError
from .nuisance import (
    BASELINE_VARIANTS,
    LogisticFit,
    OutcomeMeanFit,
    fit_bernoulli_observation,
    fit_outcome_mean,
    fit_propensity,
    fit_proportional_rate,
)

MECHANISMS = ("rate", "bernoulli")
ROW_RULES = ("observed", "iiv")

CORRECT_DESIGNS = {
    "propensity": "1 + K1 + K2 + K3",
    "observation": "A + M + K1 + K2 + K3 + P",
    "outcome_k": "1 + A + K1 + K2 + K3 + P",
    "outcome_v": "1 + A + M + K1 + K2 + K3 + P",
}
MISSPECIFIED_DESIGNS = {
    "propensity": "1 + sin(K1)",
    "observation": "sin(M) + K2",
    "outcome_k": "1 + A",
    "outcome_v": "1 + A",
}

# which nuisance models each estimator consumes
REQUIRES = {
    "OLS": (),
    "IPT": ("propensity",),
    "IIV": ("observation",),
    "FIPTM": ("propensity", "observation"),
    "AAIIW": ("propensity", "observation", "outcome_k", "outcome_v"),
}


def normalize_mechanism(mechanism: str) -> str:
    m = {"poisson": "rate", "rate": "rate", "bernoulli": "bernoulli"}.get(str(mechanism).lower())
    if m is None:
        raise ConfigError(f"unknown observation mechanism {mechanism!r}")
    return m


@dataclass(frozen=True)
class NuisanceSpec:
    """Designs and options for the four nuisance models.

    Parameters
    ----------
    propensity, observation, outcome_k, outcome_v : str
        Design formulas.
    mechanism : {"rate", "bernoulli"}
        Andersen-Gill rate model or logistic observation model.
    baseline : {"as-written", "risk-set"}
        Breslow variant for the rate model.
    mu_k_rows, mu_v_rows : {"observed", "iiv"}
        Fit the outcome means by ordinary least squares on observed rows,
        or weight observed rows by the inverse fitted intensity.
    form : {"wls", "ht"}
        Form of the IPT and FIPTM equations.
    clip : (float, float)
        Weight clipping quantiles.
    """

    propensity: str = CORRECT_DESIGNS["propensity"]
    observation: str = CORRECT_DESIGNS["observation"]
    outcome_k: str = CORRECT_DESIGNS["outcome_k"]
    outcome_v: str = CORRECT_DESIGNS["outcome_v"]
    mechanism: str = "rate"
    baseline: str = "as-written"
    mu_k_rows: str = "observed"
    mu_v_rows: str = "observed"
    form: str = "wls"
    clip: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "mechanism", normalize_mechanism(self.mechanism))
        object.__setattr__(self, "clip", tuple(float(c) for c in self.clip))
        if self.baseline not in BASELINE_VARIANTS:
            raise ConfigError(f"baseline must be one of {BASELINE_VARIANTS}")
        for name in ("mu_k_rows", "mu_v_rows"):
            if getattr(self, name) not in ROW_RULES:
                raise ConfigError(f"{name} must be one of {ROW_RULES}")
        if self.form not in ("wls", "ht"):
            raise ConfigError("form must be 'wls' or 'ht'")
        for name in ("propensity", "observation", "outcome_k", "outcome_v"):
            Design.parse(getattr(self, name))

    def replace(self, **changes) -> "NuisanceSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip"] = list(self.clip)
        return d


@dataclass
class NuisanceSuite:
    propensity: Optional[LogisticFit] = None
    observation: Optional[object] = None
    weights: Optional[WeightSet] = None
    mu_k: Optional[Tuple[OutcomeMeanFit, OutcomeMeanFit]] = None
    mu_v: Optional[Tuple[OutcomeMeanFit, OutcomeMeanFit]] = None


class NuisanceCache:
    """Memoizes nuisance fits on one panel so scenarios can share them."""

    def __init__(self, panel):
        self.panel = panel
        self._store: Dict[tuple, object] = {}

    def _get(self, key, make):
        if key not in self._store:
            self._store[key] = make()
        return self._store[key]

    def propensity(self, design: str) -> LogisticFit:
        return self._get(("ps", design), lambda: fit_propensity(self.panel, design))

    def observation(self, design: str, mechanism: str, baseline: str):
        mechanism = normalize_mechanism(mechanism)
        if mechanism == "bernoulli":
            d = Design.parse(design)
            d = Design(d.terms, True)
            return self._get(("obs", str(d), "bernoulli"), lambda: fit_bernoulli_observation(self.panel, d))
        return self._get(("obs", design, "rate", baseline), lambda: fit_proportional_rate(self.panel, design, baseline))

    def weights(self, spec: NuisanceSpec, need_prop: bool, need_obs: bool) -> WeightSet:
        prop = self.propensity(spec.propensity) if need_prop else None
        obs = self.observation(spec.observation, spec.mechanism, spec.baseline) if need_obs else None
        key = ("w", spec.propensity if need_prop else None,
               (spec.observation, spec.mechanism, spec.baseline) if need_obs else None, spec.clip)
        return self._get(key, lambda: compute_weights(self.panel, prop, obs, stabilized=False, clip=spec.clip))

    def outcome_means(self, spec: NuisanceSpec, conditioning: str) -> Tuple[OutcomeMeanFit, OutcomeMeanFit]:
        design = spec.outcome_k if conditioning == "K" else spec.outcome_v
        rows = spec.mu_k_rows if conditioning == "K" else spec.mu_v_rows
        obs_key = (spec.observation, spec.mechanism, spec.baseline) if rows == "iiv" else None

        def make():
            weights = None
            if rows == "iiv":
                w = self.weights(spec, need_prop=False, need_obs=True)
                weights = np.where(self.panel.observed == 1, w.iiv, 0.0)
            if conditioning == "V":
                pooled = fit_outcome_mean(self.panel, 1, "V", design, weights)
                return (replace(pooled, arm=0), pooled)
            return tuple(fit_outcome_mean(self.panel, a, "K", design, weights) for a in (0, 1))

        return self._get(("mu", conditioning, design, obs_key), make)


def fit_nuisance_suite(panel, spec: NuisanceSpec, needs=("propensity", "observation", "outcome_k", "outcome_v"),
                       cache: Optional[NuisanceCache] = None) -> NuisanceSuite:
    """Fit the nuisance models listed in ``needs`` under ``spec``."""
    cache = cache or NuisanceCache(panel)
    suite = NuisanceSuite()
    if "propensity" in needs:
        suite.propensity = cache.propensity(spec.propensity)
    if "observation" in needs:
        suite.observation = cache.observation(spec.observation, spec.mechanism, spec.baseline)
    suite.weights = cache.weights(spec, "propensity" in needs, "observation" in needs)
    if "outcome_k" in needs:
        suite.mu_k = cache.outcome_means(spec, "K")
    if "outcome_v" in needs:
        suite.mu_v = cache.outcome_means(spec, "V")
    return suite


def run_estimator(tag: str, panel, spec: NuisanceSpec, cache: Optional[NuisanceCache] = None,
                  check_root: bool = False) -> EstimateResult:
    """Fit the nuisances ``tag`` needs and solve its estimating equation."""
    if tag not in REQUIRES:
        raise ConfigError(f"unknown estimator {tag!r}; choose from {sorted(REQUIRES)}")
    if tag == "OLS":
        return estimate_ols(panel, check_root=check_root)
    suite = fit_nuisance_suite(panel, spec, REQUIRES[tag], cache)
    w = suite.weights
    if tag == "IPT":
        return estimate_ipt(panel, w, spec.form, check_root=check_root)
    if tag == "IIV":
        return estimate_iiv(panel, w, check_root=check_root)
    if tag == "FIPTM":
        return estimate_fiptm(panel, w, spec.form, check_root=check_root)
    return estimate_aaiiw(panel, w, suite.mu_k, suite.mu_v, check_root=check_root)
