"""scikit-learn style estimator classes.

Each causal estimator is fitted on a :class:`~qrmsm.panel.PanelDataset` and
exposes ``coef_ = [beta0, beta1]``.  ``predict`` maps treatment values to
marginal means ``beta0 + beta1 * a``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_panel
from .exceptions import SeparationDetected
from .nuisance import fit_logistic
from .pipeline import CORRECT_DESIGNS, REQUIRES, NuisanceCache, NuisanceSpec, fit_nuisance_suite, run_estimator


class _MSMEstimator(BaseEstimator):
    """Shared parameters and fit/predict logic.

    Parameters
    ----------
    propensity : str
        Design formula for ``pr(A = 1 | K)``.
    observation : str
        Design formula for the observation model.
    outcome_k, outcome_v : str
        Design formulas for the K- and V-conditional outcome means.
    mechanism : {"rate", "poisson", "bernoulli"}
        Observation model family.
    baseline : {"as-written", "risk-set"}
        Breslow variant.
    mu_k_rows, mu_v_rows : {"observed", "iiv"}
        Row weighting of the outcome-mean fits.
    form : {"wls", "ht"}
        Form of the weighted equations.
    clip : tuple of float
        Weight clipping quantiles.
    """

    _tag = None

    def __init__(
        self,
        propensity=CORRECT_DESIGNS["propensity"],
        observation=CORRECT_DESIGNS["observation"],
        outcome_k=CORRECT_DESIGNS["outcome_k"],
        outcome_v=CORRECT_DESIGNS["outcome_v"],
        mechanism="rate",
        baseline="as-written",
        mu_k_rows="observed",
        mu_v_rows="observed",
        form="wls",
        clip=(0.0, 1.0),
    ):
        self.propensity = propensity
        self.observation = observation
        self.outcome_k = outcome_k
        self.outcome_v = outcome_v
        self.mechanism = mechanism
        self.baseline = baseline
        self.mu_k_rows = mu_k_rows
        self.mu_v_rows = mu_v_rows
        self.form = form
        self.clip = clip

    def nuisance_spec(self) -> NuisanceSpec:
        return NuisanceSpec(**self.get_params())

    def fit(self, X, y=None):
        """Fit nuisance models and solve the estimating equation on panel ``X``."""
        panel = check_panel(X)
        spec = self.nuisance_spec()
        cache = NuisanceCache(panel)
        self.result_ = run_estimator(self._tag, panel, spec, cache, check_root=True)
        self.nuisance_ = fit_nuisance_suite(panel, spec, REQUIRES[self._tag], cache)
        self.coef_ = self.result_.params.as_array()
        self.n_subjects_ = panel.n_subjects
        return self

    def predict(self, X):
        """Marginal mean ``beta0 + beta1 * a`` for each treatment value in ``X``."""
        check_is_fitted(self, "coef_")
        a = np.asarray(X, dtype=float).ravel()
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("treatment values must be 0 or 1")
        return self.coef_[0] + self.coef_[1] * a

    @property
    def effect_(self) -> float:
        check_is_fitted(self, "coef_")
        return float(self.coef_[1])


class OLSEstimator(_MSMEstimator):
    """Unadjusted regression of observed outcomes on treatment."""

    _tag = "OLS"


class IPTEstimator(_MSMEstimator):
    """Inverse probability of treatment weighting."""

    _tag = "IPT"


class IIVEstimator(_MSMEstimator):
    """Inverse intensity of visit weighting."""

    _tag = "IIV"


class FIPTMEstimator(_MSMEstimator):
    """Treatment and visit weights combined."""

    _tag = "FIPTM"


class AAIIWEstimator(_MSMEstimator):
    """Doubly augmented, doubly weighted estimator (consistent if any of the
    four robustness scenarios holds)."""

    _tag = "AAIIW"


ESTIMATOR_CLASSES = {
    "OLS": OLSEstimator,
    "IPT": IPTEstimator,
    "IIV": IIVEstimator,
    "FIPTM": FIPTMEstimator,
    "AAIIW": AAIIWEstimator,
}


class LogisticRegressionIRLS(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression fitted by Newton-Raphson.

    Parameters
    ----------
    fit_intercept : bool, default True
    tol : float, default 1e-8
        Gradient-norm tolerance.
    max_iter : int, default 100
    """

    def __init__(self, fit_intercept=True, tol=1e-8, max_iter=100):
        self.fit_intercept = fit_intercept
        self.tol = tol
        self.max_iter = max_iter

    def _design(self, X):
        return np.column_stack([np.ones(X.shape[0]), X]) if self.fit_intercept else X

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise SeparationDetected(f"need two classes, got {self.classes_.size}")
        target = (y == self.classes_[1]).astype(float)
        fit = fit_logistic(self._design(X), target, sample_weight, tol=self.tol, max_iter=self.max_iter)
        self.fit_ = fit
        self.intercept_ = fit.coefficients[0] if self.fit_intercept else 0.0
        self.coef_ = fit.coefficients[1:] if self.fit_intercept else fit.coefficients
        self.n_iter_ = fit.iterations
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
