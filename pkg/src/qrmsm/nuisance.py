"""Nuisance models: propensity, observation process and outcome means.

* Treatment propensity and the Bernoulli observation mechanism are logistic
  regressions fitted by Newton-Raphson (IRLS) with step-halving.
* The Poisson-type observation mechanism is an Andersen-Gill proportional
  rate model on the discrete grid, fitted by maximizing the log partial
  likelihood with the Breslow approximation for ties.  The baseline rate
  per bin comes from a Breslow-type estimator.
* Conditional outcome means are (optionally weighted) least squares fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .design import Design
from .exceptions import (
    InsufficientRows,
    NoEvents,
    NotConverged,
    RankDeficientDesign,
    SeparationDetected,
    SingularInformation,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
SEPARATION_BOUND = 1e3
BASELINE_VARIANTS = ("as-written", "risk-set")


def _solve_information(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    if H.size == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e14:
        raise SingularInformation("observed information matrix is singular or ill-conditioned")
    return np.linalg.solve(H, g)


def _covariance(H: np.ndarray) -> np.ndarray:
    if H.size == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e14:
        raise SingularInformation("observed information matrix is singular at the solution")
    cov = np.linalg.inv(H)
    return 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

@dataclass
class LogisticFit:
    """Result of a (weighted) logistic regression.

    Attributes
    ----------
    coefficients : ndarray
        Includes the intercept when the design has one.
    converged : bool
    iterations : int
    final_gradient_norm : float
        Euclidean norm of the score at the returned coefficients.
    covariance : ndarray
        Inverse observed information.
    loglik_path : list of float
        Log-likelihood after each accepted Newton step (non-decreasing).
    design : Design, optional
        Formula used to build the design matrix, when fitted from a panel.
    """

    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    covariance: np.ndarray
    loglik_path: list = field(default_factory=list)
    design: Optional[Design] = None

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.design.labels if self.design is not None else tuple(f"x{j}" for j in range(len(self.coefficients)))

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coefficients

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(X))

    def predict_panel(self, panel) -> np.ndarray:
        """Fitted probabilities on every row of ``panel``."""
        if self.design is None:
            raise ValueError("fit has no design attached")
        return self.predict_proba(self.design.matrix(panel))


def logistic_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None):
    """Weighted Bernoulli log-likelihood with its gradient and Hessian.

    Returns
    -------
    loglik : float
    grad : ndarray, shape (p,)
    hess : ndarray, shape (p, p)
        Second derivative (negative definite for full-rank designs).
    """
    w = np.ones(len(y)) if weights is None else weights
    eta = X @ beta
    ll = float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    p = expit(eta)
    grad = X.T @ (w * (y - p))
    hess = -(X * (w * p * (1.0 - p))[:, None]).T @ X
    return ll, grad, hess


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    design: Optional[Design] = None,
) -> LogisticFit:
    """Maximize the Bernoulli log-likelihood by Newton-Raphson.

    Parameters
    ----------
    X : ndarray, shape (n, p)
        Design matrix (an intercept column must be included explicitly).
    y : ndarray of {0, 1}, shape (n,)
    weights : ndarray, optional
        Non-negative case weights.
    tol : float
        Convergence threshold on the Euclidean norm of the score.
    max_iter : int
        Iteration cap.

    Returns
    -------
    LogisticFit

    Raises
    ------
    SeparationDetected
        Labels are all equal, the coefficients leave the box
        ``|beta|_inf <= 1e3`` during iteration, or the fit is perfect
        (log-likelihood numerically 0).
    SingularInformation
        Information matrix not invertible (collinear design).
    NotConverged
        Gradient tolerance not reached within ``max_iter`` iterations.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"design has shape {X.shape} but labels have length {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design and labels must be finite")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != y.shape or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite, non-negative and match the labels")
    active = y if weights is None else y[weights > 0]
    if active.size == 0 or np.all(active == active[0]):
        raise SeparationDetected("labels are all equal; the likelihood has no finite maximizer")

    beta = np.zeros(X.shape[1])
    ll, grad, hess = logistic_loglik(beta, X, y, weights)
    path = [ll]
    it = 0
    while np.linalg.norm(grad) > tol:
        if it >= max_iter:
            raise NotConverged(f"logistic fit did not converge in {max_iter} iterations (|grad|={np.linalg.norm(grad):.3g})")
        it += 1
        step = _solve_information(-hess, grad)
        t = 1.0
        while True:
            cand = beta + t * step
            if np.max(np.abs(cand)) > SEPARATION_BOUND:
                raise SeparationDetected("coefficients diverge; the data look perfectly separated")
            ll_new, g_new, h_new = logistic_loglik(cand, X, y, weights)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
            if t < 1e-10:
                raise NotConverged("step-halving failed to increase the log-likelihood")
        # guard against rounding: never report a decrease
        beta, ll, grad, hess = cand, max(ll_new, ll), g_new, h_new
        path.append(ll)
    # Under complete separation the score vanishes long before the
    # coefficients reach the bound; the likelihood then sits at its supremum 0.
    if ll > -1e-6:
        raise SeparationDetected("fitted probabilities are all numerically 0 or 1; the data are separated")
    return LogisticFit(
        coefficients=beta,
        converged=True,
        iterations=it,
        final_gradient_norm=float(np.linalg.norm(grad)),
        covariance=_covariance(-hess),
        loglik_path=path,
        design=design,
    )


def fit_propensity(panel, design, **kwargs) -> LogisticFit:
    """Pooled logistic regression of treatment on a K-block design over at-risk rows."""
    design = Design.parse(design)
    design.check_blocks(panel, {"K"})
    rows = panel.at_risk == 1
    X = design.matrix(panel)[rows]
    return fit_logistic(X, panel.treatment[rows], design=design, **kwargs)


def fit_bernoulli_observation(panel, design, **kwargs) -> LogisticFit:
    """Logistic regression of the observation indicator over at-risk rows."""
    design = Design.parse(design)
    rows = panel.at_risk == 1
    X = design.matrix(panel)[rows]
    return fit_logistic(X, panel.observed[rows], design=design, **kwargs)


# ---------------------------------------------------------------------------
# Andersen-Gill proportional rate model
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    """Proportional rate model ``xi(t) * lambda0(t) * exp(gamma' V(t))``.

    Attributes
    ----------
    gamma : ndarray
        Regression coefficients (no intercept; it is absorbed in the baseline).
    baseline : ndarray, shape (n_bins,)
        Per-bin baseline rate, already including the bin width.
    variant : str
        Breslow variant used for ``baseline``.
    """

    gamma: np.ndarray
    baseline: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    covariance: np.ndarray
    design: Optional[Design] = None
    variant: str = "as-written"
    loglik_path: list = field(default_factory=list)

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.design.labels if self.design is not None else tuple(f"v{j}" for j in range(len(self.gamma)))

    def relative_rate(self, panel) -> np.ndarray:
        """``exp(gamma' V)`` on every row (the stabilized intensity)."""
        return np.exp(self.design.matrix(panel) @ self.gamma)

    def intensity(self, panel) -> np.ndarray:
        """Unstabilized per-bin intensity ``xi * lambda0(bin) * exp(gamma' V)``."""
        return panel.at_risk * self.baseline[panel.bin] * self.relative_rate(panel)


def _bin_sums(values: np.ndarray, bins: np.ndarray, n_bins: int) -> np.ndarray:
    return np.bincount(bins, weights=values, minlength=n_bins)


def log_partial_likelihood(gamma, V, dN, bins, at_risk=None, n_bins=None):
    """Andersen-Gill log partial likelihood on a discrete grid (Breslow ties).

    ``l(gamma) = sum_events gamma'V - sum_b D_b log sum_{j at risk in b} exp(gamma'V_j)``

    Parameters
    ----------
    gamma : ndarray, shape (p,)
    V : ndarray, shape (n, p)
    dN : ndarray of {0, 1}
    bins : ndarray of int
        Bin index of every row; risk sets are rows sharing a bin.
    at_risk : ndarray of {0, 1}, optional
        Rows with ``at_risk = 0`` are ignored.

    Returns
    -------
    loglik : float
    grad : ndarray, shape (p,)
    hess : ndarray, shape (p, p)
    """
    gamma = np.asarray(gamma, dtype=float)
    V = np.asarray(V, dtype=float)
    dN = np.asarray(dN, dtype=float)
    bins = np.asarray(bins, dtype=np.int64)
    if at_risk is not None:
        keep = np.asarray(at_risk) == 1
        V, dN, bins = V[keep], dN[keep], bins[keep]
    n_bins = int(bins.max()) + 1 if n_bins is None else n_bins
    p = V.shape[1]
    eta = V @ gamma
    shift = eta.max() if eta.size else 0.0
    e = np.exp(eta - shift)
    S0 = _bin_sums(e, bins, n_bins)
    D = _bin_sums(dN, bins, n_bins)
    S1 = np.column_stack([_bin_sums(e * V[:, j], bins, n_bins) for j in range(p)]) if p else np.zeros((n_bins, 0))
    ev = D > 0
    ll = float(dN @ eta - np.sum(D[ev] * (np.log(S0[ev]) + shift)))
    mean = np.zeros_like(S1)
    mean[ev] = S1[ev] / S0[ev, None]
    grad = V.T @ dN - D @ mean
    S2 = np.zeros((n_bins, p, p))
    for j in range(p):
        for k in range(j, p):
            s = _bin_sums(e * V[:, j] * V[:, k], bins, n_bins)
            S2[:, j, k] = S2[:, k, j] = s
    cov = np.zeros_like(S2)
    cov[ev] = S2[ev] / S0[ev, None, None] - np.einsum("bj,bk->bjk", mean[ev], mean[ev])
    hess = -np.einsum("b,bjk->jk", D, cov)
    return ll, grad, hess


def breslow_from_linear_predictor(eta, dN, bins, at_risk, n_bins, variant="as-written") -> np.ndarray:
    """Per-bin baseline from the linear predictor ``gamma'V``.

    ``as-written`` sums ``exp(gamma'V)`` over the event rows of the bin;
    ``risk-set`` sums it over every at-risk row (classical Breslow).  Bins
    without events get baseline 0.
    """
    if variant not in BASELINE_VARIANTS:
        raise ValueError(f"unknown Breslow variant {variant!r}; choose from {BASELINE_VARIANTS}")
    keep = np.asarray(at_risk) == 1
    eta, dN, bins = np.asarray(eta)[keep], np.asarray(dN, dtype=float)[keep], np.asarray(bins)[keep]
    e = np.exp(eta)
    D = _bin_sums(dN, bins, n_bins)
    denom = _bin_sums(e * dN if variant == "as-written" else e, bins, n_bins)
    out = np.zeros(n_bins)
    ev = D > 0
    out[ev] = D[ev] / denom[ev]
    return out


def breslow_baseline(panel, gamma, design, variant: str = "as-written") -> np.ndarray:
    """Breslow-type baseline rate per bin for given ``gamma``.

    Parameters
    ----------
    panel : PanelDataset
    gamma : array-like
        Coefficients matching ``design`` (intercept excluded).
    design : Design or str
        Visit design used to build ``V``.
    variant : {"as-written", "risk-set"}

    Returns
    -------
    ndarray, shape (n_bins,)
    """
    design = Design.parse(design).without_intercept()
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (len(design),):
        raise ValueError(f"gamma has length {gamma.size}, design has {len(design)} columns")
    eta = design.matrix(panel) @ gamma
    return breslow_from_linear_predictor(eta, panel.observed, panel.bin, panel.at_risk, panel.grid.n_bins, variant)


def fit_proportional_rate(
    panel,
    design,
    variant: str = "as-written",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> RateFit:
    """Fit the Andersen-Gill model by Newton-Raphson on the partial likelihood.

    Parameters
    ----------
    panel : PanelDataset
    design : Design or str
        Visit design.  An intercept, if present, is dropped.
    variant : {"as-written", "risk-set"}
        Breslow variant for the baseline.

    Raises
    ------
    NoEvents
        No observed event among at-risk rows.
    SingularInformation, NotConverged
    """
    design = Design.parse(design).without_intercept()
    keep = panel.at_risk == 1
    dN = panel.observed[keep]
    if not np.any(dN == 1):
        raise NoEvents("proportional rate model needs at least one observed event")
    V = design.matrix(panel)[keep]
    bins = panel.bin[keep]
    nb = panel.grid.n_bins
    gamma = np.zeros(V.shape[1])
    ll, grad, hess = log_partial_likelihood(gamma, V, dN, bins, n_bins=nb)
    path = [ll]
    it = 0
    while np.linalg.norm(grad) > tol:
        if it >= max_iter:
            raise NotConverged(f"rate model did not converge in {max_iter} iterations (|grad|={np.linalg.norm(grad):.3g})")
        it += 1
        step = _solve_information(-hess, grad)
        t = 1.0
        while True:
            cand = gamma + t * step
            ll_new, g_new, h_new = log_partial_likelihood(cand, V, dN, bins, n_bins=nb)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
            if t < 1e-10:
                raise NotConverged("step-halving failed to increase the partial likelihood")
        gamma, ll, grad, hess = cand, max(ll_new, ll), g_new, h_new
        path.append(ll)
    baseline = breslow_from_linear_predictor(V @ gamma, dN, bins, np.ones_like(dN), nb, variant)
    return RateFit(
        gamma=gamma,
        baseline=baseline,
        converged=True,
        iterations=it,
        final_gradient_norm=float(np.linalg.norm(grad)),
        covariance=_covariance(-hess),
        design=design,
        variant=variant,
        loglik_path=path,
    )


# ---------------------------------------------------------------------------
# outcome means
# ---------------------------------------------------------------------------

@dataclass
class OutcomeMeanFit:
    """Linear model for ``E[Y | A = arm, K]`` or ``E[Y | A = arm, V]``.

    ``conditioning`` is ``"K"`` for a within-arm fit or ``"V"`` for a fit
    pooled over arms with treatment in the design (evaluated at ``arm``).
    """

    arm: int
    conditioning: str
    coefficients: np.ndarray
    design: Design
    weighting: str = "observed"
    pooled: bool = False
    n_rows: int = 0

    @property
    def design_labels(self) -> Tuple[str, ...]:
        return self.design.labels

    def predict(self, panel) -> np.ndarray:
        """Predicted mean on every row with treatment set to ``arm``."""
        X = self.design.matrix(panel, A=float(self.arm)) if self.pooled else self.design.matrix(panel)
        return X @ self.coefficients


def least_squares(X: np.ndarray, y: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """(Weighted) least squares with rank and row-count checks."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p + 1:
        raise InsufficientRows(f"least squares needs at least {p + 1} rows, got {n}")
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        X, y = X * sw[:, None], y * sw
    if p and np.linalg.matrix_rank(X) < p:
        raise RankDeficientDesign(f"design with {p} columns is rank deficient")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def fit_outcome_mean(
    panel,
    arm: int,
    conditioning: str,
    design,
    weights: Optional[np.ndarray] = None,
    stratified: Optional[bool] = None,
) -> OutcomeMeanFit:
    """Least squares outcome mean on observed rows.

    Parameters
    ----------
    panel : PanelDataset
    arm : {0, 1}
    conditioning : {"K", "V"}
        ``"K"`` fits within the arm stratum (treatment terms are dropped
        since they are constant there).  ``"V"`` fits one pooled model with
        treatment as a regressor unless ``stratified=True``.
    design : Design or str
    weights : ndarray, optional
        Per-row weights (e.g. inverse observation intensity).  ``None``
        means ordinary least squares.
    stratified : bool, optional
        Override the default pooling rule.

    Raises
    ------
    InsufficientRows, RankDeficientDesign
    """
    if conditioning not in ("K", "V"):
        raise ValueError("conditioning must be 'K' or 'V'")
    design = Design.parse(design)
    if conditioning == "K":
        design.check_blocks(panel, {"A", "K", "P", "t"})
    if stratified is None:
        stratified = conditioning == "K"
    rows = (panel.observed == 1) & (panel.at_risk == 1)
    if stratified:
        rows &= panel.treatment == arm
        design = design.drop_columns({"A", "treatment"})
    X = design.matrix(panel)[rows]
    y = panel.outcome[rows]
    w = None if weights is None else np.asarray(weights, dtype=float)[rows]
    coef = least_squares(X, y, w)
    return OutcomeMeanFit(
        arm=int(arm),
        conditioning=conditioning,
        coefficients=coef,
        design=design,
        weighting="observed" if weights is None else "weighted",
        pooled=not stratified,
        n_rows=int(rows.sum()),
    )
