"""Estimating equations for the marginal structural model ``E[Y^a] = beta0 + beta1 * a``.

All estimators work per arm: the arm-``a`` equation is linear in
``zeta_a = beta0 + beta1 * a`` and is solved in closed form, with a bracketing
root finder as an independent cross-check.  Integrals over time are sums over
grid bins; the per-bin baseline rate already carries the bin width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .exceptions import (
    EstimationError,
    InsufficientRows,
    MissingBaseline,
    NonFinitePropensity,
    NoObservedEvents,
    ZeroIntensityAtEvent,
)
from .nuisance import LogisticFit, OutcomeMeanFit, RateFit, least_squares

ESTIMATOR_TAGS = ("OLS", "IPT", "IIV", "FIPTM", "AAIIW")
FORMS = ("wls", "ht")


@dataclass(frozen=True)
class MSMParams:
    beta0: float
    beta1: float

    def __post_init__(self):
        if not (math.isfinite(self.beta0) and math.isfinite(self.beta1)):
            raise EstimationError(f"non-finite estimate ({self.beta0}, {self.beta1})")

    def arm_mean(self, a: int) -> float:
        return self.beta0 + self.beta1 * a

    def as_array(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1])


@dataclass
class EstimateResult:
    """Point estimate with the estimating-equation residuals at the solution.

    Attributes
    ----------
    params : MSMParams
    estimator_tag : str
        One of ``OLS``, ``IPT``, ``IIV``, ``FIPTM``, ``AAIIW``.
    ee_residual : ndarray
        Estimating-equation values at the solution (arm 0 then arm 1).
    root_check : float
        Largest gap between the closed-form and root-solver arm means.
    nuisance_provenance : dict
        Identifiers of the fits that produced the weights.
    """

    params: MSMParams
    estimator_tag: str
    ee_residual: np.ndarray
    root_check: float = 0.0
    nuisance_provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def beta0(self) -> float:
        return self.params.beta0

    @property
    def beta1(self) -> float:
        return self.params.beta1


@dataclass
class WeightSet:
    """Inverse probability of treatment and inverse intensity of visit weights.

    Attributes
    ----------
    e1 : ndarray
        Fitted ``pr(A = 1 | K)`` per row.
    ipt : ndarray
        ``1 / e_a`` for the arm actually taken.
    rho : ndarray
        Fitted observation intensity (or probability) per row.  Stabilized
        weights carry ``exp(gamma' V)`` without the baseline.
    iiv : ndarray
        ``1 / rho``; ``inf`` where the intensity is zero (only allowed at
        bins without an observed outcome).
    stabilized : bool
    mechanism : str
        ``"rate"``, ``"bernoulli"`` or ``"none"`` (unit intensity).
    clipped_count : int
    clip : tuple of float
        Quantile bounds applied to ``ipt`` and ``iiv``.
    """

    e1: np.ndarray
    ipt: np.ndarray
    rho: np.ndarray
    iiv: np.ndarray
    stabilized: bool = False
    mechanism: str = "rate"
    clipped_count: int = 0
    clip: Tuple[float, float] = (0.0, 1.0)
    provenance: Dict[str, str] = field(default_factory=dict)

    def e_arm(self, a: int) -> np.ndarray:
        return self.e1 if a == 1 else 1.0 - self.e1

    def describe(self) -> dict:
        obs = np.isfinite(self.iiv)
        return {
            "ipt_min": float(np.min(self.ipt)),
            "ipt_max": float(np.max(self.ipt)),
            "iiv_min": float(np.min(self.iiv[obs])) if obs.any() else None,
            "iiv_max": float(np.max(self.iiv[obs])) if obs.any() else None,
            "stabilized": self.stabilized,
            "clipped_count": self.clipped_count,
            "clip": list(self.clip),
        }


def _clip_quantiles(w: np.ndarray, rows: np.ndarray, lo: float, hi: float) -> Tuple[np.ndarray, int]:
    if (lo, hi) == (0.0, 1.0) or not rows.any():
        return w, 0
    ql, qh = np.quantile(w[rows], [lo, hi])
    out = w.copy()
    out[rows] = np.clip(w[rows], ql, qh)
    return out, int(np.sum(out[rows] != w[rows]))


def compute_weights(
    panel,
    prop: Union[LogisticFit, np.ndarray, None],
    rate: Union[RateFit, LogisticFit, np.ndarray, None],
    stabilized: bool = False,
    clip: Tuple[float, float] = (0.0, 1.0),
) -> WeightSet:
    """Build the weight set for a panel.

    Parameters
    ----------
    panel : PanelDataset
    prop : LogisticFit, ndarray or None
        Propensity fit, an array of ``pr(A=1|K)`` per row (oracle use), or
        ``None`` for ``e_a = 1`` (no confounding adjustment).
    rate : RateFit, LogisticFit, ndarray or None
        Observation model: Andersen-Gill fit, Bernoulli logistic fit, an
        array of per-row intensities, or ``None`` for unit intensity.
    stabilized : bool
        Drop the baseline from a rate model (``1 / exp(gamma' V)``).
    clip : (float, float)
        Quantile bounds for weight clipping; ``(0, 1)`` disables it.

    Raises
    ------
    NonFinitePropensity
        A fitted propensity is numerically 0 or 1 at an at-risk row.
    ZeroIntensityAtEvent
        Fitted intensity is zero at an observed bin.
    """
    risk = panel.at_risk == 1
    if prop is None:
        e1 = None
    elif isinstance(prop, LogisticFit):
        e1 = prop.predict_panel(panel)
    else:
        e1 = np.asarray(prop, dtype=float)
    if e1 is None:
        ipt = np.ones(panel.n_rows)
        e1 = np.full(panel.n_rows, np.nan)
    else:
        bad = risk & ~((e1 > 0) & (e1 < 1) & (1.0 - e1 > 0))
        if bad.any():
            raise NonFinitePropensity(f"{int(bad.sum())} at-risk rows have propensity 0 or 1")
        ipt = np.where(panel.treatment == 1, 1.0 / e1, 1.0 / (1.0 - e1))

    if rate is None:
        rho, mech = np.ones(panel.n_rows), "none"
    elif isinstance(rate, RateFit):
        rho = rate.relative_rate(panel) * panel.at_risk if stabilized else rate.intensity(panel)
        mech = "rate"
    elif isinstance(rate, LogisticFit):
        rho, mech = rate.predict_panel(panel) * panel.at_risk, "bernoulli"
    else:
        rho, mech = np.asarray(rate, dtype=float), "oracle"
    ev = (panel.observed == 1) & risk
    if np.any(~(rho[ev] > 0)):
        raise ZeroIntensityAtEvent("fitted observation intensity is zero at an observed bin")
    with np.errstate(divide="ignore"):
        iiv = np.where(rho > 0, 1.0 / np.where(rho > 0, rho, 1.0), np.inf)

    lo, hi = clip
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"clip bounds must satisfy 0 <= lo <= hi <= 1, got {clip}")
    ipt, n1 = _clip_quantiles(ipt, risk, lo, hi)
    iiv, n2 = _clip_quantiles(iiv, ev, lo, hi)
    if n2:
        rho = np.where(ev, 1.0 / iiv, rho)
    prov = {
        "propensity": "none" if prop is None else ("fit" if isinstance(prop, LogisticFit) else "array"),
        "observation": mech,
    }
    return WeightSet(e1=e1, ipt=ipt, rho=rho, iiv=iiv, stabilized=bool(stabilized and mech == "rate"),
                     mechanism=mech, clipped_count=n1 + n2, clip=(lo, hi), provenance=prov)


def martingale_residuals(panel, rate: Union[RateFit, LogisticFit, np.ndarray]) -> np.ndarray:
    """``dM = dN - xi * rho`` per row.

    For a rate model ``rho = lambda0(bin) * exp(gamma' V)``; for the
    Bernoulli mechanism ``rho = expit(gamma' V)``.
    """
    if isinstance(rate, RateFit):
        rho = rate.intensity(panel)
    elif isinstance(rate, LogisticFit):
        rho = rate.predict_panel(panel)
    else:
        rho = np.asarray(rate, dtype=float)
    return panel.observed - panel.at_risk * rho


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

def _root_check(U: Callable[[float], float], zeta: float) -> float:
    """Solve ``U(z) = 0`` by bracketing and return ``|root - zeta|``."""
    width = 1.0 + abs(zeta)
    lo, hi = zeta - width, zeta + width
    flo, fhi = U(lo), U(hi)
    k = 0
    while np.sign(flo) == np.sign(fhi) and k < 60:
        width *= 2.0
        lo, hi = zeta - width, zeta + width
        flo, fhi = U(lo), U(hi)
        k += 1
    if np.sign(flo) == np.sign(fhi):
        return 0.0 if abs(U(zeta)) == 0.0 else math.inf
    root = brentq(U, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return abs(root - zeta)


def _finish(tag, means, equations, provenance, check_root) -> EstimateResult:
    m0, m1 = means
    params = MSMParams(beta0=float(m0), beta1=float(m1 - m0))
    resid = np.array([equations[0](m0), equations[1](m1)])
    gap = max(_root_check(equations[a], means[a]) for a in (0, 1)) if check_root else 0.0
    return EstimateResult(params, tag, resid, gap, dict(provenance))


def _observed_outcome(panel) -> np.ndarray:
    ev = (panel.observed == 1) & (panel.at_risk == 1)
    return ev.astype(float), np.where(ev, panel.outcome, 0.0)


def estimate_ols(panel, check_root: bool = True) -> EstimateResult:
    """Unweighted regression of observed ``Y`` on ``{1, A}``."""
    dN, Y = _observed_outcome(panel)
    ev = dN == 1
    A = panel.treatment
    for a in (0, 1):
        if not np.any(ev & (A == a)):
            raise InsufficientRows(f"no observed outcome in arm {a}")
    X = np.column_stack([np.ones(ev.sum()), A[ev]])
    coef = least_squares(X, Y[ev])
    means = (coef[0], coef[0] + coef[1])
    eqs = [(lambda z, a=a: float(np.sum(dN * (A == a) * (Y - z)))) for a in (0, 1)]
    return _finish("OLS", means, eqs, {"weights": "none"}, check_root)


def _weighted_arm_means(panel, w: WeightSet, use_ipt: bool, use_iiv: bool, form: str, tag: str, check_root: bool):
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    dN, Y = _observed_outcome(panel)
    if not dN.any():
        raise NoObservedEvents("no observed outcome")
    A = panel.treatment
    vis = np.where(dN == 1, w.iiv, 0.0) if use_iiv else dN
    means, eqs = [], []
    for a in (0, 1):
        I = (A == a).astype(float)
        inv_e = 1.0 / w.e_arm(a) if use_ipt else np.ones_like(I)
        if form == "wls":
            c = vis * I * inv_e
            den = c.sum()
            if not den > 0:
                raise NoObservedEvents(f"no observed outcome in arm {a}")
            means.append(float(np.sum(c * Y) / den))
            eqs.append(lambda z, c=c: float(np.sum(c * (Y - z))))
        else:
            num = vis * I * np.where(I == 1, inv_e, 0.0)
            den = vis.sum()
            if not np.any(num > 0):
                raise NoObservedEvents(f"no observed outcome in arm {a}")
            means.append(float(np.sum(num * Y) / den))
            eqs.append(lambda z, num=num: float(np.sum(num * Y) - z * den))
    prov = dict(w.provenance, form=form, stabilized=str(w.stabilized))
    return _finish(tag, means, eqs, prov, check_root)


def estimate_fiptm(panel, w: WeightSet, form: str = "wls", check_root: bool = True) -> EstimateResult:
    """Doubly weighted (treatment and visit) estimator.

    Parameters
    ----------
    form : {"wls", "ht"}
        ``"wls"`` solves ``sum dN 1{A=a} (Y - zeta_a) / (e_a rho) = 0``, i.e.
        weighted least squares of ``Y`` on ``{1, A}`` with weights
        ``1 / (e_A rho)``.  ``"ht"`` solves
        ``sum dN {1{A=a} Y / e_a - zeta_a} / rho = 0``, whose denominator
        is ``sum dN / rho`` over all observed bins.
    """
    return _weighted_arm_means(panel, w, True, True, form, "FIPTM", check_root)


def estimate_ipt(panel, w: WeightSet, form: str = "wls", check_root: bool = True) -> EstimateResult:
    """Treatment weights only (visit weights set to 1)."""
    return _weighted_arm_means(panel, w, True, False, form, "IPT", check_root)


def estimate_iiv(panel, w: WeightSet, check_root: bool = True) -> EstimateResult:
    """Visit weights only (treatment weights set to 1).

    Always uses the weighted least squares form: without treatment weights
    the ``"ht"`` form does not target an arm mean.
    """
    return _weighted_arm_means(panel, w, False, True, "wls", "IIV", check_root)


def estimate_aaiiw(
    panel,
    w: WeightSet,
    mu_k: Tuple[Union[OutcomeMeanFit, np.ndarray], Union[OutcomeMeanFit, np.ndarray]],
    mu_v: Tuple[Union[OutcomeMeanFit, np.ndarray], Union[OutcomeMeanFit, np.ndarray]],
    check_root: bool = True,
) -> EstimateResult:
    """Doubly augmented, doubly inverse weighted estimator.

    For each arm ``a`` solves

    ``sum w dN eta - sum (dM / rho) q = 0`` with
    ``eta = 1{A=a} Y / e_a - (1{A=a} - e_a) / e_a * muK_a - zeta_a`` and
    ``q = 1{A=a} muV_a / e_a - (1{A=a} - e_a) / e_a * muK_a - zeta_a``,

    where ``w = 1 / rho`` and ``dM = dN - xi rho``.  The equation is linear
    in ``zeta_a`` with slope ``-sum xi``, giving the closed form

    ``zeta_a = [sum w dN g_a - sum r q_a] / sum xi``,  ``r = xi (dN w - 1)``.

    Writing ``dM / rho`` as ``r`` keeps bins with zero fitted intensity
    (no event in the bin) well defined.

    Parameters
    ----------
    mu_k, mu_v : pair of OutcomeMeanFit or per-row arrays
        Outcome means for arms 0 and 1.

    Raises
    ------
    MissingBaseline
        Weights were built from a stabilized rate model.
    NoObservedEvents
    """
    if w.stabilized:
        raise MissingBaseline("AAIIW needs the unstabilized intensity (baseline rate included)")
    dN, Y = _observed_outcome(panel)
    if not dN.any():
        raise NoObservedEvents("no observed outcome")
    xi = panel.at_risk.astype(float)
    A = panel.treatment
    wv = np.where(dN == 1, w.iiv, 0.0)
    r = xi * (wv * dN - 1.0)
    den = xi.sum()

    def as_array(m):
        return m.predict(panel) if isinstance(m, OutcomeMeanFit) else np.asarray(m, dtype=float)

    means, eqs = [], []
    for a in (0, 1):
        I = (A == a).astype(float)
        e = w.e_arm(a)
        mk, mv = as_array(mu_k[a]), as_array(mu_v[a])
        aug = (I - e) / e * mk
        g = I * Y / e - aug
        q = I * mv / e - aug
        num = float(np.sum(wv * dN * g) - np.sum(r * q))
        means.append(num / den)
        eqs.append(lambda z, num=num: num - z * den)
    prov = dict(w.provenance, outcome_means="fit" if isinstance(mu_k[0], OutcomeMeanFit) else "array")
    return _finish("AAIIW", means, eqs, prov, check_root)


def aaiiw_equation(panel, w: WeightSet, mu_k_a: np.ndarray, mu_v_a: np.ndarray, a: int, zeta: float) -> float:
    """Raw arm-``a`` AAIIW estimating function written term by term.

    Evaluates ``sum_i sum_t [eta dN / rho] - sum_i sum_t [dM (q) / rho]``
    directly from its definition, for use as an independent oracle.
    """
    dN, Y = _observed_outcome(panel)
    xi = panel.at_risk
    A = panel.treatment
    I = (A == a).astype(float)
    e = w.e_arm(a)
    eta = I * Y / e - (I - e) / e * mu_k_a - zeta
    inner = I * mu_v_a / e - (I - e) / e * mu_k_a - zeta
    total = 0.0
    for i in range(panel.n_rows):
        if xi[i] != 1:
            continue
        rho = w.rho[i]
        if dN[i] == 1:
            total += eta[i] / rho
            total -= (1.0 - rho) * inner[i] / rho
        else:
            # dM / rho = -1 for rho > 0 and its limit when rho -> 0
            total += inner[i]
    return total
