"""Data-generating process for the simulation study.

Per subject, three baseline confounders are drawn once.  At every bin of a
0-to-2 grid of width 0.1 the treatment, a mediator and a pure predictor are
drawn, the outcome is built from them, and an observation indicator decides
whether the outcome is seen.  Two observation mechanisms are supported: a
truncated proportional-rate probability and a logistic probability.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ..exceptions import ConfigError
from ..panel import PanelDataset, PanelSchema, TimeGrid

MECHANISMS = ("poisson", "bernoulli")
MEDIATOR_MEANS = ("refit", "analytic")

POISSON_GAMMA_SETS = {
    1: (0.0, 0.0, 0.0, 0.0, 0.0, -5.0),
    2: (0.5, 0.3, -0.5, -2.0, 0.0, -3.0),
    3: (0.5, -0.5, -0.2, -1.0, 1.0, -3.0),
    4: (-1.0, -0.8, 0.1, 0.3, -1.0, -3.0),
}
BERNOULLI_GAMMA_SETS = {
    1: (0.4, 0.0, 0.0, 0.0, 0.0, 0.0, -5.0),
    2: (0.4, 1.0, -1.0, -0.5, -2.0, 0.0, -3.0),
    3: (0.4, 0.5, -0.5, -0.2, -1.0, 1.0, -3.0),
    4: (0.4, -0.5, 0.8, 0.1, 0.3, -1.0, -3.0),
}

SCHEMA = PanelSchema(confounders=("K1", "K2", "K3"), mediators=("M",), pure_predictors=("P",), grid=TimeGrid(0.0, 2.0, 0.1))

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replicate_seed(base_seed: int, index: int, *stream: int) -> np.random.SeedSequence:
    """Independent seed for replicate ``index`` derived from ``base_seed``."""
    return np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),) + tuple(int(s) for s in stream))


@dataclass(frozen=True)
class DGPConfig:
    """Simulation recipe.

    Parameters
    ----------
    n : int
        Number of subjects.
    mechanism : {"poisson", "bernoulli"}
        Observation mechanism.
    gamma : tuple of float
        Observation coefficients: 6 for ``poisson`` on
        ``(A, M, K1, K2, K3, P)``, 7 for ``bernoulli`` (intercept first).
    proportionality_constant : float
        Multiplier ``c`` of the rate in the ``poisson`` mechanism.
    mediator_mean : {"refit", "analytic"}
        How ``E[M | A, K]`` in the outcome is obtained.  ``refit`` fits it
        by least squares on each simulated cohort, which makes the mediator
        residual exactly orthogonal to ``(1, A, K)`` within the cohort and
        shrinks replicate-to-replicate variability.  ``analytic`` uses the
        population mean of the mediator in each arm.
    """

    n: int = 1000
    mechanism: str = "bernoulli"
    gamma: Tuple[float, ...] = BERNOULLI_GAMMA_SETS[1]
    proportionality_constant: float = 1.0
    grid: TimeGrid = field(default_factory=lambda: SCHEMA.grid)
    treatment_coefs: Tuple[float, ...] = (-0.5, 0.8, -0.4, -0.4)
    k1: Tuple[float, float] = (1.0, 1.0)
    k2_prob: float = 0.55
    k3: Tuple[float, float] = (0.0, 1.0)
    mediator_treated: Tuple[float, float] = (2.0, 1.0)
    mediator_control: Tuple[float, float] = (4.0, 2.0)
    pure_predictor: Tuple[float, float] = (0.5, 0.09)
    outcome_coefs: Tuple[float, ...] = (0.5, 1.0, 0.4, 0.05, -0.6, 3.0, 0.3)
    noise_var: float = 0.01
    intercept_var: float = 0.04
    rate_multiplier: Tuple[float, float] = (0.25, 0.05)
    mediator_mean: str = "refit"

    def __post_init__(self):
        for name in ("gamma", "treatment_coefs", "k1", "k3", "mediator_treated", "mediator_control",
                     "pure_predictor", "outcome_coefs", "rate_multiplier"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if isinstance(self.grid, dict):
            object.__setattr__(self, "grid", TimeGrid(**self.grid))
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}, got {self.mechanism!r}")
        if self.mediator_mean not in MEDIATOR_MEANS:
            raise ConfigError(f"mediator_mean must be one of {MEDIATOR_MEANS}, got {self.mediator_mean!r}")
        want = 6 if self.mechanism == "poisson" else 7
        if len(self.gamma) != want:
            raise ConfigError(f"{self.mechanism} mechanism needs {want} gamma values, got {len(self.gamma)}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        variances = (self.k1[1], self.k3[1], self.mediator_treated[1], self.mediator_control[1],
                     self.pure_predictor[1], self.noise_var, self.intercept_var)
        if min(variances) <= 0:
            raise ConfigError("all variances must be positive")
        if not 0 < self.k2_prob < 1:
            raise ConfigError("k2_prob must lie in (0, 1)")
        if not self.proportionality_constant > 0:
            raise ConfigError("proportionality_constant must be positive")
        if len(self.treatment_coefs) != 4 or len(self.outcome_coefs) != 7:
            raise ConfigError("treatment_coefs needs 4 values and outcome_coefs 7")

    @classmethod
    def from_gamma_set(cls, mechanism: str, gamma_set: int, n: int = 1000, **kwargs) -> "DGPConfig":
        """Configuration for one of the four standard coefficient sets."""
        from .calibration import POISSON_CONSTANT

        sets = POISSON_GAMMA_SETS if mechanism == "poisson" else BERNOULLI_GAMMA_SETS
        if gamma_set not in sets:
            raise ConfigError(f"gamma_set must be one of {sorted(sets)}")
        if mechanism == "poisson":
            kwargs.setdefault("proportionality_constant", POISSON_CONSTANT)
        return cls(n=n, mechanism=mechanism, gamma=sets[gamma_set], **kwargs)

    def replace(self, **changes) -> "DGPConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.to_dict()
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        d = dict(d)
        if "grid" in d and isinstance(d["grid"], dict):
            d["grid"] = TimeGrid(**d["grid"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CohortTruth:
    """Quantities known only to the simulator, per row of the panel."""

    e1: np.ndarray
    rho: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    mediator_fit: np.ndarray


def observation_probability(
    A, M, K1, K2, K3, P, t, mechanism: str, gamma: Sequence[float], proportionality_constant: float = 1.0,
    rate_multiplier: Tuple[float, float] = (0.25, 0.05),
) -> np.ndarray:
    """Per-bin probability that the outcome is observed.

    ``bernoulli``: ``expit(g1 + g2 A + g3 M + g4 K1 + g5 K2 + g6 K3 + g7 P)``.
    ``poisson``: ``min(1, c * 0.25 (t + 0.05) * exp(g' (A, M, K1, K2, K3, P)))``.
    """
    V = np.column_stack([np.asarray(x, dtype=float) for x in (A, M, K1, K2, K3, P)])
    g = np.asarray(gamma, dtype=float)
    if mechanism == "bernoulli":
        if g.size != 7:
            raise ConfigError("bernoulli mechanism needs 7 gamma values")
        return expit(g[0] + V @ g[1:])
    if mechanism == "poisson":
        if g.size != 6:
            raise ConfigError("poisson mechanism needs 6 gamma values")
        scale, shift = rate_multiplier
        with np.errstate(over="ignore"):
            rate = proportionality_constant * scale * (np.asarray(t, dtype=float) + shift) * np.exp(V @ g)
        return np.minimum(1.0, rate)
    raise ConfigError(f"unknown mechanism {mechanism!r}")


def observation_indicators(
    A, M, K1, K2, K3, P, t, mechanism: str, gamma: Sequence[float], proportionality_constant: float = 1.0,
    seed: SeedLike = None, rate_multiplier: Tuple[float, float] = (0.25, 0.05),
) -> np.ndarray:
    """Draw observation indicators ``dN ~ Bernoulli(p)`` for every bin."""
    p = observation_probability(A, M, K1, K2, K3, P, t, mechanism, gamma, proportionality_constant, rate_multiplier)
    return (make_rng(seed).random(p.shape[0]) < p).astype(float)


def simulate_cohort_with_truth(cfg: DGPConfig, seed: SeedLike = None) -> Tuple[PanelDataset, CohortTruth]:
    """Simulate one cohort and return it with the simulator's oracle quantities.

    Both potential mediators are drawn at every bin so that potential
    outcomes ``Y^0`` and ``Y^1`` are available; the observed outcome is the
    one matching the drawn treatment.
    """
    rng = make_rng(seed)
    n, nb = cfg.n, cfg.grid.n_bins
    N = n * nb
    K1 = np.repeat(rng.normal(cfg.k1[0], np.sqrt(cfg.k1[1]), n), nb)
    K2 = np.repeat((rng.random(n) < cfg.k2_prob).astype(float), nb)
    K3 = np.repeat(rng.normal(cfg.k3[0], np.sqrt(cfg.k3[1]), n), nb)
    b = cfg.treatment_coefs
    e1 = expit(b[0] + b[1] * K1 + b[2] * K2 + b[3] * K3)
    A = (rng.random(N) < e1).astype(float)
    M1 = rng.normal(cfg.mediator_treated[0], np.sqrt(cfg.mediator_treated[1]), N)
    M0 = rng.normal(cfg.mediator_control[0], np.sqrt(cfg.mediator_control[1]), N)
    M = np.where(A == 1, M1, M0)
    P = rng.normal(cfg.pure_predictor[0], np.sqrt(cfg.pure_predictor[1]), N)
    phi = np.repeat(rng.normal(0.0, np.sqrt(cfg.intercept_var), n), nb)
    eps = phi + rng.normal(0.0, np.sqrt(cfg.noise_var), N)

    # E[M | A, K] by in-sample least squares, as the outcome uses its residual
    X = np.column_stack([np.ones(N), A, K1, K2, K3])
    if cfg.mediator_mean == "refit":
        mfit, *_ = np.linalg.lstsq(X, M, rcond=None)
    else:
        m0, m1 = cfg.mediator_control[0], cfg.mediator_treated[0]
        mfit = np.array([m0, m1 - m0, 0.0, 0.0, 0.0])
    base_k = mfit[0] + mfit[2] * K1 + mfit[3] * K2 + mfit[4] * K3
    kappa, bA, c1, c2, c3, cM, cP = cfg.outcome_coefs
    common = kappa + c1 * K1 + c2 * K2 + c3 * K3 + cP * P + eps
    y0 = common + cM * (M0 - base_k)
    y1 = common + bA + cM * (M1 - base_k - mfit[1])
    Y = np.where(A == 1, y1, y0)

    t = np.tile(cfg.grid.times(), n)
    rho = observation_probability(A, M, K1, K2, K3, P, t, cfg.mechanism, cfg.gamma,
                                  cfg.proportionality_constant, cfg.rate_multiplier)
    dN = (rng.random(N) < rho).astype(float)

    panel = PanelDataset(
        subject_id=np.repeat(np.arange(n), nb),
        bin=np.tile(np.arange(nb), n),
        treatment=A,
        at_risk=np.ones(N),
        observed=dN,
        outcome=np.where(dN == 1, Y, np.nan),
        K=np.column_stack([K1, K2, K3]),
        M=M,
        P=P,
        schema=PanelSchema(SCHEMA.confounders, SCHEMA.mediators, SCHEMA.pure_predictors, cfg.grid),
    )
    return panel, CohortTruth(e1=e1, rho=rho, y0=y0, y1=y1, mediator_fit=mfit)


def simulate_cohort(cfg: DGPConfig, seed: SeedLike = None) -> PanelDataset:
    """Simulate one cohort (outcomes present only at observed bins)."""
    return simulate_cohort_with_truth(cfg, seed)[0]


def event_percentages(panel: PanelDataset) -> Tuple[float, float]:
    """Observed bins per 100 person-bins in arm 0 and arm 1."""
    out = []
    for a in (0, 1):
        rows = (panel.treatment == a) & (panel.at_risk == 1)
        out.append(100.0 * float(panel.observed[rows].mean()) if rows.any() else float("nan"))
    return out[0], out[1]
