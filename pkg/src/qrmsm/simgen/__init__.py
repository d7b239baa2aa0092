"""Simulation study: data-generating process, scenarios and Monte Carlo harness."""

from .calibration import POISSON_CONSTANT, calibrate_poisson_constant
from .dgp import (
    BERNOULLI_GAMMA_SETS,
    POISSON_GAMMA_SETS,
    CohortTruth,
    DGPConfig,
    event_percentages,
    observation_indicators,
    observation_probability,
    replicate_seed,
    simulate_cohort,
    simulate_cohort_with_truth,
)

__all__ = [
    "BERNOULLI_GAMMA_SETS",
    "POISSON_CONSTANT",
    "POISSON_GAMMA_SETS",
    "CohortTruth",
    "DGPConfig",
    "calibrate_poisson_constant",
    "event_percentages",
    "observation_indicators",
    "observation_probability",
    "replicate_seed",
    "simulate_cohort",
    "simulate_cohort_with_truth",
]
