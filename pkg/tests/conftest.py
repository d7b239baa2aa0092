import numpy as np
import pytest

from qrmsm.panel import PanelDataset, PanelSchema, TimeGrid


def toy_schema(n_bins: int = 4) -> PanelSchema:
    return PanelSchema(("K1", "K2"), ("M",), ("P",), TimeGrid(0.0, float(n_bins), 1.0))


def random_panel(rng, n_subjects=30, n_bins=5, p_obs=0.5, censor=True, schema=None) -> PanelDataset:
    """Small random panel with monotone censoring and both arms observed."""
    schema = schema or toy_schema(n_bins)
    while True:
        sid = np.repeat(np.arange(n_subjects), n_bins)
        bins = np.tile(np.arange(n_bins), n_subjects)
        if censor:
            last = rng.integers(1, n_bins + 1, n_subjects)
            risk = (bins < np.repeat(last, n_bins)).astype(float)
        else:
            risk = np.ones(sid.size)
        A = (rng.random(sid.size) < 0.5).astype(float)
        obs = ((rng.random(sid.size) < p_obs) & (risk == 1)).astype(float)
        K = rng.normal(size=(sid.size, len(schema.confounders)))
        M = rng.normal(size=(sid.size, len(schema.mediators)))
        P = rng.normal(size=(sid.size, len(schema.pure_predictors)))
        Y = np.where(obs == 1, 1.0 + A + K[:, 0] + rng.normal(size=sid.size), np.nan)
        ok = all(np.sum((obs == 1) & (A == a)) >= 3 for a in (0, 1))
        if ok:
            return PanelDataset(sid, bins, A, risk, obs, Y, K, M, P, schema)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
