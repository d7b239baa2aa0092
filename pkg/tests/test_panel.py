import numpy as np
import pytest

from conftest import random_panel, toy_schema
from qrmsm.exceptions import PanelFormatError
from qrmsm.panel import (
    PanelDataset,
    PanelSchema,
    TimeGrid,
    load_panel_csv,
    validate_panel,
    write_panel_csv,
)
from qrmsm.simgen import DGPConfig, simulate_cohort

HEADER = "subject_id,bin,treatment,at_risk,observed,outcome,K1,K2,M,P\n"


def _write(tmp_path, body, name="p.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return path


class TestTimeGrid:
    def test_default_grid_has_twenty_bins(self):
        g = TimeGrid()
        assert g.n_bins == 20
        assert np.allclose(g.times()[:3], [0.0, 0.1, 0.2])

    @pytest.mark.parametrize("kw", [dict(start=1, end=1), dict(bin_width=0), dict(end=2.05, bin_width=0.1)])
    def test_invalid_grids_rejected(self, kw):
        with pytest.raises(PanelFormatError):
            TimeGrid(**kw)


class TestLoad:
    def test_minimal_file(self, tmp_path):
        body = "a,0,1,1,1,2.5,0.1,1,0.3,0.2\na,1,0,1,0,,0.1,1,0.4,0.2\nb,0,0,1,1,1.0,-1,0,0.1,0.5\nb,1,1,1,0,,-1,0,0.2,0.5\n"
        ds = load_panel_csv(_write(tmp_path, body), toy_schema(2))
        assert ds.n_rows == 4 and ds.n_subjects == 2
        assert sum(len(s.rows) for s in ds.subjects) == 4
        assert ds.subjects[0].rows[1].outcome is None

    def test_rows_sorted_by_bin_within_subject(self, tmp_path):
        body = "a,1,0,1,0,,0.1,1,0.4,0.2\na,0,1,1,1,2.5,0.1,1,0.3,0.2\n"
        ds = load_panel_csv(_write(tmp_path, body), toy_schema(2))
        assert list(ds.bin) == [0, 1]

    def test_outcome_without_observation_names_row(self, tmp_path):
        body = "a,0,1,1,1,2.5,0.1,1,0.3,0.2\na,1,0,1,0,7.0,0.1,1,0.4,0.2\n"
        with pytest.raises(PanelFormatError, match="row 3"):
            load_panel_csv(_write(tmp_path, body), toy_schema(2))

    def test_non_binary_treatment(self, tmp_path):
        body = "a,0,2,1,1,2.5,0.1,1,0.3,0.2\n"
        with pytest.raises(PanelFormatError, match="row 2.*treatment"):
            load_panel_csv(_write(tmp_path, body), toy_schema(2))

    def test_duplicate_subject_bin(self, tmp_path):
        body = "a,0,1,1,1,2.5,0.1,1,0.3,0.2\na,0,1,1,1,2.5,0.1,1,0.3,0.2\n"
        with pytest.raises(PanelFormatError, match="row 3.*duplicate"):
            load_panel_csv(_write(tmp_path, body), toy_schema(2))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("subject_id,bin,treatment,at_risk,observed,outcome,K1,K2,M\na,0,1,1,1,1,0,0,0\n")
        with pytest.raises(PanelFormatError, match="P"):
            load_panel_csv(path, toy_schema(2))

    def test_missing_covariate_value_is_an_error(self, tmp_path):
        body = "a,0,1,1,1,2.5,,1,0.3,0.2\n"
        with pytest.raises(PanelFormatError, match="row 2"):
            load_panel_csv(_write(tmp_path, body), toy_schema(2))


def test_simulated_cohort_round_trips(tmp_path):
    ds = simulate_cohort(DGPConfig.from_gamma_set("bernoulli", 2, 40), 7)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_panel_csv(ds, p1)
    back = load_panel_csv(p1, ds.schema)
    assert back.equals(ds)
    write_panel_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


class TestValidate:
    def test_well_formed(self, rng):
        assert validate_panel(random_panel(rng)).ok

    def test_non_monotone_censoring(self):
        s = toy_schema(3)
        ds = PanelDataset([1, 1, 1], [0, 1, 2], [0, 1, 0], [1, 0, 1], [1, 0, 0], [1.0, np.nan, np.nan],
                          np.zeros((3, 2)), np.zeros(3), np.zeros(3), s)
        rep = validate_panel(ds)
        assert rep.kinds().count("censoring non-monotone") == 1

    def test_arm_unidentifiable(self):
        s = toy_schema(2)
        ds = PanelDataset([1, 1], [0, 1], [0, 1], [1, 1], [1, 0], [1.0, np.nan],
                          np.zeros((2, 2)), np.zeros(2), np.zeros(2), s)
        assert validate_panel(ds).kinds() == ["arm unidentifiable"]

    def test_observed_while_censored(self):
        s = toy_schema(2)
        ds = PanelDataset([1, 1], [0, 1], [0, 1], [1, 0], [1, 1], [1.0, 2.0],
                          np.zeros((2, 2)), np.zeros(2), np.zeros(2), s)
        assert "observed while not at risk" in validate_panel(ds).kinds()

    def test_pure(self, rng):
        ds = random_panel(rng)
        before = ds.observed.copy()
        assert validate_panel(ds) == validate_panel(ds)
        assert np.array_equal(before, ds.observed)


def test_panel_arrays_are_read_only(rng):
    ds = random_panel(rng)
    with pytest.raises(ValueError):
        ds.outcome[0] = 1.0


def test_take_subjects_relabels_repeats(rng):
    ds = random_panel(rng, n_subjects=5)
    sub = ds.take_subjects([2, 2, 0])
    assert sub.n_subjects == 3
    assert sub.n_rows == 2 * np.sum(ds.subject_index == 2) + np.sum(ds.subject_index == 0)


def test_schema_round_trip():
    s = toy_schema(3)
    assert PanelSchema.from_dict(s.to_dict()) == s


def test_reserved_covariate_name_rejected():
    with pytest.raises(PanelFormatError):
        PanelSchema(("outcome",))
