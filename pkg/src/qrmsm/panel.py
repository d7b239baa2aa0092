"""Long-format longitudinal panel: one row per subject per time bin.

The panel carries the treatment ``A``, three covariate blocks (confounders
``K``, mediators ``M`` and pure predictors ``P``), the at-risk flag ``xi``,
the observation indicator ``dN`` and the outcome ``Y`` (absent unless the
bin is observed).  Arrays are stored read-only so a dataset can be shared
between worker processes without defensive copies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import PanelFormatError

REQUIRED_COLUMNS = ("subject_id", "bin", "treatment", "at_risk", "observed", "outcome")
TREATMENT_ALIASES = ("A", "treatment")


@dataclass(frozen=True)
class TimeGrid:
    """Regular grid of time bins ``[start, end)`` of width ``bin_width``.

    Parameters
    ----------
    start, end : float
        Study window.  ``end`` is the horizon tau.
    bin_width : float
        Width of each bin.  ``(end - start) / bin_width`` must be an integer.
    """

    start: float = 0.0
    end: float = 2.0
    bin_width: float = 0.1

    def __post_init__(self):
        if not self.start < self.end:
            raise PanelFormatError(f"grid start {self.start} must be below end {self.end}")
        if not self.bin_width > 0:
            raise PanelFormatError("grid bin_width must be positive")
        ratio = (self.end - self.start) / self.bin_width
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise PanelFormatError(
                f"grid span {self.end - self.start} is not a whole number of bins of width {self.bin_width}"
            )

    @property
    def n_bins(self) -> int:
        return int(round((self.end - self.start) / self.bin_width))

    def times(self) -> np.ndarray:
        """Left endpoint of every bin."""
        return self.start + np.arange(self.n_bins) * self.bin_width

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "bin_width": self.bin_width}


@dataclass(frozen=True)
class PanelSchema:
    """Maps covariate columns of a CSV file to the K, M and P blocks."""

    confounders: Tuple[str, ...] = ()
    mediators: Tuple[str, ...] = ()
    pure_predictors: Tuple[str, ...] = ()
    grid: TimeGrid = field(default_factory=TimeGrid)

    def __post_init__(self):
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "mediators", tuple(self.mediators))
        object.__setattr__(self, "pure_predictors", tuple(self.pure_predictors))
        names = self.covariates
        if len(set(names)) != len(names):
            raise PanelFormatError(f"covariate names must be unique, got {names}")
        clash = set(names) & (set(REQUIRED_COLUMNS) | set(TREATMENT_ALIASES) | {"t"})
        if clash:
            raise PanelFormatError(f"covariate names collide with reserved columns: {sorted(clash)}")

    @property
    def covariates(self) -> Tuple[str, ...]:
        return self.confounders + self.mediators + self.pure_predictors

    @classmethod
    def from_dict(cls, d: dict) -> "PanelSchema":
        grid = TimeGrid(**d["grid"]) if "grid" in d else TimeGrid()
        return cls(
            confounders=tuple(d.get("confounders", ())),
            mediators=tuple(d.get("mediators", ())),
            pure_predictors=tuple(d.get("pure_predictors", ())),
            grid=grid,
        )

    def to_dict(self) -> dict:
        return {
            "confounders": list(self.confounders),
            "mediators": list(self.mediators),
            "pure_predictors": list(self.pure_predictors),
            "grid": self.grid.to_dict(),
        }


@dataclass(frozen=True)
class BinRow:
    """One subject-bin record."""

    bin_index: int
    treatment: int
    confounders: Tuple[float, ...]
    mediators: Tuple[float, ...]
    pure_predictors: Tuple[float, ...]
    at_risk: int
    observed: int
    outcome: Optional[float]


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: object
    rows: Tuple[BinRow, ...]


def _scalar(x):
    return x.item() if isinstance(x, np.generic) else x


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class PanelDataset:
    """Immutable long-format panel.

    Rows are sorted by subject (in order of first appearance) and, within
    subject, by bin index.

    Parameters
    ----------
    subject_id : sequence
        Opaque subject identifier per row.
    bin : sequence of int
        Bin index per row, in ``[0, grid.n_bins)``.
    treatment, at_risk, observed : sequence of {0, 1}
    outcome : sequence of float
        ``NaN`` marks an absent outcome.
    K, M, P : array-like, shape (n_rows, p_block)
        Covariate blocks.  A 1-d array is treated as a single column.
    schema : PanelSchema
        Column names of the blocks and the time grid.
    """

    def __init__(self, subject_id, bin, treatment, at_risk, observed, outcome, K, M, P, schema: PanelSchema):
        bins = np.asarray(bin)
        n = bins.shape[0]
        sid = np.asarray(subject_id)
        if sid.shape != (n,):
            raise PanelFormatError("subject_id and bin must have the same length")
        blocks = []
        for name, arr, cols in (("K", K, schema.confounders), ("M", M, schema.mediators), ("P", P, schema.pure_predictors)):
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1) if arr.size else np.empty((n, 0))
            if arr.shape != (n, len(cols)):
                raise PanelFormatError(f"block {name} has shape {arr.shape}, expected {(n, len(cols))}")
            blocks.append(arr)
        vecs = [np.asarray(v) for v in (treatment, at_risk, observed, outcome)]
        if any(v.shape != (n,) for v in vecs):
            raise PanelFormatError("treatment, at_risk, observed and outcome must be 1-d with one entry per row")

        # Stable sort: subjects by first appearance, then bin.
        _, first, codes = np.unique(sid, return_index=True, return_inverse=True)
        rank = np.empty_like(first)
        rank[np.argsort(first, kind="stable")] = np.arange(first.size)
        subj_code = rank[codes.ravel()]
        order = np.lexsort((bins, subj_code))

        self.schema = schema
        self.grid = schema.grid
        self.subject_id = _frozen(sid[order], sid.dtype)
        self.subject_index = _frozen(subj_code[order], np.int64)
        self.bin = _frozen(bins[order], np.int64)
        self.treatment = _frozen(vecs[0][order], float)
        self.at_risk = _frozen(vecs[1][order], float)
        self.observed = _frozen(vecs[2][order], float)
        self.outcome = _frozen(vecs[3][order], float)
        self.K, self.M, self.P = (_frozen(b[order], float) for b in blocks)
        self.n_subjects = int(first.size)
        self._subjects: Optional[Tuple[SubjectRecord, ...]] = None

    # -- basic accessors -------------------------------------------------
    @property
    def n_rows(self) -> int:
        return int(self.bin.shape[0])

    @property
    def column_names(self) -> Dict[str, Tuple[str, ...]]:
        return {"K": self.schema.confounders, "M": self.schema.mediators, "P": self.schema.pure_predictors}

    @property
    def time(self) -> np.ndarray:
        return self.grid.start + self.bin * self.grid.bin_width

    def column(self, name: str) -> np.ndarray:
        """Return a per-row column by name (covariate, ``A``/``treatment``, ``t`` or ``bin``)."""
        if name in TREATMENT_ALIASES:
            return self.treatment
        if name == "t":
            return self.time
        if name == "bin":
            return self.bin.astype(float)
        for block, cols in (("K", self.schema.confounders), ("M", self.schema.mediators), ("P", self.schema.pure_predictors)):
            if name in cols:
                return getattr(self, block)[:, cols.index(name)]
        raise KeyError(f"unknown column {name!r}; available: {self.available_columns()}")

    def available_columns(self) -> List[str]:
        return ["A", "t"] + list(self.schema.covariates)

    def block_of(self, name: str) -> str:
        if name in TREATMENT_ALIASES:
            return "A"
        for block, cols in (("K", self.schema.confounders), ("M", self.schema.mediators), ("P", self.schema.pure_predictors)):
            if name in cols:
                return block
        if name == "t":
            return "t"
        raise KeyError(name)

    @property
    def subjects(self) -> Tuple[SubjectRecord, ...]:
        """Subject-level view (built lazily; the arrays remain the source of truth)."""
        if self._subjects is None:
            out = []
            bounds = np.flatnonzero(np.diff(self.subject_index)) + 1
            for idx in np.split(np.arange(self.n_rows), bounds):
                if idx.size == 0:
                    continue
                rows = tuple(
                    BinRow(
                        bin_index=int(self.bin[i]),
                        treatment=int(self.treatment[i]),
                        confounders=tuple(self.K[i]),
                        mediators=tuple(self.M[i]),
                        pure_predictors=tuple(self.P[i]),
                        at_risk=int(self.at_risk[i]),
                        observed=int(self.observed[i]),
                        outcome=None if math.isnan(self.outcome[i]) else float(self.outcome[i]),
                    )
                    for i in idx
                )
                out.append(SubjectRecord(subject_id=_scalar(self.subject_id[idx[0]]), rows=rows))
            self._subjects = tuple(out)
        return self._subjects

    def take_subjects(self, indices: Sequence[int], relabel: bool = True) -> "PanelDataset":
        """Panel made of the given subjects (by position), repeats allowed.

        With ``relabel`` each drawn copy gets a fresh identifier so repeated
        subjects remain distinct clusters.
        """
        indices = np.asarray(indices, dtype=np.int64)
        starts = np.searchsorted(self.subject_index, np.arange(self.n_subjects))
        ends = np.append(starts[1:], self.n_rows)
        lengths = ends[indices] - starts[indices]
        rows = np.concatenate([np.arange(starts[i], ends[i]) for i in indices]) if indices.size else np.empty(0, np.int64)
        sid = np.repeat(np.arange(indices.size), lengths) if relabel else self.subject_id[rows]
        return PanelDataset(
            sid, self.bin[rows], self.treatment[rows], self.at_risk[rows], self.observed[rows],
            self.outcome[rows], self.K[rows], self.M[rows], self.P[rows], self.schema,
        )

    def with_observed(self, observed, outcome=None) -> "PanelDataset":
        """Copy with a new observation indicator (outcomes outside it are blanked)."""
        observed = np.asarray(observed, dtype=float)
        y = self.outcome if outcome is None else np.asarray(outcome, dtype=float)
        y = np.where(observed == 1, y, np.nan)
        return PanelDataset(
            self.subject_id, self.bin, self.treatment, self.at_risk, observed, y,
            self.K, self.M, self.P, self.schema,
        )

    def to_frame(self):
        """Return a :class:`pandas.DataFrame` copy in CSV column order."""
        import pandas as pd

        data = {
            "subject_id": self.subject_id,
            "bin": self.bin,
            "treatment": self.treatment.astype(int),
            "at_risk": self.at_risk.astype(int),
            "observed": self.observed.astype(int),
            "outcome": self.outcome,
        }
        for name in self.schema.covariates:
            data[name] = self.column(name)
        return pd.DataFrame(data)

    def equals(self, other: "PanelDataset") -> bool:
        """Field-by-field equality (NaN outcomes compare equal)."""
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        same = [
            np.array_equal(self.subject_id.astype(str), other.subject_id.astype(str)),
            np.array_equal(self.bin, other.bin),
            np.array_equal(self.treatment, other.treatment),
            np.array_equal(self.at_risk, other.at_risk),
            np.array_equal(self.observed, other.observed),
            np.array_equal(self.outcome, other.outcome, equal_nan=True),
            np.array_equal(self.K, other.K),
            np.array_equal(self.M, other.M),
            np.array_equal(self.P, other.P),
        ]
        return all(same)

    def __repr__(self):
        return f"PanelDataset(n_subjects={self.n_subjects}, n_rows={self.n_rows}, bins={self.grid.n_bins})"


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    subject_id: object = None
    bin: Optional[int] = None


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> List[str]:
        return [v.kind for v in self.violations]

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def _binary(a: np.ndarray) -> np.ndarray:
    return (a == 0) | (a == 1)


def validate_panel(ds: PanelDataset) -> ValidationReport:
    """Check every structural invariant of a panel.

    Returns
    -------
    ValidationReport
        Empty when the panel is well formed.  Violations are data: the
        function never raises on bad content and never mutates ``ds``.
    """
    out: List[Violation] = []
    sid = ds.subject_id

    def add(kind, rows, message):
        for i in np.flatnonzero(rows)[:20]:
            out.append(Violation(kind, message, _scalar(sid[i]), int(ds.bin[i])))

    for name in ("treatment", "at_risk", "observed"):
        add("non-binary value", ~_binary(getattr(ds, name)), f"{name} must be 0 or 1")
    add("bin outside grid", (ds.bin < 0) | (ds.bin >= ds.grid.n_bins), "bin index outside the time grid")
    same_subject = ds.subject_index[1:] == ds.subject_index[:-1]
    step = np.diff(ds.bin)
    add("duplicate bin", np.r_[False, same_subject & (step == 0)], "duplicate bin within subject")
    add("censoring non-monotone", np.r_[False, same_subject & (ds.at_risk[1:] > ds.at_risk[:-1])],
        "at_risk returns to 1 after censoring")
    has_y = ~np.isnan(ds.outcome)
    add("outcome without observation", has_y & (ds.observed != 1), "outcome present while observed = 0")
    add("observation without outcome", ~has_y & (ds.observed == 1), "observed = 1 but outcome missing")
    add("observed while not at risk", (ds.observed == 1) & (ds.at_risk != 1), "observed = 1 requires at_risk = 1")
    blocks = np.hstack([ds.K, ds.M, ds.P]) if ds.n_rows else np.empty((0, 0))
    if blocks.size:
        add("non-finite covariate", ~np.isfinite(blocks).all(axis=1), "covariates must be finite")
    add("non-finite outcome", has_y & ~np.isfinite(np.where(has_y, ds.outcome, 0.0)), "outcome must be finite")
    for arm in (0, 1):
        if not np.any((ds.observed == 1) & (ds.treatment == arm)):
            out.append(Violation("arm unidentifiable", f"no observed outcome with treatment = {arm}"))
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Write a panel as CSV with full-precision (round-trip) floats."""
    header = list(REQUIRED_COLUMNS) + list(ds.schema.covariates)
    covs = np.hstack([ds.K, ds.M, ds.P])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n_rows):
            y = ds.outcome[i]
            w.writerow(
                [ds.subject_id[i], int(ds.bin[i]), int(ds.treatment[i]), int(ds.at_risk[i]), int(ds.observed[i]),
                 "" if math.isnan(y) else _fmt(y)] + [_fmt(v) for v in covs[i]]
            )


def _parse_binary(value: str, column: str, line: int) -> int:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    try:
        f = float(v)
    except ValueError:
        f = None
    if f in (0.0, 1.0):
        return int(f)
    raise PanelFormatError(f"row {line}: column {column!r} must be 0 or 1, got {value!r}")


def _parse_float(value: str, column: str, line: int) -> float:
    try:
        f = float(value)
    except ValueError:
        raise PanelFormatError(f"row {line}: column {column!r} is not numeric: {value!r}") from None
    if not math.isfinite(f):
        raise PanelFormatError(f"row {line}: column {column!r} is not finite: {value!r}")
    return f


def load_panel_csv(path, schema: PanelSchema) -> PanelDataset:
    """Read a panel from CSV.

    Parameters
    ----------
    path : path-like
        Comma-delimited UTF-8 file with a header row.
    schema : PanelSchema
        Declares which columns form the K, M and P blocks.

    Returns
    -------
    PanelDataset
        Rows normalized by subject and bin.

    Raises
    ------
    PanelFormatError
        Missing column, non-binary flag, outcome present with ``observed=0``,
        duplicated ``(subject_id, bin)`` pair or any other structural
        violation.  Messages name the offending file line.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        missing = [c for c in list(REQUIRED_COLUMNS) + list(schema.covariates) if c not in header]
        if missing:
            raise PanelFormatError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in header}
        cols: Dict[str, list] = {c: [] for c in list(REQUIRED_COLUMNS) + list(schema.covariates)}
        seen: Dict[Tuple[str, int], int] = {}
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise PanelFormatError(f"row {line}: expected {len(header)} fields, got {len(rec)}")
            sid = rec[pos["subject_id"]].strip()
            try:
                b = int(rec[pos["bin"]])
            except ValueError:
                raise PanelFormatError(f"row {line}: bin must be an integer, got {rec[pos['bin']]!r}") from None
            if not 0 <= b < schema.grid.n_bins:
                raise PanelFormatError(f"row {line}: bin {b} outside grid of {schema.grid.n_bins} bins")
            if (sid, b) in seen:
                raise PanelFormatError(f"row {line}: duplicate (subject_id, bin) = ({sid}, {b}), first seen on row {seen[(sid, b)]}")
            seen[(sid, b)] = line
            a = _parse_binary(rec[pos["treatment"]], "treatment", line)
            r = _parse_binary(rec[pos["at_risk"]], "at_risk", line)
            o = _parse_binary(rec[pos["observed"]], "observed", line)
            ytxt = rec[pos["outcome"]].strip()
            if ytxt and o == 0:
                raise PanelFormatError(f"row {line}: outcome present while observed = 0")
            if not ytxt and o == 1:
                raise PanelFormatError(f"row {line}: observed = 1 but outcome is empty")
            if o == 1 and r == 0:
                raise PanelFormatError(f"row {line}: observed = 1 while at_risk = 0")
            cols["subject_id"].append(sid)
            cols["bin"].append(b)
            cols["treatment"].append(a)
            cols["at_risk"].append(r)
            cols["observed"].append(o)
            cols["outcome"].append(_parse_float(ytxt, "outcome", line) if ytxt else math.nan)
            for c in schema.covariates:
                cols[c].append(_parse_float(rec[pos[c]], c, line))

    def block(names):
        return np.column_stack([cols[c] for c in names]) if names else np.empty((len(cols["bin"]), 0))

    ds = PanelDataset(
        np.array(cols["subject_id"], dtype=object), cols["bin"], cols["treatment"], cols["at_risk"],
        cols["observed"], cols["outcome"], block(schema.confounders), block(schema.mediators),
        block(schema.pure_predictors), schema,
    )
    report = validate_panel(ds)
    structural = [v for v in report if v.kind != "arm unidentifiable"]
    if structural:
        v = structural[0]
        raise PanelFormatError(f"{path}: {v.kind} for subject {v.subject_id} at bin {v.bin}: {v.message}")
    return ds


def panel_from_arrays(
    arrays: Dict[str, Iterable],
    schema: PanelSchema,
) -> PanelDataset:
    """Build a panel from a mapping of column name to values (CSV column names)."""
    n = len(np.asarray(arrays["bin"]))

    def block(names):
        return np.column_stack([np.asarray(arrays[c], dtype=float) for c in names]) if names else np.empty((n, 0))

    return PanelDataset(
        arrays["subject_id"], arrays["bin"], arrays["treatment"], arrays["at_risk"], arrays["observed"],
        arrays["outcome"], block(schema.confounders), block(schema.mediators), block(schema.pure_predictors), schema,
    )
