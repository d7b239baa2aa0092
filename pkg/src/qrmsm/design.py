"""Design formulas: an optional intercept plus transformed panel columns.

A formula string such as ``"1 + K1 + sin(K1) + square(P)"`` parses into a
:class:`Design`.  Misspecified nuisance models are expressed purely as
different designs, never as special code paths.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .exceptions import ConfigError

TRANSFORMS = {
    "identity": lambda x: x,
    "sin": np.sin,
    "square": np.square,
    "log1p": np.log1p,
}
_ALIASES = {"sine": "sin", "": "identity"}
_TERM = re.compile(r"^(?:(\w+)\()?\s*([A-Za-z_]\w*)\s*\)?$")


@dataclass(frozen=True)
class Term:
    """A single design column: ``transform(column)``."""

    column: str
    transform: str = "identity"

    def __post_init__(self):
        t = _ALIASES.get(self.transform, self.transform)
        if t not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}; choose from {sorted(TRANSFORMS)}")
        object.__setattr__(self, "transform", t)

    @property
    def label(self) -> str:
        return self.column if self.transform == "identity" else f"{self.transform}({self.column})"

    def evaluate(self, panel) -> np.ndarray:
        return TRANSFORMS[self.transform](panel.column(self.column))


@dataclass(frozen=True)
class Design:
    """Ordered list of terms with an optional leading intercept."""

    terms: Tuple[Term, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        labels = [t.label for t in self.terms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate design terms: {labels}")

    @classmethod
    def parse(cls, formula: Union[str, "Design"]) -> "Design":
        """Parse ``"1 + K1 + sin(M)"``; ``"0"`` or ``"-1"`` drops the intercept."""
        if isinstance(formula, Design):
            return formula
        parts = [p.strip() for p in str(formula).split("+")]
        intercept = False
        terms = []
        for p in parts:
            if not p:
                continue
            if p == "1":
                intercept = True
                continue
            if p in ("0", "-1"):
                continue
            m = _TERM.match(p)
            if m is None or (m.group(1) is None) == p.endswith(")"):
                raise ConfigError(f"cannot parse design term {p!r}")
            terms.append(Term(m.group(2), m.group(1) or "identity"))
        return cls(tuple(terms), intercept)

    @property
    def labels(self) -> Tuple[str, ...]:
        return (("(Intercept)",) if self.intercept else ()) + tuple(t.label for t in self.terms)

    @property
    def columns(self) -> Tuple[str, ...]:
        return tuple(t.column for t in self.terms)

    def __len__(self):
        return len(self.labels)

    def __str__(self):
        return " + ".join((["1"] if self.intercept else []) + [t.label for t in self.terms]) or "0"

    def without_intercept(self) -> "Design":
        return Design(self.terms, False)

    def drop_columns(self, columns) -> "Design":
        columns = set(columns)
        return Design(tuple(t for t in self.terms if t.column not in columns), self.intercept)

    def check_blocks(self, panel, allowed) -> None:
        """Raise if a term uses a column outside the allowed blocks."""
        for t in self.terms:
            block = panel.block_of(t.column)
            if block not in allowed:
                raise ConfigError(f"design term {t.label} uses block {block}; allowed blocks are {sorted(allowed)}")

    def matrix(self, panel, **overrides) -> np.ndarray:
        """Evaluate the design on every row of ``panel``.

        Keyword overrides replace a named column by a constant or array,
        e.g. ``A=1`` evaluates a pooled outcome model at treatment 1.
        """
        cols = []
        if self.intercept:
            cols.append(np.ones(panel.n_rows))
        for t in self.terms:
            if t.column in overrides or (t.column == "treatment" and "A" in overrides):
                raw = overrides.get(t.column, overrides.get("A"))
                x = np.broadcast_to(np.asarray(raw, dtype=float), (panel.n_rows,))
                cols.append(TRANSFORMS[t.transform](x))
            else:
                cols.append(t.evaluate(panel))
        if not cols:
            return np.empty((panel.n_rows, 0))
        return np.column_stack(cols).astype(float, copy=False)
