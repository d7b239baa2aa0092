"""Input validation helpers shared by the estimator classes and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import InsufficientRows, PanelFormatError, PositivityViolation
from .panel import PanelDataset, validate_panel


def check_panel(panel, require_arms: bool = True) -> PanelDataset:
    """Return ``panel`` if it is a structurally valid :class:`PanelDataset`.

    Raises
    ------
    PanelFormatError
        Wrong type or a structural invariant is violated.
    InsufficientRows
        ``require_arms`` and an arm has no observed outcome.
    """
    if not isinstance(panel, PanelDataset):
        raise PanelFormatError(f"expected a PanelDataset, got {type(panel).__name__}")
    report = validate_panel(panel)
    for v in report:
        if v.kind == "arm unidentifiable":
            if require_arms:
                raise InsufficientRows(v.message)
        else:
            raise PanelFormatError(f"{v.kind} (subject {v.subject_id}, bin {v.bin}): {v.message}")
    return panel


def check_probability(p, name: str, allow_one: bool = False) -> np.ndarray:
    """Ensure ``p`` lies in ``(0, 1)`` (or ``(0, 1]`` with ``allow_one``)."""
    p = np.asarray(p, dtype=float)
    upper_ok = p <= 1 if allow_one else p < 1
    if not np.all(np.isfinite(p) & (p > 0) & upper_ok):
        raise PositivityViolation(f"{name} must lie in (0, 1{']' if allow_one else ')'}")
    return p


def check_arm(a) -> int:
    if a not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {a!r}")
    return int(a)
