"""Robustness scenarios: which nuisance models are correctly specified.

A scenario flips each of the four nuisance designs between the correct
formula and a misspecified recipe.  Estimators only read the flags of the
models they consume, so duplicate (estimator, relevant flags) pairs are
collapsed before any fitting happens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from ..exceptions import ConfigError
from ..pipeline import (
    CORRECT_DESIGNS,
    MISSPECIFIED_DESIGNS,
    REQUIRES,
    NuisanceCache,
    NuisanceSpec,
    NuisanceSuite,
    fit_nuisance_suite,
)

MODELS = ("propensity", "observation", "outcome_k", "outcome_v")

# flags in MODELS order; True = correctly specified
SCENARIO_FLAGS: Dict[str, Tuple[bool, bool, bool, bool]] = {
    "all-correct": (True, True, True, True),
    "a": (True, True, False, False),
    "b": (False, False, True, True),
    "c": (False, True, True, False),
    "d": (True, False, False, True),
    "ipt-only": (True, False, False, False),
    "iiv-only": (False, True, False, False),
    "none-correct": (False, False, False, False),
}
DEFAULT_SCENARIOS = tuple(SCENARIO_FLAGS)
DEFAULT_ESTIMATORS = ("OLS", "IPT", "FIPTM", "AAIIW")

# display order of the summary table
LABEL_ORDER = (
    "OLS", "IPTc", "IPTnc", "DWc", "DWiptc", "DWiivc", "DWnc",
    "AAIIWc", "AAIIWs.a", "AAIIWs.b", "AAIIWs.c", "AAIIWs.d",
    "IIVc", "IIVnc", "AAIIWnc",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """Correct/misspecified flag per nuisance model.

    Parameters
    ----------
    tag : str
    propensity, observation, outcome_k, outcome_v : bool
        ``True`` means the correct design is used.
    recipes : mapping, optional
        Misspecified design per model (defaults to the package recipes).
    correct : mapping, optional
        Correct design per model (defaults to the package designs).
    """

    tag: str
    propensity: bool = True
    observation: bool = True
    outcome_k: bool = True
    outcome_v: bool = True
    recipes: Tuple[Tuple[str, str], ...] = ()
    correct: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("recipes", "correct"):
            val = getattr(self, name)
            if isinstance(val, Mapping):
                val = tuple(sorted(val.items()))
            bad = {k for k, _ in val} - set(MODELS)
            if bad:
                raise ConfigError(f"unknown nuisance model(s) in {name}: {sorted(bad)}")
            object.__setattr__(self, name, tuple(val))

    @classmethod
    def named(cls, tag: str, recipes: Optional[Mapping[str, str]] = None,
              correct: Optional[Mapping[str, str]] = None) -> "ScenarioSpec":
        if tag not in SCENARIO_FLAGS:
            raise ConfigError(f"unknown scenario {tag!r}; choose from {sorted(SCENARIO_FLAGS)}")
        return cls(tag, *SCENARIO_FLAGS[tag], recipes=tuple(sorted((recipes or {}).items())),
                   correct=tuple(sorted((correct or {}).items())))

    @property
    def flags(self) -> Tuple[bool, bool, bool, bool]:
        return (self.propensity, self.observation, self.outcome_k, self.outcome_v)

    def design(self, model: str) -> str:
        ok = dict(zip(MODELS, self.flags))[model]
        table = {**CORRECT_DESIGNS, **dict(self.correct)} if ok else {**MISSPECIFIED_DESIGNS, **dict(self.recipes)}
        return table[model]

    def nuisance_spec(self, base: NuisanceSpec) -> NuisanceSpec:
        return base.replace(**{m: self.design(m) for m in MODELS})

    def relevant_flags(self, estimator: str) -> Tuple[bool, ...]:
        return tuple(f for m, f in zip(MODELS, self.flags) if m in REQUIRES[estimator])


def display_label(estimator: str, scenario: ScenarioSpec) -> str:
    """Row label used in reports (e.g. ``DWiptc`` or ``AAIIWs.b``)."""
    f = dict(zip(MODELS, scenario.flags))
    if estimator == "OLS":
        return "OLS"
    if estimator == "IPT":
        return "IPTc" if f["propensity"] else "IPTnc"
    if estimator == "IIV":
        return "IIVc" if f["observation"] else "IIVnc"
    if estimator == "FIPTM":
        return {(True, True): "DWc", (True, False): "DWiptc", (False, True): "DWiivc",
                (False, False): "DWnc"}[(f["propensity"], f["observation"])]
    if estimator == "AAIIW":
        for tag, suffix in (("all-correct", "c"), ("a", "s.a"), ("b", "s.b"), ("c", "s.c"), ("d", "s.d"),
                            ("none-correct", "nc")):
            if scenario.flags == SCENARIO_FLAGS[tag]:
                return "AAIIW" + suffix
        return "AAIIW[" + "".join("1" if x else "0" for x in scenario.flags) + "]"
    raise ConfigError(f"unknown estimator {estimator!r}")


@dataclass(frozen=True)
class Cell:
    """One (estimator, scenario) combination to evaluate."""

    estimator: str
    label: str
    scenario: ScenarioSpec


def plan_cells(scenarios: Sequence[ScenarioSpec], estimators: Sequence[str]) -> List[Cell]:
    """Deduplicate (estimator, scenario) pairs on the flags each estimator reads."""
    for e in estimators:
        if e not in REQUIRES:
            raise ConfigError(f"unknown estimator {e!r}; choose from {sorted(REQUIRES)}")
    seen, cells = {}, []
    for e in estimators:
        for s in scenarios:
            key = (e, s.relevant_flags(e), s.recipes, s.correct)
            if key in seen:
                continue
            seen[key] = True
            cells.append(Cell(e, display_label(e, s), s))
    rank = {lab: i for i, lab in enumerate(LABEL_ORDER)}
    labels = [c.label for c in cells]
    if len(set(labels)) != len(labels):
        # custom recipes can reuse a label; keep them apart by scenario tag
        cells = [Cell(c.estimator, f"{c.label}/{c.scenario.tag}" if labels.count(c.label) > 1 else c.label, c.scenario)
                 for c in cells]
    return sorted(cells, key=lambda c: (rank.get(c.label.split("/")[0], len(rank)), c.label))


def scenario_nuisance_suite(panel, spec: ScenarioSpec, base: Optional[NuisanceSpec] = None,
                            cache: Optional[NuisanceCache] = None) -> NuisanceSuite:
    """Fit all four nuisance models under the scenario's designs."""
    base = base or NuisanceSpec()
    return fit_nuisance_suite(panel, spec.nuisance_spec(base), MODELS, cache)


def parse_scenarios(items: Sequence, recipes: Optional[Mapping[str, str]] = None) -> List[ScenarioSpec]:
    """Build scenarios from tags or dicts ``{"tag", "propensity", ...}``."""
    out = []
    for it in items:
        if isinstance(it, ScenarioSpec):
            out.append(it)
        elif isinstance(it, str):
            out.append(ScenarioSpec.named(it, recipes))
        elif isinstance(it, Mapping):
            d = dict(it)
            tag = d.pop("tag")
            rec = {**(recipes or {}), **d.pop("recipes", {})}
            if set(d) - set(MODELS):
                raise ConfigError(f"unknown scenario fields: {sorted(set(d) - set(MODELS))}")
            if tag in SCENARIO_FLAGS and not d:
                out.append(ScenarioSpec.named(tag, rec))
            else:
                flags = {m: bool(d.get(m, True)) for m in MODELS}
                out.append(ScenarioSpec(tag, **flags, recipes=tuple(sorted(rec.items()))))
        else:
            raise ConfigError(f"cannot interpret scenario {it!r}")
    return out
