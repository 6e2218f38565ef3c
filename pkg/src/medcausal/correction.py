"""Post-hoc probability correction from frozen causal effects, and set selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BOOST, KEEP, PENALIZE = "boost", "keep", "penalize"
BRANCHES = (BOOST, KEEP, PENALIZE)


@dataclass(frozen=True)
class CorrectionConfig:
    delta1: float = 0.97
    delta2: float = 0.90
    tau1: float = 0.10
    tau2: float = 0.10
    threshold: float = 0.5

    def validate(self) -> None:
        if not 0.0 <= self.delta2 < self.delta1 <= 1.0:
            raise ConfigError("need 0 <= delta2 < delta1 <= 1")
        if self.tau1 < 0 or self.tau2 < 0:
            raise ConfigError("tau values must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("selection threshold must lie in (0, 1)")


@dataclass(frozen=True)
class RecommendationResult:
    raw: np.ndarray
    corrected: np.ndarray
    selected: frozenset[int]
    branch: tuple[str, ...]
    effect: np.ndarray


def max_relevant_effect(med: int, diseases, procedures, effects_dm, effects_pm) -> float:
    """Largest effect of ``med`` over the visit's diseases and procedures (0 if none)."""
    dm = np.asarray(getattr(effects_dm, "values", effects_dm))
    pm = np.asarray(getattr(effects_pm, "values", effects_pm))
    vals = [0.0]
    if len(diseases):
        vals.append(float(dm[list(diseases), med].max()))
    if len(procedures):
        vals.append(float(pm[list(procedures), med].max()))
    return max(vals)


def visit_effects(diseases, procedures, effects_dm, effects_pm) -> np.ndarray:
    """``max_relevant_effect`` for every medication at once."""
    dm = np.asarray(getattr(effects_dm, "values", effects_dm))
    pm = np.asarray(getattr(effects_pm, "values", effects_pm))
    out = np.zeros(dm.shape[1])
    if len(diseases):
        out = np.maximum(out, dm[list(diseases)].max(axis=0))
    if len(procedures):
        out = np.maximum(out, pm[list(procedures)].max(axis=0))
    return out


def select_set(corrected, threshold: float = 0.5) -> frozenset[int]:
    return frozenset(np.flatnonzero(np.asarray(corrected) >= threshold).tolist())


def correct(raw, effect, config: CorrectionConfig = CorrectionConfig()) -> RecommendationResult:
    """Three-branch rule on per-medication maximum effects.

    effect >= delta1 adds tau1, effect < delta2 subtracts tau2, anything in
    between is kept; the result is clamped to [0, 1].
    """
    config.validate()
    raw = np.asarray(raw, dtype=np.float64)
    e = np.asarray(effect, dtype=np.float64)
    boost = e >= config.delta1
    penal = e < config.delta2
    corrected = raw + np.where(boost, config.tau1, 0.0) - np.where(penal, config.tau2, 0.0)
    corrected = np.clip(corrected, 0.0, 1.0)
    branch = tuple(BOOST if b else PENALIZE if p else KEEP for b, p in zip(boost, penal))
    return RecommendationResult(raw, corrected, select_set(corrected, config.threshold), branch, e)


def correct_visit(raw, diseases, procedures, effects_dm, effects_pm,
                  config: CorrectionConfig = CorrectionConfig()) -> RecommendationResult:
    return correct(raw, visit_effects(diseases, procedures, effects_dm, effects_pm), config)


AUDIT_HEADER = ("patient_id", "visit", "medication", "raw", "effect", "branch", "corrected", "selected")


def audit_rows(patient_id: str, visit: int, result: RecommendationResult, med_codes) -> list[tuple]:
    return [(patient_id, visit, med_codes[i], repr(float(result.raw[i])), repr(float(result.effect[i])),
             result.branch[i], repr(float(result.corrected[i])), int(i in result.selected))
            for i in range(len(result.raw))]
