"""End-to-end estimation: models, weights, hazard model, plug-in risk.

:func:`prepare` binds every formula and builds all design matrices once.
:func:`estimate` then runs the numeric pipeline for a vector of subject
frequency weights, which is how bootstrap replicates are evaluated: a
resample with replacement is the same as weighting each subject by the
number of times it was drawn.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .basis import FormulaSpec
from .data import PanelDataset
from .glm import GlmFit
from .msm import (
    FittedMSM,
    MSMDesign,
    cumulative_risk,
    fit_msm_arrays,
    msm_case_weights,
    msm_response,
    prepare_msm,
)
from .regime import RegimeSpec
from .weights import (
    ClonedPanel,
    ModelDesigns,
    PanelArrays,
    TreatmentModels,
    WeightTable,
    clone_dataset,
    fit_treatment_models,
    prepare_models,
    weight_recursion,
)


@dataclass
class PipelineConfig:
    """Formulas for ``B``, ``H``, ``C`` and the hazard model ``gamma``; regimes; options."""

    formulas: Mapping[str, object]
    regimes: Sequence[RegimeSpec]
    V: tuple[str, ...] = ()
    mode: str = "general"
    weight_cap: float | None = None

    def __post_init__(self):
        self.regimes = list(self.regimes)
        self.V = tuple(self.V)
        if not self.regimes:
            raise ValueError("at least one regime is required")
        if "gamma" not in self.formulas:
            raise KeyError("missing hazard formula 'gamma'")
        if self.weight_cap is not None and not self.weight_cap > 0:
            raise ValueError("weight cap must be positive")

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.regimes]


@dataclass
class Prepared:
    panel: PanelDataset
    config: PipelineConfig
    cloned: ClonedPanel
    models: ModelDesigns
    msm: MSMDesign
    arrays: PanelArrays
    y_hazard: np.ndarray


def prepare(panel: PanelDataset, config: PipelineConfig) -> Prepared:
    cloned = clone_dataset(panel, config.regimes)
    models = prepare_models(panel, config.formulas)
    msm = prepare_msm(panel, config.labels, config.formulas["gamma"], config.V)
    return Prepared(panel, config, cloned, models, msm, PanelArrays.from_panel(panel), msm_response(panel, msm))


@dataclass
class Estimate:
    labels: list[str]
    risk: np.ndarray  # (regimes, K)
    models: TreatmentModels
    weights: WeightTable
    msm: FittedMSM

    def risk_frame(self) -> pd.DataFrame:
        K = self.risk.shape[1]
        return pd.DataFrame(
            {
                "regime": np.repeat(self.labels, K),
                "k": np.tile(np.arange(1, K + 1), len(self.labels)),
                "risk": self.risk.reshape(-1),
            }
        )

    def utilization(self) -> pd.DataFrame:
        return self.weights.diagnostics[["regime", "k", "util_B", "util_H"]].reset_index(drop=True)

    @property
    def diagnostics(self) -> pd.DataFrame:
        return self.weights.diagnostics

    def summary(self) -> dict:
        def fit_info(fit: GlmFit | None):
            return None if fit is None else fit.as_dict()

        K = self.risk.shape[1]
        return {
            "risk_at_K": {z: float(self.risk[i, K - 1]) for i, z in enumerate(self.labels)},
            "psi": fit_info(self.msm.fit),
            "models": {
                "B": fit_info(self.models.fit_B),
                "H": fit_info(self.models.fit_H),
                "C": fit_info(self.models.fit_C),
            },
        }


def estimate(prep: Prepared, subject_weight: np.ndarray | None = None) -> Estimate:
    panel, cfg = prep.panel, prep.config
    w = np.ones(panel.n) if subject_weight is None else np.asarray(subject_weight, dtype=float)
    models = fit_treatment_models(panel, None, w, designs=prep.models)
    arr = prep.arrays
    weights = weight_recursion(
        arr,
        arr.widen(models.p_B, panel, 0.5),
        arr.widen(models.p_H, panel, 0.5),
        arr.widen(models.p_C, panel, 0.0),
        cfg.regimes,
        w,
        cfg.mode,
    )
    cw = msm_case_weights(panel, prep.msm, weights, cfg.weight_cap)
    fitted = fit_msm_arrays(prep.msm, prep.y_hazard, cw)
    counts = np.bincount(prep.msm.pattern_of, weights=w, minlength=len(prep.msm.patterns))
    risk = np.vstack([counts @ cumulative_risk(fitted.hazards(z)) / counts.sum() for z in cfg.labels])
    return Estimate(cfg.labels, risk, models, weights, fitted)


def run_pipeline(panel: PanelDataset, config: PipelineConfig) -> Estimate:
    return estimate(prepare(panel, config))


def saturated_config(regimes, history=("L",), mode="general", V=()) -> PipelineConfig:
    """Fully saturated models for discrete panels.

    Treatment and censoring models get one cell per interval and covariate
    history; the hazard model one cell per ``(k, Z)`` (and ``V`` if given).
    """
    cell = {"terms": [{"saturated": ["k"], "history": list(history)}], "intercept": False}
    gamma = {"terms": [{"saturated": ["k", "Z", *V]}], "intercept": False}
    return PipelineConfig({"B": cell, "H": cell, "C": cell, "gamma": gamma}, regimes, tuple(V), mode)
