"""Weighted hazard model across regimes and plug-in risk curves."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .basis import BoundFormula, DesignFrame, FormulaSpec, bind
from .data import PanelDataset
from .glm import GlmFit, RowGroups, fit_pooled_logistic, group_rows, predict_prob
from .weights import ClonedPanel, DegenerateZ, WeightTable


class MSMError(ValueError):
    pass


@dataclass
class MSMDesign:
    """Hazard-row designs per regime plus plug-in grids over baseline patterns.

    ``rows`` are panel rows alive and uncensored at the end of the interval
    (``C_k = 0``).  ``patterns`` holds the distinct baseline values of ``V``;
    ``pattern_of[i]`` is subject ``i``'s pattern.
    """

    bound: BoundFormula
    labels: list[str]
    V: tuple[str, ...]
    rows: np.ndarray
    X: dict[str, np.ndarray]
    patterns: np.ndarray
    pattern_of: np.ndarray
    X_plugin: dict[str, np.ndarray]
    K: int
    levels: dict
    groups: RowGroups | None = None


def _baseline_values(panel: PanelDataset, V) -> np.ndarray:
    out = np.zeros((panel.n, len(V)))
    for j, name in enumerate(V):
        if name not in panel.schema.covariates:
            raise MSMError(f"V covariate {name!r} not in schema")
        out[:, j] = panel.wide(name, fill=np.nan)[:, 0]
    return out


def _frame(k, zcode, Vvals, V, levels) -> DesignFrame:
    cols = {"k": np.asarray(k, float), "Z": np.full(len(k), zcode, dtype=np.int64)}
    for j, name in enumerate(V):
        cols[name] = Vvals[:, j] if name not in levels else Vvals[:, j].astype(np.int64)
    return DesignFrame(cols, len(k), levels)


def prepare_msm(panel: PanelDataset, labels: Sequence[str], gamma, V: Sequence[str] = ()) -> MSMDesign:
    """Bind the hazard formula on all clones and build per-regime designs."""
    gamma = FormulaSpec.parse(gamma)
    V = tuple(V)
    allowed = {"k", "Z", *V}
    extra = gamma.names_used() - allowed
    if extra:
        raise MSMError(f"hazard formula may only use k, Z and V; found {sorted(extra)}")
    labels = list(labels)
    if gamma.uses_z() and len(labels) < 2:
        raise DegenerateZ("hazard formula has regime terms but only one regime is given")
    levels = {"Z": tuple(labels)}
    levels.update({v: panel.levels[v] for v in V if v in panel.levels})

    f = panel.frame
    rows = np.flatnonzero(f["C"].to_numpy() == 0)
    base = _baseline_values(panel, V)
    row_V = base[panel.row_subject[rows]]
    k_rows = panel.k[rows]
    stacked = DesignFrame(
        {
            "k": np.tile(k_rows, len(labels)).astype(float),
            "Z": np.repeat(np.arange(len(labels)), len(rows)),
            **{
                name: (np.tile(row_V[:, j], len(labels)).astype(np.int64) if name in levels else np.tile(row_V[:, j], len(labels)))
                for j, name in enumerate(V)
            },
        },
        len(rows) * len(labels),
        levels,
    )
    bound = bind(gamma, stacked, order=panel.schema.names, K=panel.K)
    X = {z: bound.matrix(_frame(k_rows, i, row_V, V, levels)) for i, z in enumerate(labels)}

    if V:
        patterns, pattern_of = np.unique(base, axis=0, return_inverse=True)
        pattern_of = pattern_of.reshape(-1)
    else:
        patterns, pattern_of = np.zeros((1, 0)), np.zeros(panel.n, dtype=np.int64)
    K = panel.K
    grid_k = np.tile(np.arange(1, K + 1), len(patterns))
    grid_V = np.repeat(patterns, K, axis=0)
    X_plugin = {z: bound.matrix(_frame(grid_k, i, grid_V, V, levels)) for i, z in enumerate(labels)}
    y = f["Y"].to_numpy()[rows]
    groups = group_rows(np.vstack([X[z] for z in labels]), np.tile(y, len(labels)))
    return MSMDesign(bound, labels, V, rows, X, patterns, pattern_of, X_plugin, K, levels, groups)


@dataclass
class FittedMSM:
    fit: GlmFit
    design: MSMDesign

    @property
    def psi(self) -> pd.Series:
        return pd.Series(self.fit.coefficients, index=self.design.bound.columns)

    def hazards(self, z: str, V_rows=None) -> np.ndarray:
        """``(patterns, K)`` fitted hazards for regime ``z``."""
        d = self.design
        if z not in d.labels:
            raise MSMError(f"unknown regime {z!r}")
        if V_rows is None:
            X = d.X_plugin[z]
            m = len(d.patterns)
        else:
            Vvals = np.asarray(V_rows, dtype=float).reshape(-1, len(d.V))
            m = len(Vvals)
            X = d.bound.matrix(
                _frame(np.tile(np.arange(1, d.K + 1), m), d.labels.index(z), np.repeat(Vvals, d.K, axis=0), d.V, d.levels)
            )
        return predict_prob(self.fit, X).reshape(m, d.K)


def msm_response(panel: PanelDataset, design: MSMDesign) -> np.ndarray:
    return panel.frame["Y"].to_numpy()[design.rows].astype(float)


def msm_case_weights(panel: PanelDataset, design: MSMDesign, weights: WeightTable, weight_cap=None) -> dict:
    i = panel.row_subject[design.rows]
    k = panel.k[design.rows] - 1
    sw = weights.subject_weight[i]
    out = {}
    for z in design.labels:
        w = weights.W_B[z][i, k] * weights.W_H[z][i, k] * weights.W_C[z][i, k]
        if weight_cap is not None:
            w = np.minimum(w, weight_cap)
        out[z] = sw * w
    return out


def fit_msm_arrays(design: MSMDesign, y: np.ndarray, case_weights: dict) -> FittedMSM:
    ww = np.concatenate([case_weights[z] for z in design.labels])
    if design.groups is not None:
        g = design.groups
        fit = fit_pooled_logistic(g.X, g.y, g.weights(ww), columns=design.bound.columns)
        return FittedMSM(fit, design)
    X = np.vstack([design.X[z] for z in design.labels])
    yy = np.tile(y, len(design.labels))
    fit = fit_pooled_logistic(X, yy, ww, columns=design.bound.columns)
    return FittedMSM(fit, design)


def fit_msm(
    cloned: ClonedPanel,
    weights: WeightTable,
    gamma,
    V: Sequence[str] = (),
    *,
    weight_cap: float | None = None,
    design: MSMDesign | None = None,
) -> FittedMSM:
    """Weighted pooled logistic hazard model over all clone records with ``C_k = 0``.

    Case weight of a record is ``W_B W_H W_C`` through its interval.
    """
    panel = cloned.panel
    design = design or prepare_msm(panel, cloned.labels, gamma, V)
    cw = msm_case_weights(panel, design, weights, weight_cap)
    return fit_msm_arrays(design, msm_response(panel, design), cw)


@dataclass
class RiskCurve:
    regime: str
    risk: np.ndarray
    n_effective: float
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, len(self.risk) + 1)


def cumulative_risk(hazards: np.ndarray) -> np.ndarray:
    """Row-wise ``sum_{t<=k} h_t prod_{j<t} (1 - h_j)``."""
    h = np.atleast_2d(hazards)
    surv_before = np.concatenate([np.ones((h.shape[0], 1)), np.cumprod(1.0 - h, axis=1)[:, :-1]], axis=1)
    return np.cumsum(h * surv_before, axis=1)


def plugin_risk(fit: FittedMSM, z: str, V_rows=None, K: int | None = None, subject_weight=None) -> RiskCurve:
    """Plug-in risk averaged over subjects' baseline ``V``.

    With ``V_rows=None`` the fitted panel's own subjects are used.
    """
    d = fit.design
    K = d.K if K is None else int(K)
    if K > d.K:
        raise MSMError(f"horizon {K} exceeds fitted horizon {d.K}")
    if V_rows is None:
        haz = fit.hazards(z)
        counts = np.bincount(
            d.pattern_of,
            weights=None if subject_weight is None else np.asarray(subject_weight, float),
            minlength=len(d.patterns),
        )
    else:
        haz = fit.hazards(z, V_rows)
        counts = np.ones(len(haz)) if subject_weight is None else np.asarray(subject_weight, float)
    risk = counts @ cumulative_risk(haz) / counts.sum()
    return RiskCurve(z, risk[:K], float(counts.sum()))


def utilization_curves(weights: WeightTable) -> pd.DataFrame:
    """Weighted per-interval utilization of both treatments, by regime."""
    return weights.diagnostics[["regime", "k", "util_B", "util_H"]].reset_index(drop=True)
