"""Cloned panels, treatment/censoring models and the recursive weight algorithm.

Weights are computed on ``(n, K)`` arrays: subject ``i``'s value at interval
``k`` sits in column ``k-1``; cells after a subject's last row are zero.
Every regime shares the same source rows, so a clone is just a column of
weights per regime rather than a physical copy of the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .basis import BoundFormula, FormulaSpec, bind
from .data import PanelDataset
from .glm import PROB_CLAMP, GlmFit, RowGroups, fit_pooled_logistic, group_rows, predict_prob
from .regime import ConstraintInfeasible, RegimeSpec, SideResolution, resolve_main, resolve_side

# guard on the natural utilization used as a ratio denominator
RATIO_EPS = 1e-12


class PositivityViolation(ArithmeticError):
    def __init__(self, k, regime, subject, side):
        self.k, self.regime, self.subject, self.side = k, regime, subject, side
        super().__init__(
            f"fitted probability of the observed {side} value is at the clamp "
            f"(k={k}, regime={regime!r}, subject={subject!r})"
        )


class DegenerateZ(ValueError):
    pass


# ---------------------------------------------------------------------------
# cloning


@dataclass
class ClonedPanel:
    """One copy of the panel per regime, tagged by ``Z``."""

    panel: PanelDataset
    regimes: list[RegimeSpec]

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.regimes]

    @cached_property
    def k_star(self) -> np.ndarray:
        """Last contributed interval per subject (death, censoring or K)."""
        return np.bincount(self.panel.row_subject, minlength=self.panel.n)

    @property
    def n_rows(self) -> int:
        return len(self.regimes) * len(self.panel.frame)

    @cached_property
    def frame(self) -> pd.DataFrame:
        parts = [self.panel.frame.assign(Z=r.label) for r in self.regimes]
        return pd.concat(parts, ignore_index=True)


def clone_dataset(panel: PanelDataset, regimes: Sequence[RegimeSpec]) -> ClonedPanel:
    regimes = list(regimes)
    if not regimes:
        raise ValueError("at least one regime is required")
    labels = [r.label for r in regimes]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate regime labels: {labels}")
    for r in regimes:
        r.check_horizon(panel.K)
    return ClonedPanel(panel, regimes)


# ---------------------------------------------------------------------------
# treatment and censoring models


@dataclass
class ModelDesigns:
    """Bound formulas and design matrices for the three nuisance models."""

    formulas: dict[str, BoundFormula]
    rows: dict[str, np.ndarray]
    X: dict[str, np.ndarray]
    groups: dict[str, RowGroups | None] = field(default_factory=dict)


def prepare_models(panel: PanelDataset, formulas: Mapping[str, object]) -> ModelDesigns:
    """Bind ``formulas["B"|"H"|"C"]`` on their risk sets and build designs.

    Risk sets: ``B`` on rows with ``R_k = 1``; ``H`` on ``S_k = 1``; ``C`` on
    ``S_k = 1, H_k = 0``.  Rows exist only while alive and uncensored, so
    every row has ``C_{k-1} = 0``.
    """
    f = panel.frame
    R, S, H = (f[c].to_numpy() for c in ("R", "S", "H"))
    masks = {"B": R == 1, "H": S == 1, "C": (S == 1) & (H == 0)}
    needs_history = set()
    specs = {}
    for name in ("B", "H", "C"):
        if name not in formulas:
            if name == "C":
                continue
            raise KeyError(f"missing formula for {name}")
        specs[name] = FormulaSpec.parse(formulas[name])
        for t in specs[name].terms:
            if isinstance(t, tuple):
                d = dict(t)
                if "history" in d:
                    needs_history |= set(d["history"])
    full = panel.design_frame(history=sorted(needs_history))
    bound, rows, X = {}, {}, {}
    for name, spec in specs.items():
        idx = np.flatnonzero(masks[name])
        sub = _subframe(full, idx)
        if idx.size == 0:
            continue
        bound[name] = bind(spec, sub, order=panel.schema.names, K=panel.K)
        rows[name] = idx
        X[name] = bound[name].matrix(sub)
    groups = {name: group_rows(X[name], f[name].to_numpy()[rows[name]]) for name in X}
    return ModelDesigns(bound, rows, X, groups)


def _subframe(df, idx):
    from .basis import DesignFrame

    return DesignFrame(
        {k: v[idx] for k, v in df.columns.items()},
        len(idx),
        df.levels,
        {k: v[idx] for k, v in df.history.items()},
    )


@dataclass
class TreatmentModels:
    fit_B: GlmFit
    fit_H: GlmFit
    fit_C: GlmFit | None
    p_B: np.ndarray  # per panel row; 0.5 outside the risk set
    p_H: np.ndarray
    p_C: np.ndarray  # 0 outside the risk set or without a censoring model


def fit_treatment_models(panel: PanelDataset, formulas, subject_weight=None, designs: ModelDesigns | None = None) -> TreatmentModels:
    """Fit the pooled logistic models for ``B``, ``H`` and (if any censoring) ``C``."""
    designs = designs or prepare_models(panel, formulas)
    nrow = len(panel.frame)
    rw = np.ones(nrow) if subject_weight is None else np.asarray(subject_weight, float)[panel.row_subject]
    f = panel.frame

    def fit_one(name):
        idx = designs.rows[name]
        y = f[name].to_numpy()[idx]
        g = designs.groups.get(name)
        if g is not None:
            fit = fit_pooled_logistic(g.X, g.y, g.weights(rw[idx]), columns=designs.formulas[name].columns)
            return fit, predict_prob(fit, g.X)[g.index]
        fit = fit_pooled_logistic(designs.X[name], y, rw[idx], columns=designs.formulas[name].columns)
        return fit, predict_prob(fit, designs.X[name])

    out = {}
    for name in ("B", "H"):
        if name not in designs.rows:
            raise ValueError(f"empty risk set for the {name} model")
        fit, pr = fit_one(name)
        p = np.full(nrow, 0.5)
        p[designs.rows[name]] = pr
        out[name] = (fit, p)
    fit_C, p_C = None, np.zeros(nrow)
    if "C" in designs.rows:
        idx = designs.rows["C"]
        if np.any((f["C"].to_numpy()[idx] == 1) & (rw[idx] > 0)):
            fit_C, p_C[idx] = fit_one("C")
    return TreatmentModels(out["B"][0], out["H"][0], fit_C, out["B"][1], out["H"][1], p_C)


# ---------------------------------------------------------------------------
# weight recursion


@dataclass
class WeightTable:
    """Cumulative weights per regime and the per-(regime, k) resolution table.

    ``W_B[label]``, ``W_H[label]`` and ``W_C[label]`` are ``(n, K)`` arrays of
    cumulative weights through interval ``k`` (column ``k-1``).
    """

    labels: list[str]
    W_B: dict[str, np.ndarray]
    W_H: dict[str, np.ndarray]
    W_C: dict[str, np.ndarray]
    diagnostics: pd.DataFrame
    subject_weight: np.ndarray
    mode: str = "general"

    def total(self, label: str) -> np.ndarray:
        return self.W_B[label] * self.W_H[label] * self.W_C[label]

    def long(self, panel: PanelDataset) -> pd.DataFrame:
        """Clone-record table ``id, k, Z, W_B, W_H, W_C``."""
        i, k = panel.row_subject, panel.k - 1
        parts = []
        for z in self.labels:
            parts.append(
                pd.DataFrame(
                    {
                        "id": panel.frame["id"].to_numpy(),
                        "k": panel.k,
                        "Z": z,
                        "W_B": self.W_B[z][i, k],
                        "W_H": self.W_H[z][i, k],
                        "W_C": self.W_C[z][i, k],
                    }
                )
            )
        return pd.concat(parts, ignore_index=True)


@dataclass
class PanelArrays:
    """Wide ``(n, K)`` views of a panel used by the recursion."""

    present: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray
    Y: np.ndarray
    R: np.ndarray
    S: np.ndarray
    subjects: np.ndarray

    @classmethod
    def from_panel(cls, panel: PanelDataset) -> "PanelArrays":
        present = panel.row_index >= 0
        return cls(
            present,
            *(panel.wide(c) for c in ("B", "H", "C", "Y", "R", "S")),
            subjects=panel.subjects,
        )

    def widen(self, row_values: np.ndarray, panel: PanelDataset, fill=0.0) -> np.ndarray:
        out = np.full(self.present.shape, fill, dtype=float)
        out[panel.row_subject, panel.k - 1] = row_values
        return out


def _side_factor(res: SideResolution, f1, value, elig, k, label, side, subjects):
    """Per-subject weight factor for one treatment at one interval."""
    d = res.treat_prob(f1)
    bad = elig & ((d < -1e-15) | (d > 1.0 + 1e-15))
    if bad.any():
        raise ConstraintInfeasible(
            f"intervention density outside [0, 1] for {side} at k={k}, regime {label!r} "
            f"(subject {subjects[int(np.argmax(bad))]!r})"
        )
    obs = np.where(value == 1, f1, 1.0 - f1)
    num = np.where(value == 1, d, 1.0 - d)
    clamp = elig & (obs <= PROB_CLAMP) & (num > 0)
    if clamp.any():
        raise PositivityViolation(k, label, subjects[int(np.argmax(clamp))], side)
    with np.errstate(divide="ignore", invalid="ignore"):
        # a record the regime can never produce gets weight 0, even if unobservable
        fac = np.where(num == 0, 0.0, num / obs)
    return np.where(elig, fac, 1.0)


def weight_recursion(
    arr: PanelArrays,
    p_B: np.ndarray,
    p_H: np.ndarray,
    p_C: np.ndarray,
    regimes: Sequence[RegimeSpec],
    subject_weight: np.ndarray | None = None,
    mode: str = "general",
) -> WeightTable:
    """Run the sequential weight algorithm on wide arrays.

    At each interval: factual utilization from censoring-weighted data;
    per regime, eligible mass and natural utilization from the weights
    through ``k-1``, resolution of the ``B`` constraint, update of ``W_B``;
    then the same for ``H`` using ``W_B`` through ``k``; finally the
    censoring factor.
    """
    if mode not in ("general", "main"):
        raise ValueError(f"unknown mode {mode!r}")
    resolve = resolve_side if mode == "general" else resolve_main
    n, K = arr.present.shape
    w = np.ones(n) if subject_weight is None else np.asarray(subject_weight, dtype=float)
    N = float(w.sum())

    def mean(x):
        return float(w @ x) / N

    labels = [r.label for r in regimes]
    WB_cur = {z: np.ones(n) for z in labels}
    WH_cur = {z: np.ones(n) for z in labels}
    WC_cur = {True: np.ones(n), False: np.ones(n)}
    WB = {z: np.zeros((n, K)) for z in labels}
    WH = {z: np.zeros((n, K)) for z in labels}
    WC = {ab: np.zeros((n, K)) for ab in (True, False)}
    diag = []
    for j in range(K):
        k = j + 1
        Bk, Hk, Ck = arr.B[:, j], arr.H[:, j], arr.C[:, j]
        Rk, Sk = arr.R[:, j], arr.S[:, j]
        eligR, eligS = Rk == 1, Sk == 1
        fB, fH, fC = p_B[:, j], p_H[:, j], p_C[:, j]
        obs = {ab: (mean(Bk * WC_cur[ab]), mean(Hk * WC_cur[ab])) for ab in (True, False)}
        for reg in regimes:
            z = reg.label
            WCp = WC_cur[reg.abolish_censoring]
            obs_B, obs_H = obs[reg.abolish_censoring]
            Wp = WB_cur[z] * WH_cur[z] * WCp
            pi_R, nat_B = mean(Rk * Wp), mean(Bk * Wp)
            rB = resolve(reg.q_at(k), obs_B, nat_B, pi_R)
            _guard(rB, k, z, "B")
            WB_cur[z] = WB_cur[z] * _side_factor(rB, fB, Bk, eligR, k, z, "B", arr.subjects)
            util_B = mean(Bk * WB_cur[z] * WH_cur[z] * WCp)
            Ws = WB_cur[z] * WH_cur[z] * WCp
            pi_S, nat_H = mean(Sk * Ws), mean(Hk * Ws)
            rH = resolve(reg.m_at(k), obs_H, nat_H, pi_S)
            _guard(rH, k, z, "H")
            WH_cur[z] = WH_cur[z] * _side_factor(rH, fH, Hk, eligS, k, z, "H", arr.subjects)
            util_H = mean(Hk * WB_cur[z] * WH_cur[z] * WCp)
            WB[z][:, j] = WB_cur[z]
            WH[z][:, j] = WH_cur[z]
            diag.append(
                {
                    "regime": z,
                    "k": k,
                    "alpha": rB.alpha,
                    "beta": rH.alpha,
                    "aleph_B": rB.aleph,
                    "aleph_H": rH.aleph,
                    "beth_B": rB.beth,
                    "beth_H": rH.beth,
                    "pi_B_obs": obs_B,
                    "pi_H_obs": obs_H,
                    "pi_B_nat": nat_B,
                    "pi_H_nat": nat_H,
                    "pi_R": pi_R,
                    "pi_S": pi_S,
                    "target_B": rB.target,
                    "target_H": rH.target,
                    "util_B": util_B,
                    "util_H": util_H,
                }
            )
        crisk = eligS & (Hk == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(crisk, (1.0 - Ck) / (1.0 - fC), 1.0)
        WC_cur[True] = WC_cur[True] * fac
        WC_cur[False] = WC_cur[False] * np.where(crisk, 1.0 - Ck, 1.0)
        WC[True][:, j] = WC_cur[True]
        WC[False][:, j] = WC_cur[False]
    WCz = {r.label: WC[r.abolish_censoring] for r in regimes}
    return WeightTable(labels, WB, WH, WCz, pd.DataFrame(diag), w, mode)


def _guard(res: SideResolution, k, z, side):
    if res.beth and 0.0 < res.natural < RATIO_EPS:
        raise ConstraintInfeasible(
            f"natural utilization of {side} at k={k} under {z!r} is {res.natural:.3g}; ratio undefined"
        )


def compute_weights(
    cloned: ClonedPanel,
    models: TreatmentModels,
    *,
    mode: str = "general",
    subject_weight=None,
    arrays: PanelArrays | None = None,
) -> WeightTable:
    panel = cloned.panel
    arr = arrays or PanelArrays.from_panel(panel)
    p_B = arr.widen(models.p_B, panel, 0.5)
    p_H = arr.widen(models.p_H, panel, 0.5)
    p_C = arr.widen(models.p_C, panel, 0.0)
    return weight_recursion(arr, p_B, p_H, p_C, cloned.regimes, subject_weight, mode)
