"""Person-interval panels: loading, validation and treatment eligibility.

A panel has one row per subject and interval ``k = 1, 2, ...`` with
covariates ``L_k``, superior treatment ``B_k``, inferior treatment ``H_k``,
censoring ``C_k`` and death ``Y_k``, in that order within the interval.
Subjects contribute no rows after death or censoring.
"""
from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
import pandas as pd

from .basis import DesignFrame

FLAGS = ("B", "H", "C", "Y")


class PanelError(ValueError):
    pass


class MissingColumn(PanelError):
    pass


class MissingValue(PanelError):
    pass


class NonBinaryFlag(PanelError):
    pass


class NonNumericValue(PanelError):
    pass


class DuplicateSubjectInterval(PanelError):
    pass


class GapInIntervals(PanelError):
    pass


class DuplicateTreatment(PanelError):
    pass


class AbsorbingStateViolation(PanelError):
    """Rows recorded after death or after censoring."""


class PanelWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CovariateSpec:
    """``kind`` is ``"numeric"`` or ``"categorical"``; baseline covariates keep their k=1 value."""

    kind: str = "numeric"
    reference: object = None
    levels: tuple | None = None
    baseline: bool = False

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise PanelError(f"covariate kind must be numeric or categorical, got {self.kind!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping and covariate declarations.

    ``columns`` maps the canonical names ``id, k, B, H, C, Y`` to source
    column names; missing entries default to the canonical name.
    """

    covariates: dict[str, CovariateSpec] = field(default_factory=dict)
    columns: dict[str, str] = field(default_factory=dict)

    def source(self, name: str) -> str:
        return self.columns.get(name, name)

    @property
    def names(self) -> list[str]:
        return list(self.covariates)

    @classmethod
    def from_config(cls, cfg: Mapping | None) -> "PanelSchema":
        cfg = dict(cfg or {})
        covs = {}
        for name, spec in (cfg.get("covariates") or {}).items():
            if isinstance(spec, str):
                spec = {"kind": spec}
            spec = dict(spec)
            if "levels" in spec and spec["levels"] is not None:
                spec["levels"] = tuple(spec["levels"])
            covs[str(name)] = CovariateSpec(**spec)
        return cls(covs, {str(k): str(v) for k, v in (cfg.get("columns") or {}).items()})

    def to_config(self) -> dict:
        return {
            "columns": dict(self.columns),
            "covariates": {
                n: {
                    "kind": s.kind,
                    "reference": s.reference,
                    "levels": list(s.levels) if s.levels is not None else None,
                    "baseline": s.baseline,
                }
                for n, s in self.covariates.items()
            },
        }


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Validated panel sorted by (subject, k) with eligibility ``R``, ``S``.

    ``frame`` holds canonical columns ``id, k, <covariates>, B, H, C, Y, R, S``;
    categorical covariates are stored as integer codes into ``levels``.
    """

    frame: pd.DataFrame
    schema: PanelSchema
    K: int
    levels: dict[str, tuple]

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def subjects(self) -> np.ndarray:
        return pd.unique(self.frame["id"].to_numpy())

    @cached_property
    def row_subject(self) -> np.ndarray:
        """Position of each row's subject in ``subjects``."""
        ids = self.frame["id"].to_numpy()
        starts = np.r_[True, ids[1:] != ids[:-1]]
        return np.cumsum(starts) - 1

    @cached_property
    def k(self) -> np.ndarray:
        return self.frame["k"].to_numpy(dtype=np.int64)

    @cached_property
    def row_index(self) -> np.ndarray:
        """``(n, K)`` array of row positions, -1 where the subject has no row."""
        out = np.full((self.n, self.K), -1, dtype=np.int64)
        out[self.row_subject, self.k - 1] = np.arange(len(self.frame))
        return out

    def wide(self, column: str, fill=0.0) -> np.ndarray:
        """``(n, K)`` array of a column, ``fill`` where absent."""
        out = np.full((self.n, self.K), fill, dtype=float)
        out[self.row_subject, self.k - 1] = self.frame[column].to_numpy(dtype=float)
        return out

    def history(self, column: str) -> np.ndarray:
        """``(rows, K)``: the subject's value at interval j, NaN beyond the row's own k."""
        wide = self.wide(column, fill=np.nan)[self.row_subject]
        wide[np.arange(self.K)[None, :] >= self.k[:, None]] = np.nan
        return wide

    def baseline(self) -> pd.DataFrame:
        """One row per subject with k=1 covariate values."""
        first = self.frame[self.frame["k"] == 1]
        return first[["id", *self.schema.names]].reset_index(drop=True)

    def design_frame(self, extra: Mapping[str, np.ndarray] | None = None, history=()) -> DesignFrame:
        cols = {"k": self.k.astype(float)}
        for name in self.schema.names:
            cols[name] = self.frame[name].to_numpy()
        if extra:
            cols.update(extra)
        return DesignFrame(
            cols,
            len(self.frame),
            dict(self.levels),
            {h: self.history(h) for h in history},
        )

    def to_frame(self, decode: bool = True) -> pd.DataFrame:
        """Canonical long table (categoricals decoded to labels)."""
        out = self.frame[["id", "k", *self.schema.names, *FLAGS]].copy()
        if decode:
            for name, levels in self.levels.items():
                out[name] = np.asarray(levels, dtype=object)[out[name].to_numpy(dtype=int)]
        return out

    def write_csv(self, path_or_buf) -> None:
        self.to_frame().to_csv(path_or_buf, index=False, float_format="%.17g")

    def subset(self, subject_positions) -> "PanelDataset":
        """Panel restricted to the given subject positions (in that order)."""
        pos = np.asarray(subject_positions)
        rows = self.row_index[pos]
        rows = rows[rows >= 0]
        frame = self.frame.iloc[np.sort(rows)].reset_index(drop=True)
        return PanelDataset(frame, self.schema, self.K, self.levels)


def _read(source) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source.copy()
    if isinstance(source, (str, os.PathLike)) or hasattr(source, "read"):
        return pd.read_csv(source, dtype=str, keep_default_na=False)
    raise PanelError(f"unsupported panel source {type(source).__name__}")


def _blank(series: pd.Series) -> np.ndarray:
    if series.dtype == object:
        s = series.astype(str).str.strip()
        return (s == "").to_numpy() | series.isna().to_numpy()
    return series.isna().to_numpy()


def _numeric(series: pd.Series, name: str) -> np.ndarray:
    out = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(out) & ~_blank(series)
    if bad.any():
        raise NonNumericValue(f"column {name!r} has non-numeric value {series[bad].iloc[0]!r}")
    return out


def load_panel(source, schema: PanelSchema | Mapping | None = None, K: int | None = None) -> PanelDataset:
    """Read, validate and normalise a long-format panel.

    Parameters
    ----------
    source : path, file-like or DataFrame
        Comma-separated text with a header row, or a frame.
    schema : PanelSchema or config mapping
    K : int, optional
        Truncate to this horizon after validation.

    Raises
    ------
    MissingColumn, MissingValue, NonBinaryFlag, NonNumericValue,
    DuplicateSubjectInterval, GapInIntervals, DuplicateTreatment,
    AbsorbingStateViolation
    """
    if not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_config(schema)
    raw = _read(source)
    required = ["id", "k", *schema.names, *FLAGS]
    missing = [schema.source(c) for c in required if schema.source(c) not in raw.columns]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    df = pd.DataFrame({c: raw[schema.source(c)].to_numpy() for c in required})

    for c in ("id", "k", *FLAGS):
        blank = _blank(df[c])
        if blank.any():
            raise MissingValue(f"empty value in column {c!r} at input row {int(np.argmax(blank))}")
    kk = _numeric(df["k"], "k")
    if np.any(kk != np.round(kk)) or np.any(kk < 1):
        raise GapInIntervals("interval index k must be an integer >= 1")
    df["k"] = kk.astype(np.int64)
    for c in FLAGS:
        v = _numeric(df[c], c)
        if np.any((v != 0) & (v != 1)):
            raise NonBinaryFlag(f"column {c!r} must be 0/1")
        df[c] = v.astype(np.int8)
    if df["id"].dtype == object:
        ids = df["id"].astype(str).str.strip()
        as_num = pd.to_numeric(ids, errors="coerce")
        df["id"] = as_num.astype(np.int64) if as_num.notna().all() and (as_num == np.round(as_num)).all() else ids

    df = df.sort_values(["id", "k"], kind="stable").reset_index(drop=True)
    ids = df["id"].to_numpy()
    same = np.r_[False, ids[1:] == ids[:-1]]
    kk = df["k"].to_numpy()
    if np.any(same & (kk == np.r_[0, kk[:-1]])):
        raise DuplicateSubjectInterval("more than one row for a (subject, k) pair")
    expected = np.where(same, np.r_[0, kk[:-1]] + 1, 1)
    if np.any(kk != expected):
        bad = int(np.argmax(kk != expected))
        raise GapInIntervals(f"subject {ids[bad]!r}: intervals must run 1, 2, ... without gaps")

    levels: dict[str, tuple] = {}
    for name, spec in schema.covariates.items():
        col = df[name]
        blank = _blank(col)
        if spec.baseline:
            first = ~same
            if np.any(blank & first):
                raise MissingValue(f"baseline covariate {name!r} missing at k=1")
            col = col.where(first).ffill() if col.dtype != object else pd.Series(
                np.where(first, col.to_numpy(), None)
            ).ffill()
        elif blank.any():
            raise MissingValue(f"empty value in covariate {name!r}")
        if spec.kind == "numeric":
            df[name] = _numeric(pd.Series(col), name)
        else:
            labels = pd.Series(col).astype(str).str.strip().to_numpy()
            if spec.levels is not None:
                lv = list(spec.levels)
                unknown = sorted(set(labels) - set(lv))
                if unknown:
                    raise PanelError(f"covariate {name!r} has undeclared level(s) {unknown}")
            else:
                lv = sorted(set(labels), key=_level_key)
            if spec.reference is not None:
                ref = str(spec.reference)
                if ref not in lv:
                    raise PanelError(f"reference level {ref!r} not among levels of {name!r}")
                lv = [ref] + [v for v in lv if v != ref]
            levels[name] = tuple(lv)
            lookup = {v: i for i, v in enumerate(lv)}
            df[name] = np.fromiter((lookup[v] for v in labels), dtype=np.int64, count=len(labels))

    return _finish(df, schema, levels, K)


def _level_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def _finish(df: pd.DataFrame, schema: PanelSchema, levels, K) -> PanelDataset:
    ids = df["id"].to_numpy()
    first = np.r_[True, ids[1:] != ids[:-1]]
    grp = np.cumsum(first) - 1
    B, H, C, Y = (df[c].to_numpy().astype(np.int64) for c in FLAGS)
    if np.any(B + H > 1):
        raise DuplicateTreatment("B and H both 1 in the same interval")
    treated = B + H
    cum = np.cumsum(treated)
    start = np.repeat(cum[first] - treated[first], np.bincount(grp))
    prior = cum - treated - start
    if np.any((prior > 0) & (treated > 0)):
        bad = int(np.argmax((prior > 0) & (treated > 0)))
        raise DuplicateTreatment(f"subject {ids[bad]!r} treated more than once")
    last = np.r_[ids[1:] != ids[:-1], True]
    if np.any((Y == 1) & ~last):
        raise AbsorbingStateViolation("rows recorded after death")
    if np.any((C == 1) & ~last):
        raise AbsorbingStateViolation("rows recorded after censoring")

    R = (prior == 0).astype(np.int8)
    S = (R * (1 - B)).astype(np.int8)
    both = (C == 1) & (Y == 1)
    if both.any():
        warnings.warn(
            f"{int(both.sum())} row(s) with C=1 and Y=1; death after censoring is unobserved, Y set to 0",
            PanelWarning,
            stacklevel=3,
        )
        df["Y"] = np.where(both, 0, Y).astype(np.int8)
    outside = (C == 1) & ((S == 0) | (H == 1))
    if outside.any():
        warnings.warn(
            f"{int(outside.sum())} censored row(s) outside the censoring risk set (treated); "
            "they receive no censoring weight",
            PanelWarning,
            stacklevel=3,
        )
    df["R"] = R
    df["S"] = S
    Kmax = int(df["k"].max()) if len(df) else 0
    panel = PanelDataset(df.reset_index(drop=True), schema, Kmax, levels)
    if K is not None:
        panel = truncate_horizon(panel, K)
    return panel


def from_frame(df: pd.DataFrame, schema: PanelSchema, levels=None, K=None, validate=True) -> PanelDataset:
    """Build a panel from canonical columns already holding codes (used by simulators)."""
    if validate:
        need = ["id", "k", *schema.names, *FLAGS]
        missing = [c for c in need if c not in df.columns]
        if missing:
            raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    df = df.sort_values(["id", "k"], kind="stable").reset_index(drop=True)
    lv = dict(levels or {})
    for name, spec in schema.covariates.items():
        if spec.kind == "categorical" and name not in lv:
            raise PanelError(f"levels needed for categorical {name!r}")
    return _finish(df, schema, lv, K)


def derive_eligibility(panel: PanelDataset) -> PanelDataset:
    """Recompute ``R_k`` and ``S_k`` from treatment history.

    ``R_k = 1`` if no treatment before ``k`` (rows exist only while alive and
    uncensored), and ``S_k = R_k (1 - B_k)``.
    """
    df = panel.frame.copy()
    treated = (df["B"].to_numpy() + df["H"].to_numpy()).astype(np.int64)
    prior = df.assign(t=treated).groupby("id", sort=False)["t"].cumsum().to_numpy() - treated
    df["R"] = (prior == 0).astype(np.int8)
    df["S"] = (df["R"].to_numpy() * (1 - df["B"].to_numpy())).astype(np.int8)
    return PanelDataset(df, panel.schema, panel.K, panel.levels)


def truncate_horizon(panel: PanelDataset, K: int) -> PanelDataset:
    """Drop rows with ``k > K``; survivors at ``K`` are administratively complete."""
    if int(K) < 1:
        raise PanelError(f"horizon must be >= 1, got {K}")
    K = int(K)
    if K >= panel.K:
        return panel
    df = panel.frame[panel.frame["k"] <= K].reset_index(drop=True)
    return PanelDataset(df, panel.schema, K, panel.levels)


def panel_from_csv_text(text: str, schema=None, K=None) -> PanelDataset:
    return load_panel(io.StringIO(text), schema, K)
