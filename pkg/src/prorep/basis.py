"""Feature bases and declarative model formulas.

Formulas are lists of terms.  A term is one of

``"name"``
    A covariate from the panel schema (numeric column, or reference-coded
    dummies for a categorical one), ``"k"`` for the interval index, or ``"Z"``
    for regime dummies.
``{"time": {"internal": [...], "boundary": [lo, hi]}}``
    The truncated-power time basis ``g(k)``.
``{"spline": name, "percentiles": [35, 65], "boundary_percentiles": [5, 95]}``
    The same basis on a numeric covariate, knots at sample percentiles.
``{"interact": [a, b]}``
    Column-wise products of two terms.
``{"saturated": [cols], "history": [cols]}``
    One indicator per observed cell of ``(cols, full history of history-cols)``.
    ``cols`` may include ``"k"`` and ``"Z"``.

Binding a formula against data resolves percentile knots, categorical levels
and saturated cells once; the bound formula then maps any compatible frame to
a design matrix, so bootstrap replicates reuse the full-sample basis.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

DEFAULT_TIME_KNOTS = ((2.0, 4.0, 12.0, 24.0, 54.0), (1.0, 120.0))


class FormulaError(ValueError):
    pass


class DegenerateKnots(UserWarning):
    pass


@dataclass(frozen=True)
class SplineSpec:
    """Truncated-power cubic basis with internal and boundary knots.

    An empty ``internal`` with ``boundary=None`` is the polynomial-only
    fallback used when percentile knots coincide.
    """

    internal: tuple[float, ...] = ()
    boundary: tuple[float, float] | None = None

    def __post_init__(self):
        internal = tuple(float(v) for v in self.internal)
        object.__setattr__(self, "internal", internal)
        if self.boundary is None:
            if internal:
                raise FormulaError("internal knots need boundary knots")
            return
        lo, hi = (float(v) for v in self.boundary)
        object.__setattr__(self, "boundary", (lo, hi))
        if not lo < hi:
            raise FormulaError(f"boundary knots must satisfy lo < hi, got {(lo, hi)}")
        if internal:
            if any(b <= a for a, b in zip(internal, internal[1:])):
                raise FormulaError(f"internal knots must be strictly increasing: {internal}")
            if not (lo < internal[0] and internal[-1] < hi):
                raise FormulaError("internal knots must lie strictly inside the boundary knots")

    @property
    def polynomial_only(self) -> bool:
        return self.boundary is None

    @property
    def width(self) -> int:
        return 3 if self.polynomial_only else 3 + len(self.internal) + 2

    def names(self, stem: str) -> list[str]:
        out = [f"{stem}", f"{stem}^2", f"{stem}^3"]
        if not self.polynomial_only:
            out += [f"{stem}:cub({v:g})" for v in self.internal]
            out += [f"{stem}:lin({v:g})" for v in self.boundary]
        return out


def truncated_power(x, spec: SplineSpec) -> np.ndarray:
    """Evaluate ``x, x^2, x^3, (x-xi)^3_+ ..., (x-lo)_+, (x-hi)_+``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    cols = [x, x * x, x * x * x]
    if not spec.polynomial_only:
        for knot in spec.internal:
            d = np.maximum(x - knot, 0.0)
            cols.append(d * d * d)
        for knot in spec.boundary:
            cols.append(np.maximum(x - knot, 0.0))
    return np.column_stack(cols)


def time_basis(k, spec: SplineSpec) -> np.ndarray:
    """Time basis ``g(k)``; ``k`` must lie within the boundary knots."""
    k = np.asarray(k, dtype=float).reshape(-1)
    if spec.boundary is not None:
        lo, hi = spec.boundary
        if np.any(k < lo) or np.any(k > hi):
            raise FormulaError(f"interval index outside time-basis domain [{lo:g}, {hi:g}]")
    return truncated_power(k, spec)


def percentile_knots(x, percentiles=(35, 65), boundary_percentiles=(5, 95)) -> SplineSpec:
    """Knots at sample percentiles (linear interpolation between order statistics).

    Coinciding knots collapse the basis to ``x, x^2, x^3`` with a warning.
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise FormulaError("cannot place spline knots on an empty sample")
    internal = tuple(np.percentile(x, percentiles))
    boundary = tuple(np.percentile(x, boundary_percentiles))
    knots = (boundary[0],) + internal + (boundary[1],)
    if any(b <= a for a, b in zip(knots, knots[1:])):
        warnings.warn(
            f"spline knots coincide ({', '.join(f'{v:g}' for v in knots)}); "
            "using a polynomial-only basis",
            DegenerateKnots,
            stacklevel=2,
        )
        return SplineSpec()
    return SplineSpec(internal, boundary)


def covariate_spline(x, spec: SplineSpec) -> np.ndarray:
    """Covariate basis; values outside the boundary knots are allowed."""
    return truncated_power(x, spec)


# ---------------------------------------------------------------------------
# design frames


@dataclass
class DesignFrame:
    """Column arrays for a set of records.

    ``columns`` maps names to 1-d arrays (categoricals as integer codes into
    ``levels[name]``).  ``history`` maps names to ``(rows, K)`` arrays holding
    the value at interval ``j`` in column ``j-1`` and NaN after the record's
    own interval.
    """

    columns: dict[str, np.ndarray]
    n_rows: int
    levels: dict[str, tuple] = field(default_factory=dict)
    history: dict[str, np.ndarray] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise FormulaError(f"unknown covariate {name!r}") from None

    def history_of(self, name: str) -> np.ndarray:
        try:
            return self.history[name]
        except KeyError:
            raise FormulaError(f"no history available for {name!r}") from None

    def with_columns(self, **cols) -> "DesignFrame":
        new = dict(self.columns)
        new.update(cols)
        return DesignFrame(new, self.n_rows, self.levels, self.history)


# ---------------------------------------------------------------------------
# formula specification


@dataclass(frozen=True)
class FormulaSpec:
    terms: tuple = ()
    intercept: bool = True

    @classmethod
    def parse(cls, obj) -> "FormulaSpec":
        """Build from config: a list of terms, or ``{"terms": [...], "intercept": bool}``."""
        if isinstance(obj, FormulaSpec):
            return obj
        if isinstance(obj, Mapping) and "terms" in obj:
            return cls(tuple(_freeze(t) for t in obj["terms"]), bool(obj.get("intercept", True)))
        if isinstance(obj, (list, tuple)):
            terms = [t for t in obj if t not in ("1", 1)]
            intercept = not any(t in ("0", "-1", 0) for t in obj)
            terms = [t for t in terms if t not in ("0", "-1", 0)]
            return cls(tuple(_freeze(t) for t in terms), intercept)
        raise FormulaError(f"cannot parse formula {obj!r}")

    def names_used(self) -> set[str]:
        out: set[str] = set()
        for term in self.terms:
            out |= _term_names(term)
        return out

    def uses_z(self) -> bool:
        return "Z" in self.names_used()


def _freeze(term):
    """Hashable copy of a config term."""
    if isinstance(term, Mapping):
        return tuple(sorted((k, _freeze(v)) for k, v in term.items()))
    if isinstance(term, list):
        return tuple(_freeze(v) for v in term)
    return term


def _thaw(term):
    if isinstance(term, tuple) and term and all(
        isinstance(t, tuple) and len(t) == 2 and isinstance(t[0], str) for t in term
    ):
        return {k: _thaw(v) for k, v in term}
    if isinstance(term, tuple):
        return [_thaw(v) for v in term]
    return term


def _term_names(term) -> set[str]:
    t = _thaw(term)
    if isinstance(t, str):
        return {t}
    if isinstance(t, dict):
        if "time" in t:
            return {"k"}
        if "spline" in t:
            return {t["spline"]}
        if "interact" in t:
            out = set()
            for sub in t["interact"]:
                out |= _term_names(_freeze(sub))
            return out
        if "saturated" in t:
            return set(t["saturated"]) | set(t.get("history", []))
    raise FormulaError(f"unrecognised term {t!r}")


# ---------------------------------------------------------------------------
# bound terms


class _Bound:
    names: list[str]

    def matrix(self, df: DesignFrame) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


class _Numeric(_Bound):
    def __init__(self, name):
        self.name = name
        self.names = [name]

    def matrix(self, df):
        return np.asarray(df.column(self.name), dtype=float).reshape(-1, 1)


class _Categorical(_Bound):
    def __init__(self, name, levels):
        self.name = name
        self.levels = tuple(levels)
        self.names = [f"{name}[{lv}]" for lv in self.levels[1:]]

    def matrix(self, df):
        codes = np.asarray(df.column(self.name))
        out = np.zeros((df.n_rows, len(self.levels) - 1))
        for j in range(1, len(self.levels)):
            out[:, j - 1] = codes == j
        return out


class _Spline(_Bound):
    def __init__(self, name, spec: SplineSpec, time: bool):
        self.name, self.spec, self.time = name, spec, time
        self.names = spec.names(name)

    def matrix(self, df):
        x = df.column(self.name)
        return time_basis(x, self.spec) if self.time else covariate_spline(x, self.spec)


class _Interaction(_Bound):
    def __init__(self, a: _Bound, b: _Bound):
        self.a, self.b = a, b
        self.names = [f"{x}:{y}" for x in a.names for y in b.names]

    def matrix(self, df):
        ma, mb = self.a.matrix(df), self.b.matrix(df)
        return (ma[:, :, None] * mb[:, None, :]).reshape(df.n_rows, -1)


class _Saturated(_Bound):
    """Indicator per observed cell of current values plus covariate histories."""

    def __init__(self, cols, hist, df: DesignFrame, K: int):
        self.cols, self.hist, self.K = tuple(cols), tuple(hist), K
        self.values = {}
        for c in self.cols:
            self.values[c] = np.unique(np.asarray(df.column(c), dtype=float))
        for h in self.hist:
            v = df.history_of(h)
            self.values["hist:" + h] = np.unique(v[np.isfinite(v)])
        radix = 1.0
        for c in self.cols:
            radix *= len(self.values[c]) + 1
        for h in self.hist:
            radix *= (len(self.values["hist:" + h]) + 1) ** K
        if radix >= 2.0**62:
            raise FormulaError("saturated term has too many potential cells")
        codes = self._codes(df)
        self.cells = np.unique(codes[codes >= 0])
        self.names = [f"cell{j}" for j in range(len(self.cells))]

    def _codes(self, df):
        code = np.zeros(df.n_rows, dtype=np.int64)
        bad = np.zeros(df.n_rows, dtype=bool)

        def push(values, x):
            nonlocal code, bad
            base = len(values) + 1
            pos = np.searchsorted(values, x)
            pos_c = np.minimum(pos, len(values) - 1)
            hit = np.isfinite(x) & (values[pos_c] == x) if len(values) else np.zeros(len(x), bool)
            digit = np.where(np.isfinite(x), pos_c + 1, 0)
            bad |= np.isfinite(x) & ~hit
            code = code * base + digit.astype(np.int64)

        for c in self.cols:
            push(self.values[c], np.asarray(df.column(c), dtype=float))
        for h in self.hist:
            v = df.history_of(h)
            if v.shape[1] < self.K:
                v = np.pad(v, ((0, 0), (0, self.K - v.shape[1])), constant_values=np.nan)
            for j in range(self.K):
                push(self.values["hist:" + h], v[:, j])
        code[bad] = -1
        return code

    def matrix(self, df):
        codes = self._codes(df)
        out = np.zeros((df.n_rows, len(self.cells)))
        pos = np.searchsorted(self.cells, codes)
        pos_c = np.minimum(pos, len(self.cells) - 1)
        hit = (codes >= 0) & (self.cells[pos_c] == codes)
        out[np.flatnonzero(hit), pos_c[hit]] = 1.0
        return out

    def cell_index(self, df) -> np.ndarray:
        """Cell id per row (-1 for rows outside every known cell)."""
        codes = self._codes(df)
        pos = np.minimum(np.searchsorted(self.cells, codes), len(self.cells) - 1)
        return np.where((codes >= 0) & (self.cells[pos] == codes), pos, -1)


@dataclass
class BoundFormula:
    """A formula with knots, levels and cells resolved; maps frames to designs."""

    spec: FormulaSpec
    parts: list
    columns: list[str]

    @property
    def width(self) -> int:
        return len(self.columns)

    def matrix(self, df: DesignFrame) -> np.ndarray:
        blocks = []
        if self.spec.intercept:
            blocks.append(np.ones((df.n_rows, 1)))
        blocks += [p.matrix(df) for p in self.parts]
        if not blocks:
            return np.zeros((df.n_rows, 0))
        return np.ascontiguousarray(np.hstack(blocks))


def bind(formula: FormulaSpec, df: DesignFrame, *, order: Sequence[str] = (), K: int | None = None) -> BoundFormula:
    """Resolve a formula against data.

    Parameters
    ----------
    formula : FormulaSpec
    df : DesignFrame
        Data used to place percentile knots and enumerate saturated cells.
    order : sequence of str
        Schema order of covariates; main terms are emitted in this order.
    K : int, optional
        Horizon, needed by saturated terms with histories.
    """
    formula = FormulaSpec.parse(formula)
    rank = {name: i for i, name in enumerate(["k", *order, "Z"])}
    groups: dict[int, list] = {0: [], 1: [], 2: []}
    main_keys = []
    for term in formula.terms:
        t = _thaw(term)
        part = _bind_term(t, df, K)
        if isinstance(t, dict) and ("time" in t or "saturated" in t):
            groups[0].append(part)
        elif isinstance(t, dict) and "interact" in t:
            groups[2].append(part)
        else:
            name = t if isinstance(t, str) else t["spline"]
            main_keys.append((rank.get(name, len(rank)), len(main_keys), part))
    groups[1] = [p for _, _, p in sorted(main_keys, key=lambda x: (x[0], x[1]))]
    parts = groups[0] + groups[1] + groups[2]
    columns = (["(intercept)"] if formula.intercept else []) + [n for p in parts for n in p.names]
    if len(set(columns)) != len(columns):
        raise FormulaError(f"duplicate design columns in formula: {columns}")
    return BoundFormula(formula, parts, columns)


def _bind_term(t, df: DesignFrame, K):
    if isinstance(t, str):
        if t in df.levels:
            return _Categorical(t, df.levels[t])
        df.column(t)
        return _Numeric(t)
    if not isinstance(t, dict):
        raise FormulaError(f"unrecognised term {t!r}")
    if "time" in t:
        tb = t["time"] or {}
        internal, boundary = tb.get("internal"), tb.get("boundary")
        if internal is None and boundary is None:
            internal, boundary = DEFAULT_TIME_KNOTS
        return _Spline("k", SplineSpec(tuple(internal or ()), tuple(boundary) if boundary else None), True)
    if "spline" in t:
        name = t["spline"]
        if name in df.levels:
            raise FormulaError(f"spline on categorical covariate {name!r}")
        spec = percentile_knots(
            df.column(name), t.get("percentiles", (35, 65)), t.get("boundary_percentiles", (5, 95))
        )
        return _Spline(name, spec, False)
    if "interact" in t:
        pair = t["interact"]
        if len(pair) != 2:
            raise FormulaError("interaction needs exactly two terms")
        return _Interaction(_bind_term(pair[0], df, K), _bind_term(pair[1], df, K))
    if "saturated" in t:
        hist = t.get("history", [])
        if hist and K is None:
            raise FormulaError("saturated term with history needs the horizon K")
        return _Saturated(t["saturated"], hist, df, K or 0)
    raise FormulaError(f"unrecognised term {t!r}")


def build_design(df: DesignFrame, formula: FormulaSpec, **kw) -> tuple[np.ndarray, list[str]]:
    """Bind and evaluate in one step; returns ``(matrix, column names)``."""
    bound = bind(formula, df, **kw)
    return bound.matrix(df), bound.columns
