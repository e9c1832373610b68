"""Exact evaluation of counterfactual risk on small discrete data-generating models.

A :class:`DiscreteDGM` stores conditional probability tables keyed by history
strings.  Completed intervals are written ``"l,b,h"`` and joined with ``";"``;
the current interval's partial values form the last segment.  For example,
at ``k = 2`` after ``L_1 = 1`` and no treatment:

* ``L["1,0,0"]`` is the distribution of ``L_2``,
* ``B["1,0,0;0"]`` is ``P(B_2 = 1 | L_2 = 0, ...)``,
* ``H["1,0,0;0,0"]``, ``C["1,0,0;0,0,0"]`` and ``Y["1,0,0;0,b,h"]`` follow
  the within-interval order ``L, B, H, C, Y``.

Treatment tables only contain eligible histories (never treated); censoring
applies only to untreated eligible subjects; after any treatment ``B = H = 0``.

Two evaluations are provided.  :func:`gformula_risk` walks the intervened
law forward.  :func:`gformula_hazard_repr` walks the observed law (with
censoring), carries the inverse-probability weights along every path and
chains weighted hazards.  They agree exactly when the scaling factors are
derived consistently.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .regime import RegimeSpec, SideResolution, resolve_main, resolve_side

DEFAULT_STATE_BOUND = 10_000_000
ROW_SUM_TOL = 1e-12


class OracleError(ValueError):
    pass


class InvalidDGM(OracleError):
    pass


class StateSpaceTooLarge(OracleError):
    pass


class PositivityViolation(ArithmeticError):
    pass


def seg(l, b, h) -> str:
    return f"{l},{b},{h}"


def join(prefix: str, part: str) -> str:
    return f"{prefix};{part}" if prefix else part


@dataclass
class DiscreteDGM:
    K: int
    n_levels: int
    L: dict[str, list[float]]
    B: dict[str, float]
    H: dict[str, float]
    Y: dict[str, float]
    C: dict[str, float] | None = None

    # -- structure -----------------------------------------------------
    def prefixes(self, k: int) -> list[tuple[str, bool]]:
        """Histories through ``k-1`` as ``(key, untreated)`` pairs."""
        out = [("", True)]
        for _ in range(k - 1):
            nxt = []
            for prefix, untreated in out:
                for l in range(self.n_levels):
                    if untreated:
                        for b, h in ((0, 0), (1, 0), (0, 1)):
                            nxt.append((join(prefix, seg(l, b, h)), b == h == 0))
                    else:
                        nxt.append((join(prefix, seg(l, 0, 0)), False))
            out = nxt
        return out

    def required_keys(self):
        req = {"L": [], "B": [], "H": [], "C": [], "Y": []}
        for k in range(1, self.K + 1):
            for prefix, untreated in self.prefixes(k):
                req["L"].append(prefix)
                for l in range(self.n_levels):
                    if untreated:
                        req["B"].append(join(prefix, f"{l}"))
                        req["H"].append(join(prefix, f"{l},0"))
                        req["C"].append(join(prefix, seg(l, 0, 0)))
                        for b, h in ((0, 0), (1, 0), (0, 1)):
                            req["Y"].append(join(prefix, seg(l, b, h)))
                    else:
                        req["Y"].append(join(prefix, seg(l, 0, 0)))
        return req

    def validate(self) -> None:
        """Check completeness, ranges and row sums; raise :class:`InvalidDGM`."""
        if self.K < 1 or self.n_levels < 1:
            raise InvalidDGM("K and n_levels must be >= 1")
        req = self.required_keys()
        for name in ("L", "B", "H", "Y") + (("C",) if self.C is not None else ()):
            table = getattr(self, name)
            for key in req[name]:
                if key not in table:
                    raise InvalidDGM(f"table {name} has no entry for history {key!r}")
        for key, row in self.L.items():
            row = np.asarray(row, dtype=float)
            if row.shape != (self.n_levels,) or np.any(row < 0) or np.any(row > 1):
                raise InvalidDGM(f"L[{key!r}] is not a probability vector of length {self.n_levels}")
            if abs(math.fsum(row) - 1.0) > ROW_SUM_TOL:
                raise InvalidDGM(f"L[{key!r}] sums to {math.fsum(row)!r}, not 1")
        for name in ("B", "H", "Y", "C"):
            table = getattr(self, name)
            for key, p in (table or {}).items():
                if not (0.0 <= p <= 1.0):
                    raise InvalidDGM(f"{name}[{key!r}] = {p!r} is not a probability")

    def pC(self, key: str) -> float:
        return 0.0 if self.C is None else self.C[key]

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        out = {"K": self.K, "n_levels": self.n_levels, "L": self.L, "B": self.B, "H": self.H, "Y": self.Y}
        if self.C is not None:
            out["C"] = self.C
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDGM":
        dgm = cls(
            int(d["K"]),
            int(d["n_levels"]),
            {k: [float(x) for x in v] for k, v in d["L"].items()},
            {k: float(v) for k, v in d["B"].items()},
            {k: float(v) for k, v in d["H"].items()},
            {k: float(v) for k, v in d["Y"].items()},
            {k: float(v) for k, v in d["C"].items()} if d.get("C") is not None else None,
        )
        dgm.validate()
        return dgm

    @classmethod
    def from_json(cls, text_or_path: str) -> "DiscreteDGM":
        text = text_or_path
        if not text_or_path.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def dgm_from_functions(
    K: int,
    n_levels: int,
    fL: Callable,
    fB: Callable,
    fH: Callable,
    fY: Callable,
    fC: Callable | None = None,
) -> DiscreteDGM:
    """Tabulate a DGM from callables.

    Each callable receives ``(k, history, current)`` where ``history`` is a
    tuple of completed ``(l, b, h)`` triples and ``current`` the partial
    values of interval ``k`` (``()`` for L, ``(l,)`` for B, ``(l, 0)`` for H,
    ``(l, 0, 0)`` for C, ``(l, b, h)`` for Y).  ``fL`` returns a probability
    vector; the others return the probability of the value 1.
    """
    tables = {"L": {}, "B": {}, "H": {}, "C": {} if fC else None, "Y": {}}
    hist_list = [((), "", True)]
    for k in range(1, K + 1):
        nxt = []
        for hist, prefix, untreated in hist_list:
            tables["L"][prefix] = [float(v) for v in fL(k, hist, ())]
            for l in range(n_levels):
                if untreated:
                    tables["B"][join(prefix, f"{l}")] = float(fB(k, hist, (l,)))
                    tables["H"][join(prefix, f"{l},0")] = float(fH(k, hist, (l, 0)))
                    if fC:
                        tables["C"][join(prefix, seg(l, 0, 0))] = float(fC(k, hist, (l, 0, 0)))
                    options = ((0, 0), (1, 0), (0, 1))
                else:
                    options = ((0, 0),)
                for b, h in options:
                    tables["Y"][join(prefix, seg(l, b, h))] = float(fY(k, hist, (l, b, h)))
                    if k < K:
                        nxt.append((hist + ((l, b, h),), join(prefix, seg(l, b, h)), untreated and b == h == 0))
        hist_list = nxt
    dgm = DiscreteDGM(K, n_levels, tables["L"], tables["B"], tables["H"], tables["Y"], tables["C"])
    dgm.validate()
    return dgm


def random_dgm(
    K: int,
    n_levels: int = 2,
    seed: int = 0,
    censoring: bool = False,
    prob_range: tuple[float, float] = (0.1, 0.9),
    ranges: dict | None = None,
) -> DiscreteDGM:
    """Seeded DGM with every conditional probability drawn uniformly.

    ``ranges`` may override ``prob_range`` per table (keys ``L, B, H, C, Y``).
    """
    rng = np.random.default_rng(seed)
    rr = {name: tuple((ranges or {}).get(name, prob_range)) for name in "LBHCY"}

    def u(name):
        lo, hi = rr[name]
        return float(rng.uniform(lo, hi))

    def fL(k, hist, cur):
        if n_levels == 2:
            p = u("L")
            return [1.0 - p, p]
        v = np.array([u("L") for _ in range(n_levels)])
        v = v / v.sum()
        v[-1] = 1.0 - math.fsum(v[:-1])
        return list(v)

    return dgm_from_functions(
        K,
        n_levels,
        fL,
        lambda *a: u("B"),
        lambda *a: u("H"),
        lambda *a: u("Y"),
        (lambda *a: u("C")) if censoring else None,
    )


# ---------------------------------------------------------------------------
# forward evaluation under the intervened law


@dataclass
class OracleResult:
    risk: np.ndarray
    sides: list[dict] = field(default_factory=list)

    def table(self):
        import pandas as pd

        rows = []
        for k, s in enumerate(self.sides, start=1):
            row = {"k": k}
            for side, label in (("B", "alpha"), ("H", "beta")):
                r: SideResolution = s[side]
                row.update(
                    {
                        label: r.alpha,
                        f"aleph_{side}": r.aleph,
                        f"beth_{side}": r.beth,
                        f"target_{side}": r.target,
                        f"nat_{side}": r.natural,
                        f"elig_{side}": r.eligible,
                        f"obs_{side}": r.factual,
                    }
                )
            rows.append(row)
        return pd.DataFrame(rows)

    @property
    def alpha(self):
        return np.array([s["B"].alpha for s in self.sides])

    @property
    def beta(self):
        return np.array([s["H"].alpha for s in self.sides])


def _resolver(mode: str):
    if mode == "general":
        return resolve_side
    if mode == "main":
        return resolve_main
    raise OracleError(f"unknown resolution mode {mode!r}")


def _density(res: SideResolution | None, f1: float) -> float:
    if res is None:
        return f1
    return float(res.treat_prob(f1))


def _check_density(d, k, side):
    if not (-1e-15 <= d <= 1.0 + 1e-15):
        from .regime import ConstraintInfeasible

        raise ConstraintInfeasible(f"intervention density {d!r} outside [0, 1] for {side} at k={k}")


def _factual_marginals(dgm: DiscreteDGM, K: int, bound: int):
    """``P(B_k = 1)`` and ``P(H_k = 1)`` with censoring abolished."""
    res = _forward(dgm, None, K, bound, "general")
    return [(s["obs_B"], s["obs_H"]) for s in res.sides]


def _forward(dgm, regime: RegimeSpec | None, K, bound, mode, factual=None, rule=None) -> OracleResult:
    resolve = _resolver(mode)
    fsum = math.fsum
    states = [("", True, 1.0)]  # prefix, untreated, mass
    risk = []
    cum = 0.0
    sides = []
    for k in range(1, K + 1):
        # L
        expanded = []
        for prefix, untreated, mass in states:
            for l, pl in enumerate(dgm.L[prefix]):
                if pl > 0.0:
                    expanded.append((prefix, untreated, l, mass * pl))
        if len(expanded) > bound:
            raise StateSpaceTooLarge(f"{len(expanded)} states at k={k} exceed bound {bound}")
        # B
        elig = fsum(m for _, u, _, m in expanded if u)
        nat_B = fsum(m * dgm.B[join(p, f"{l}")] for p, u, l, m in expanded if u)
        if regime is None and rule is None:
            res_B = None
        elif rule is not None:
            res_B = None
        else:
            res_B = resolve(regime.q_at(k), factual[k - 1][0], nat_B, elig)
        after_B = []
        for prefix, untreated, l, mass in expanded:
            if not untreated:
                after_B.append((prefix, False, l, 0, mass))
                continue
            if rule is not None:
                d = 1.0 if rule(k, prefix, l) == "B" else 0.0
            else:
                d = _density(res_B, dgm.B[join(prefix, f"{l}")])
                _check_density(d, k, "B")
            if d > 0.0:
                after_B.append((prefix, True, l, 1, mass * d))
            if d < 1.0:
                after_B.append((prefix, True, l, 0, mass * (1.0 - d)))
        # H
        elig_S = fsum(m for _, u, _, b, m in after_B if u and b == 0)
        nat_H = fsum(m * dgm.H[join(p, f"{l},0")] for p, u, l, b, m in after_B if u and b == 0)
        if regime is None or rule is not None:
            res_H = None
        else:
            res_H = resolve(regime.m_at(k), factual[k - 1][1], nat_H, elig_S)
        after_H = []
        for prefix, untreated, l, b, mass in after_B:
            if not (untreated and b == 0):
                after_H.append((prefix, untreated, l, b, 0, mass))
                continue
            if rule is not None:
                d = 1.0 if rule(k, prefix, l) == "H" else 0.0
            else:
                d = _density(res_H, dgm.H[join(prefix, f"{l},0")])
                _check_density(d, k, "H")
            if d > 0.0:
                after_H.append((prefix, True, l, 0, 1, mass * d))
            if d < 1.0:
                after_H.append((prefix, True, l, 0, 0, mass * (1.0 - d)))
        util_B = fsum(m for *_, b, h, m in after_H if b == 1)
        util_H = fsum(m for *_, b, h, m in after_H if h == 1)
        # Y (censoring abolished)
        deaths = []
        nxt = []
        for prefix, untreated, l, b, h, mass in after_H:
            key = join(prefix, seg(l, b, h))
            py = dgm.Y[key]
            deaths.append(mass * py)
            if py < 1.0:
                nxt.append((key, untreated and b == 0 and h == 0, mass * (1.0 - py)))
        cum = cum + fsum(deaths)
        risk.append(cum)
        sides.append(
            {
                "B": res_B if res_B is not None else SideResolution(nat_B, 1, 0, 1.0, nat_B, elig, nat_B),
                "H": res_H if res_H is not None else SideResolution(nat_H, 1, 0, 1.0, nat_H, elig_S, nat_H),
                "obs_B": nat_B,
                "obs_H": nat_H,
                "util_B": util_B,
                "util_H": util_H,
            }
        )
        states = nxt
    return OracleResult(np.array(risk), sides)


def gformula_risk(
    dgm: DiscreteDGM, regime: RegimeSpec, K: int | None = None, *, mode: str = "general", bound: int = DEFAULT_STATE_BOUND
) -> OracleResult:
    """Counterfactual cumulative risk by forward enumeration of the intervened law.

    Scaling factors at interval ``k`` come from the natural-value marginals
    under the regime through ``k-1``.  Censoring is abolished.
    """
    K = dgm.K if K is None else int(K)
    if K > dgm.K:
        raise OracleError(f"horizon {K} exceeds DGM horizon {dgm.K}")
    factual = _factual_marginals(dgm, K, bound)
    return _forward(dgm, regime, K, bound, mode, factual=factual)


def deterministic_risk(dgm: DiscreteDGM, rule: Callable, K: int | None = None, *, bound: int = DEFAULT_STATE_BOUND) -> np.ndarray:
    """Risk under a static or dynamic deterministic rule.

    ``rule(k, prefix, l)`` returns ``"B"``, ``"H"`` or ``None`` for an
    eligible subject with history ``prefix`` and current covariate ``l``.
    """
    K = dgm.K if K is None else int(K)
    return _forward(dgm, None, K, bound, "general", rule=rule).risk


def treat_all_eligible(k, prefix, l):
    return "B"


# ---------------------------------------------------------------------------
# weighted-hazard representation over the observed law


@dataclass
class HazardReprResult:
    risk: np.ndarray
    hazards: dict  # v -> array of per-interval hazards
    v_mass: dict
    sides: list[dict]

    @property
    def alpha(self):
        return np.array([s["B"].alpha for s in self.sides])

    @property
    def beta(self):
        return np.array([s["H"].alpha for s in self.sides])


def _weight_factor(res: SideResolution, f1: float, value: int, k, side) -> tuple[float, float]:
    """(observed probability, weight factor) for one treatment value."""
    d = _density(res, f1)
    _check_density(d, k, side)
    if value == 1:
        prob, num = f1, d
    else:
        prob, num = 1.0 - f1, 1.0 - d
    if prob <= 0.0:
        if num > 0.0:
            raise PositivityViolation(f"{side}={value} at k={k} has zero observed probability")
        return 0.0, 0.0
    return prob, num / prob


def gformula_hazard_repr(
    dgm: DiscreteDGM,
    regime: RegimeSpec,
    K: int | None = None,
    V: str | None = "L1",
    *,
    mode: str = "general",
    bound: int = DEFAULT_STATE_BOUND,
) -> HazardReprResult:
    """Risk from chained weighted hazards over the observed law.

    Each path carries cumulative weights ``W_B``, ``W_H`` and ``W_C``; the
    hazard at ``k`` within stratum ``v`` of ``V`` (``"L1"`` or ``None``) is
    ``E[Y_k W] / E[W]`` among those alive and uncensored through ``k``.
    """
    if V not in (None, "L1"):
        raise OracleError("V must be None or 'L1'")
    K = dgm.K if K is None else int(K)
    resolve = _resolver(mode)
    fsum = math.fsum
    # prefix, untreated, mass, wb, wh, wc, v
    states = [("", True, 1.0, 1.0, 1.0, 1.0, None)]
    v_mass = {}
    hazards: dict = {}
    sides = []
    for k in range(1, K + 1):
        expanded = []
        for prefix, u, mass, wb, wh, wc, v in states:
            for l, pl in enumerate(dgm.L[prefix]):
                if pl > 0.0:
                    vv = (l if V == "L1" else 0) if k == 1 else v
                    expanded.append((prefix, u, l, mass * pl, wb, wh, wc, vv))
        if len(expanded) > bound:
            raise StateSpaceTooLarge(f"{len(expanded)} states at k={k} exceed bound {bound}")
        if k == 1:
            for *_, mass, wb, wh, wc, v in expanded:
                v_mass[v] = v_mass.get(v, 0.0) + mass

        elig = [s for s in expanded if s[1]]
        pi_R = fsum(m * wb * wh * wc for _, _, _, m, wb, wh, wc, _ in elig)
        nat_B = fsum(m * dgm.B[join(p, f"{l}")] * wb * wh * wc for p, _, l, m, wb, wh, wc, _ in elig)
        obs_B = fsum(m * dgm.B[join(p, f"{l}")] * wc for p, _, l, m, wb, wh, wc, _ in elig)
        res_B = resolve(regime.q_at(k), obs_B, nat_B, pi_R)
        after_B = []
        for prefix, u, l, mass, wb, wh, wc, v in expanded:
            if not u:
                after_B.append((prefix, False, l, 0, mass, wb, wh, wc, v))
                continue
            f1 = dgm.B[join(prefix, f"{l}")]
            for b in (1, 0):
                prob, fac = _weight_factor(res_B, f1, b, k, "B")
                if prob > 0.0:
                    after_B.append((prefix, True, l, b, mass * prob, wb * fac, wh, wc, v))
        util_B = fsum(m * wb * wh * wc for _, _, _, b, m, wb, wh, wc, _ in after_B if b == 1)

        s_el = [s for s in after_B if s[1] and s[3] == 0]
        pi_S = fsum(m * wb * wh * wc for *_, m, wb, wh, wc, _ in s_el)
        nat_H = fsum(m * dgm.H[join(p, f"{l},0")] * wb * wh * wc for p, _, l, _, m, wb, wh, wc, _ in s_el)
        obs_H = fsum(m * dgm.H[join(p, f"{l},0")] * wc for p, _, l, _, m, wb, wh, wc, _ in s_el)
        res_H = resolve(regime.m_at(k), obs_H, nat_H, pi_S)
        after_H = []
        for prefix, u, l, b, mass, wb, wh, wc, v in after_B:
            if not (u and b == 0):
                after_H.append((prefix, u, l, b, 0, mass, wb, wh, wc, v))
                continue
            f1 = dgm.H[join(prefix, f"{l},0")]
            for h in (1, 0):
                prob, fac = _weight_factor(res_H, f1, h, k, "H")
                if prob > 0.0:
                    after_H.append((prefix, True, l, 0, h, mass * prob, wb, wh * fac, wc, v))
        util_H = fsum(m * wb * wh * wc for *_, h, m, wb, wh, wc, _ in after_H if h == 1)

        # censoring: only never-treated subjects are at risk
        after_C = []
        for prefix, u, l, b, h, mass, wb, wh, wc, v in after_H:
            if u and b == 0 and h == 0 and dgm.C is not None:
                pc = dgm.C[join(prefix, seg(l, 0, 0))]
                if pc < 1.0:
                    fac = 1.0 / (1.0 - pc) if regime.abolish_censoring else 1.0
                    after_C.append((prefix, u, l, b, h, mass * (1.0 - pc), wb, wh, wc * fac, v))
                # censored paths carry zero weight from here on
            else:
                after_C.append((prefix, u, l, b, h, mass, wb, wh, wc, v))

        num: dict = {}
        den: dict = {}
        nxt = []
        for prefix, u, l, b, h, mass, wb, wh, wc, v in after_C:
            key = join(prefix, seg(l, b, h))
            py = dgm.Y[key]
            w = mass * wb * wh * wc
            num.setdefault(v, []).append(w * py)
            den.setdefault(v, []).append(w)
            if py < 1.0:
                nxt.append((key, u and b == 0 and h == 0, mass * (1.0 - py), wb, wh, wc, v))
        for v in v_mass:
            d = fsum(den.get(v, []))
            lam = fsum(num.get(v, [])) / d if d > 0 else 0.0
            hazards.setdefault(v, []).append(lam)
        sides.append(
            {
                "B": res_B,
                "H": res_H,
                "util_B": util_B,
                "util_H": util_H,
            }
        )
        states = nxt

    total = fsum(v_mass.values())
    risk = np.zeros(K)
    for v, mass in v_mass.items():
        lam = np.asarray(hazards[v])
        surv_before = np.r_[1.0, np.cumprod(1.0 - lam)[:-1]]
        risk += (mass / total) * np.cumsum(lam * surv_before)
    return HazardReprResult(risk, {v: np.asarray(h) for v, h in hazards.items()}, v_mass, sides)


@dataclass
class ConstraintReport:
    rows: list[dict]

    @property
    def max_error(self) -> float:
        return max(max(abs(r["util_B"] - r["target_B"]), abs(r["util_H"] - r["target_H"])) for r in self.rows)

    def branches(self) -> set[tuple[str, int, int]]:
        out = set()
        for r in self.rows:
            out.add(("B", r["aleph_B"], r["beth_B"]))
            out.add(("H", r["aleph_H"], r["beth_H"]))
        return out

    def ok(self, tol: float = 1e-12) -> bool:
        return self.max_error < tol


def check_constraints(dgm: DiscreteDGM, regime: RegimeSpec, K: int | None = None, *, mode="general", bound=DEFAULT_STATE_BOUND) -> ConstraintReport:
    """Exact weighted utilization ``E[B_k W]``, ``E[H_k W]`` against resolved targets."""
    rep = gformula_hazard_repr(dgm, regime, K, V=None, mode=mode, bound=bound)
    rows = []
    for k, s in enumerate(rep.sides, start=1):
        rows.append(
            {
                "k": k,
                "util_B": s["util_B"],
                "target_B": s["B"].target,
                "elig_R": s["B"].eligible,
                "aleph_B": s["B"].aleph,
                "beth_B": s["B"].beth,
                "util_H": s["util_H"],
                "target_H": s["H"].target,
                "elig_S": s["H"].eligible,
                "aleph_H": s["H"].aleph,
                "beth_H": s["H"].beth,
            }
        )
    return ConstraintReport(rows)


def intervention_densities(dgm: DiscreteDGM, result) -> Iterable[float]:
    """Every per-history intervention density implied by resolved sides."""
    for k, s in enumerate(result.sides, start=1):
        for prefix, untreated in dgm.prefixes(k):
            if not untreated:
                continue
            for l in range(dgm.n_levels):
                yield float(s["B"].treat_prob(dgm.B[join(prefix, f"{l}")]))
                yield float(s["H"].treat_prob(dgm.H[join(prefix, f"{l},0")]))


def trajectories(dgm: DiscreteDGM, K: int | None = None, censoring: bool = True):
    """All observable trajectories with their probabilities.

    Yields ``(rows, prob)`` where ``rows`` is a list of ``(l, b, h, c, y)``.
    """
    K = dgm.K if K is None else int(K)
    stack = [("", True, [], 1.0, 1)]
    while stack:
        prefix, u, rows, mass, k = stack.pop()
        for l, pl in enumerate(dgm.L[prefix]):
            if pl <= 0:
                continue
            m_l = mass * pl
            opts = []
            if u:
                pb = dgm.B[join(prefix, f"{l}")]
                ph = dgm.H[join(prefix, f"{l},0")]
                opts = [(1, 0, pb), (0, 1, (1 - pb) * ph), (0, 0, (1 - pb) * (1 - ph))]
            else:
                opts = [(0, 0, 1.0)]
            for b, h, pt in opts:
                if pt <= 0:
                    continue
                m_t = m_l * pt
                key = join(prefix, seg(l, b, h))
                pc = dgm.pC(join(prefix, seg(l, 0, 0))) if (u and b == h == 0 and censoring) else 0.0
                if pc > 0:
                    yield rows + [(l, b, h, 1, 0)], m_t * pc
                m_c = m_t * (1 - pc)
                if m_c <= 0:
                    continue
                py = dgm.Y[key]
                if py > 0:
                    yield rows + [(l, b, h, 0, 1)], m_c * py
                if py < 1:
                    nrows = rows + [(l, b, h, 0, 0)]
                    if k == K:
                        yield nrows, m_c * (1 - py)
                    else:
                        stack.append((key, u and b == h == 0, nrows, m_c * (1 - py), k + 1))
