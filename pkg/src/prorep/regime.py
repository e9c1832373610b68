"""Resource-constrained regimes and their resolution into utilization targets.

A regime rescales the factual utilization of the superior resource (``B``)
by ``q_k`` and of the inferior resource (``H``) by ``m_k``.  Resolution caps
each target at the eligible mass under the regime and decides whether the
treated or the untreated side of the conditional treatment probability is
scaled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PRESETS = {
    "g0": (1.0, 1.0),
    "g1": (1.0, 0.0),
    "g2": (1.0, 1.25),
    "g3": (1.0, 1.5),
}

# Below this the eligible mass is treated as empty.
MASS_EPS = 1e-12


class RegimeError(ValueError):
    pass


class ConstraintInfeasible(ArithmeticError):
    """A resolved intervention density left [0, 1]."""


@dataclass(frozen=True)
class RegimeSpec:
    """Per-interval multipliers for superior (``q``) and inferior (``m``) use.

    ``q`` and ``m`` are either scalars (broadcast over all intervals) or
    sequences indexed by interval, ``q[0]`` being interval 1.
    """

    label: str
    q: float | tuple[float, ...] = 1.0
    m: float | tuple[float, ...] = 1.0
    abolish_censoring: bool = True

    def __post_init__(self):
        for name in ("q", "m"):
            value = getattr(self, name)
            if np.ndim(value) == 0:
                arr = np.asarray([value], dtype=float)
                object.__setattr__(self, name, float(value))
            else:
                arr = np.asarray(value, dtype=float)
                object.__setattr__(self, name, tuple(float(v) for v in arr))
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise RegimeError(f"regime {self.label!r}: {name} must be finite and >= 0")

    def q_at(self, k: int) -> float:
        return _at(self.q, k, self.label, "q")

    def m_at(self, k: int) -> float:
        return _at(self.m, k, self.label, "m")

    def check_horizon(self, K: int) -> None:
        for name in ("q", "m"):
            value = getattr(self, name)
            if isinstance(value, tuple) and len(value) < K:
                raise RegimeError(
                    f"regime {self.label!r}: {name} has {len(value)} entries, horizon is {K}"
                )

    @classmethod
    def from_config(cls, entry) -> "RegimeSpec":
        if isinstance(entry, str):
            return preset(entry)
        if not isinstance(entry, dict) or "label" not in entry:
            raise RegimeError(f"regime entry needs a label: {entry!r}")
        label = str(entry["label"])
        base = preset(entry["preset"]) if "preset" in entry else None
        q = entry.get("q", base.q if base else 1.0)
        m = entry.get("m", base.m if base else 1.0)
        if isinstance(q, list):
            q = tuple(q)
        if isinstance(m, list):
            m = tuple(m)
        return cls(label, q, m, bool(entry.get("abolish_censoring", True)))

    def to_config(self) -> dict:
        return {
            "label": self.label,
            "q": list(self.q) if isinstance(self.q, tuple) else self.q,
            "m": list(self.m) if isinstance(self.m, tuple) else self.m,
            "abolish_censoring": self.abolish_censoring,
        }


def _at(value, k, label, name):
    if k < 1:
        raise RegimeError(f"interval index must be >= 1, got {k}")
    if isinstance(value, tuple):
        if k > len(value):
            raise RegimeError(f"regime {label!r}: no {name} given for interval {k}")
        return value[k - 1]
    return value


def preset(name: str) -> RegimeSpec:
    """Named regimes: current practice (g0), abolish inferior (g1), +25% (g2), +50% (g3)."""
    try:
        q, m = PRESETS[name]
    except KeyError:
        raise RegimeError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return RegimeSpec(name, q, m, abolish_censoring=True)


@dataclass(frozen=True)
class SideResolution:
    """Resolution for one resource at one interval.

    ``alpha`` is the scaling factor applied to eligible subjects: to the
    probability of treatment when ``beth`` is 1, to the probability of no
    treatment otherwise.  ``aleph`` is 0 when the requested utilization
    exceeds the eligible mass, in which case every eligible subject is
    treated.
    """

    target: float
    aleph: int
    beth: int
    alpha: float
    natural: float
    eligible: float
    factual: float

    @property
    def ratio(self) -> float:
        """Plain target/natural ratio (the scaling used when resources only shrink)."""
        if self.natural <= 0.0:
            return 1.0 if self.target <= 0.0 else np.inf
        return self.target / self.natural

    def treat_prob(self, f1):
        """Intervention probability of treatment given factual probability ``f1``."""
        f1 = np.asarray(f1, dtype=float)
        if self.beth:
            return self.alpha * f1
        # written as (1 - a) + a*f1 so that alpha == 1 reproduces f1 bit-for-bit
        return (1.0 - self.alpha) + self.alpha * f1


def resolve_side(multiplier: float, factual: float, natural: float, eligible: float) -> SideResolution:
    """Resolve one resource constraint.

    Parameters
    ----------
    multiplier : float
        ``q_k`` or ``m_k``.
    factual : float
        Factual marginal utilization ``P(B_k = 1)`` (resp. ``H``).
    natural : float
        Marginal of the natural treatment value under the regime.
    eligible : float
        Eligible mass under the regime (``P(R_k^+ = 1)`` resp. ``P(S_k^+ = 1)``).
    """
    for name, v in (("factual", factual), ("natural", natural), ("eligible", eligible)):
        if not (np.isfinite(v) and -1e-12 <= v <= 1 + 1e-12):
            raise RegimeError(f"{name} probability outside [0, 1]: {v!r}")
    requested = multiplier * factual
    aleph = int(requested <= eligible)
    target = requested if aleph else eligible
    beth = int(natural > target)
    if not aleph:
        alpha = 0.0
    elif target == natural:
        alpha = 1.0
    elif beth:
        alpha = target / natural
    elif eligible < MASS_EPS or 1.0 - natural / eligible < MASS_EPS:
        # nobody eligible, or every eligible subject is already treated
        alpha = 1.0
    else:
        alpha = (1.0 - target / eligible) / (1.0 - natural / eligible)
    return SideResolution(target, aleph, beth, float(alpha), natural, eligible, factual)


def resolve_main(multiplier: float, factual: float, natural: float, eligible: float) -> SideResolution:
    """Ratio-only resolution: no eligibility cap, treated side always scaled."""
    target = multiplier * factual
    if natural <= 0.0:
        if target > 0.0:
            raise ConstraintInfeasible("natural utilization is zero but the target is positive")
        alpha = 1.0
    else:
        alpha = target / natural
    return SideResolution(target, 1, 1, float(alpha), natural, eligible, factual)


@dataclass(frozen=True)
class ConstraintResolution:
    k: int
    B: SideResolution
    H: SideResolution

    @property
    def target_B(self):
        return self.B.target

    @property
    def target_H(self):
        return self.H.target


def resolve_constraints(spec: RegimeSpec, k: int, pi_B_obs: float, pi_H_obs: float,
                        pi_B_nat: float, pi_H_nat: float, pi_R: float, pi_S: float) -> ConstraintResolution:
    for v in (pi_B_obs, pi_H_obs, pi_B_nat, pi_H_nat, pi_R, pi_S):
        if not (0.0 <= v <= 1.0):
            raise RegimeError(f"probability outside [0, 1]: {v!r}")
    if pi_B_nat > pi_R or pi_H_nat > pi_S:
        raise RegimeError("natural utilization exceeds eligible mass")
    return ConstraintResolution(
        k,
        resolve_side(spec.q_at(k), pi_B_obs, pi_B_nat, pi_R),
        resolve_side(spec.m_at(k), pi_H_obs, pi_H_nat, pi_S),
    )


def regimes_from_config(entries: Sequence) -> list[RegimeSpec]:
    regimes = [RegimeSpec.from_config(e) for e in entries]
    if not regimes:
        raise RegimeError("at least one regime is required")
    labels = [r.label for r in regimes]
    if len(set(labels)) != len(labels):
        raise RegimeError(f"duplicate regime labels: {labels}")
    return regimes
