"""Exact validation suites on small discrete DGMs.

Each suite enumerates seeded random DGMs, evaluates exact oracle quantities
and reports the largest discrepancy.  They back the ``validate`` command and
the acceptance tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .oracle import (
    DiscreteDGM,
    check_constraints,
    deterministic_risk,
    gformula_hazard_repr,
    gformula_risk,
    intervention_densities,
    join,
    random_dgm,
    treat_all_eligible,
)
from .regime import RegimeSpec, preset

EXACT_TOL = 1e-12
DENSITY_TOL = 1e-15
# Multiplier large enough that the target exceeds the eligible mass at every k.
SATURATING_Q = 1e6


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    cases: int
    elapsed: float
    failures: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.cases} cases, max error {self.max_error:.3g}, {self.elapsed:.2f}s"

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "max_error": self.max_error,
            "cases": self.cases,
            "failures": self.failures,
            "details": self.details,
        }


def random_regime(K: int, seed: int, low: float = 0.0, high: float = 2.0, label: str = "random") -> RegimeSpec:
    """Per-interval multipliers drawn uniformly from ``[low, high]``."""
    rng = np.random.default_rng([seed, 7919])
    return RegimeSpec(label, tuple(rng.uniform(low, high, K)), tuple(rng.uniform(low, high, K)))


def suite_dgms(n: int, seed: int = 0, max_K: int = 3):
    """``(seed, dgm)`` pairs: horizons cycle through ``1..max_K``, censoring alternates."""
    for i in range(n):
        s = seed + i
        yield s, random_dgm(K=1 + i % max_K, n_levels=2, seed=s, censoring=bool(i % 2))


def representation_suite(dgms=None, n_dgms: int = 100, seed: int = 0, tol: float = EXACT_TOL) -> SuiteResult:
    """Forward g-formula risk against the weighted-hazard representation."""
    t0 = time.perf_counter()
    worst, cases, fails = 0.0, 0, []
    for s, dgm in (dgms if dgms is not None else suite_dgms(n_dgms, seed)):
        for regime in (preset("g0"), preset("g1"), random_regime(dgm.K, s)):
            direct = gformula_risk(dgm, regime).risk
            for V in ("L1", None):
                err = float(np.max(np.abs(direct - gformula_hazard_repr(dgm, regime, V=V).risk)))
                worst = max(worst, err)
                cases += 1
                if not err < tol:
                    fails.append({"seed": s, "regime": regime.label, "V": V, "error": err})
    return SuiteResult("representation", not fails, worst, cases, time.perf_counter() - t0, fails)


def branch_regimes(K: int, seed: int) -> list[RegimeSpec]:
    """Regimes that between them hit the reachable resolution branches."""
    return [
        preset("g0"),
        preset("g1"),
        RegimeSpec("restrict", 0.5, 0.5),
        RegimeSpec("expand", 1.3, 1.3),
        RegimeSpec("saturate", SATURATING_Q, SATURATING_Q),
        random_regime(K, seed),
    ]


def constraint_suite(dgms=None, n_dgms: int = 40, seed: int = 0, tol: float = EXACT_TOL) -> SuiteResult:
    """Exact weighted utilization equals the resolved target, per branch."""
    t0 = time.perf_counter()
    worst, cases, fails = 0.0, 0, []
    branches: set = set()
    for s, dgm in (dgms if dgms is not None else suite_dgms(n_dgms, seed)):
        for regime in branch_regimes(dgm.K, s):
            rep = check_constraints(dgm, regime)
            branches |= rep.branches()
            worst = max(worst, rep.max_error)
            cases += 1
            if not rep.ok(tol):
                fails.append({"seed": s, "regime": regime.label, "error": rep.max_error})
    covered = sorted({(a, b) for _, a, b in branches})
    details = {"branches": [list(map(int, c)) for c in covered]}
    return SuiteResult("constraints", not fails, worst, cases, time.perf_counter() - t0, fails, details)


def _densities_ok(dgm: DiscreteDGM, result) -> bool:
    return all(-DENSITY_TOL <= d <= 1.0 + DENSITY_TOL for d in intervention_densities(dgm, result))


def range_suite(dgms=None, n_dgms: int = 40, seed: int = 0) -> SuiteResult:
    """Scaling factors in ``[0, 1]`` when targets do not exceed factual use.

    Restriction regimes (``q, m <= 1``) are checked with the plain ratio
    resolution: every ratio in ``[0, 1]`` and every implied density valid.
    Expansion regimes (``q`` or ``m > 1``) use the general resolution and
    only density validity is required.
    """
    t0 = time.perf_counter()
    worst, cases, fails = 0.0, 0, []
    for s, dgm in (dgms if dgms is not None else suite_dgms(n_dgms, seed)):
        restricting = [preset("g0"), preset("g1"), RegimeSpec("restrict", 0.5, 0.5), random_regime(dgm.K, s, 0.0, 1.0)]
        expanding = [preset("g2"), preset("g3"), random_regime(dgm.K, s, 1.0, 2.0, "expand"), RegimeSpec("saturate", SATURATING_Q, 1.0)]
        for regime in restricting:
            res = gformula_risk(dgm, regime, mode="main")
            factors = np.r_[res.alpha, res.beta]
            excess = float(max(0.0, -factors.min(), factors.max() - 1.0))
            ok = excess == 0.0 and _densities_ok(dgm, res) and all(s_["B"].aleph and s_["H"].aleph for s_ in res.sides)
            worst = max(worst, excess)
            cases += 1
            if not ok:
                fails.append({"seed": s, "regime": regime.label, "excess": excess})
        for regime in expanding:
            res = gformula_risk(dgm, regime)
            cases += 1
            if not _densities_ok(dgm, res):
                fails.append({"seed": s, "regime": regime.label, "density": "invalid"})
    return SuiteResult("range", not fails, worst, cases, time.perf_counter() - t0, fails)


def degeneration_suite(dgms=None, n_dgms: int = 40, seed: int = 0, tol: float = EXACT_TOL) -> SuiteResult:
    """A saturating superior-resource regime equals treat-all-eligible."""
    t0 = time.perf_counter()
    worst, cases, fails = 0.0, 0, []
    regime = RegimeSpec("saturate", SATURATING_Q, 1.0)
    for s, dgm in (dgms if dgms is not None else suite_dgms(n_dgms, seed)):
        res = gformula_risk(dgm, regime)
        dens = [d for k, side in enumerate(res.sides, start=1) for d in _b_densities(dgm, side, k)]
        err = float(np.max(np.abs(res.risk - deterministic_risk(dgm, treat_all_eligible))))
        dens_err = float(max((abs(d - 1.0) for d in dens), default=0.0))
        worst = max(worst, err, dens_err)
        cases += 1
        if not (err < tol and dens_err < tol and all(not s_["B"].aleph for s_ in res.sides)):
            fails.append({"seed": s, "risk_error": err, "density_error": dens_err})
    return SuiteResult("degeneration", not fails, worst, cases, time.perf_counter() - t0, fails)


def _b_densities(dgm: DiscreteDGM, side: dict, k: int):
    for prefix, untreated in dgm.prefixes(k):
        if untreated:
            for l in range(dgm.n_levels):
                yield float(side["B"].treat_prob(dgm.B[join(prefix, f"{l}")]))


SUITES = {
    "representation": representation_suite,
    "constraints": constraint_suite,
    "range": range_suite,
    "degeneration": degeneration_suite,
}


def run_suites(names=None, n_dgms: int | None = None, seed: int = 0, dgms=None) -> list[SuiteResult]:
    """Run the named suites (all by default) on seeded or supplied DGMs.

    ``dgms`` is a list of ``(seed, DiscreteDGM)``; the seed only drives the
    random regimes drawn for that DGM.
    """
    out = []
    for name in names or SUITES:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}; known: {sorted(SUITES)}")
        kw = {"seed": seed, "dgms": dgms}
        if n_dgms is not None:
            kw["n_dgms"] = n_dgms
        out.append(SUITES[name](**kw))
    return out
