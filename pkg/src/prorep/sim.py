"""Synthetic panels from discrete DGMs and a transplant-like parametric generator.

All randomness comes from a counter-based hash of ``(seed, subject,
interval, slot)``, so any subject's draws are independent of how many other
subjects are generated or in which order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, ndtri

from .data import CovariateSpec, PanelDataset, PanelSchema, from_frame
from .oracle import DiscreteDGM, OracleResult, dgm_from_functions, join, seg
from .regime import ConstraintInfeasible, RegimeSpec

SLOT_L, SLOT_B, SLOT_H, SLOT_C, SLOT_Y = range(5)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array."""
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def uniforms(seed: int, subject, k: int, slot: int) -> np.ndarray:
    """Uniform(0, 1) draws keyed by ``(seed, subject, k, slot)``; never exactly 0 or 1."""
    subject = np.asarray(subject, dtype=np.uint64)
    h = _mix(np.full(subject.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
    h = _mix(h ^ subject)
    h = _mix(h ^ np.uint64((int(k) << 16) | int(slot)))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed, subject, k, slot) -> np.ndarray:
    return ndtri(uniforms(seed, subject, k, slot))


@dataclass(frozen=True)
class SimConfig:
    n: int
    seed: int = 0
    K: int | None = None
    dgm: DiscreteDGM | None = None
    generator: "TransplantGenerator | None" = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if (self.dgm is None) == (self.generator is None):
            raise ValueError("give exactly one of dgm or generator")


DGM_SCHEMA = PanelSchema(
    {"L": CovariateSpec("numeric"), "L1": CovariateSpec("numeric", baseline=True)}
)


def sample_panel(cfg: SimConfig) -> PanelDataset:
    """Draw ``cfg.n`` subjects forward in the order L, B, H, C, Y."""
    if cfg.generator is not None:
        return cfg.generator.sample(cfg.n, cfg.seed, cfg.K)
    return sample_dgm(cfg.dgm, cfg.n, cfg.seed, cfg.K)


def _categorical(u, probs_by_group, group):
    """Inverse-CDF draw with per-group probability vectors."""
    cdf = np.cumsum(probs_by_group, axis=1)[group]
    out = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
    return out


def sample_dgm(dgm: DiscreteDGM, n: int, seed: int = 0, K: int | None = None, *, regime_sides=None) -> PanelDataset:
    """Observational panel from a discrete DGM.

    With ``regime_sides`` (the ``sides`` of an oracle result), treatments are
    drawn from the scaled intervention densities and censoring is abolished.
    """
    K = dgm.K if K is None else int(K)
    ids = np.arange(n)
    active = ids.copy()
    prefix_of = np.zeros(n, dtype=np.int64)
    prefixes = [""]
    untreated = np.ones(n, dtype=bool)
    out = {c: [] for c in ("id", "k", "L", "B", "H", "C", "Y")}
    L1 = np.zeros(n)
    for k in range(1, K + 1):
        if active.size == 0:
            break
        pid = prefix_of[active]
        uniq, inv = np.unique(pid, return_inverse=True)
        probs = np.array([dgm.L[prefixes[p]] for p in uniq])
        l = _categorical(uniforms(seed, active, k, SLOT_L), probs, inv)
        if k == 1:
            L1[active] = l
        un = untreated[active]
        code = pid * dgm.n_levels + l

        def lookup(table, fmt, mask):
            p = np.zeros(active.size)
            if mask.any():
                cu, ci = np.unique(code[mask], return_inverse=True)
                vals = np.array([table[fmt(prefixes[c // dgm.n_levels], c % dgm.n_levels)] for c in cu])
                p[mask] = vals[ci]
            return p

        fB = lookup(dgm.B, lambda pr, lv: join(pr, f"{lv}"), un)
        if regime_sides is not None:
            fB = np.where(un, regime_sides[k - 1]["B"].treat_prob(fB), 0.0)
            _check(fB, k, "B")
        b = (un & (uniforms(seed, active, k, SLOT_B) < fB)).astype(np.int8)
        sel = un & (b == 0)
        fH = lookup(dgm.H, lambda pr, lv: join(pr, f"{lv},0"), sel)
        if regime_sides is not None:
            fH = np.where(sel, regime_sides[k - 1]["H"].treat_prob(fH), 0.0)
            _check(fH, k, "H")
        h = (sel & (uniforms(seed, active, k, SLOT_H) < fH)).astype(np.int8)
        crisk = sel & (h == 0)
        if dgm.C is not None and regime_sides is None:
            fC = lookup(dgm.C, lambda pr, lv: join(pr, seg(lv, 0, 0)), crisk)
            c = (crisk & (uniforms(seed, active, k, SLOT_C) < fC)).astype(np.int8)
        else:
            c = np.zeros(active.size, dtype=np.int8)
        # Y key includes treatment values: regroup
        ycode = (code * 2 + b) * 2 + h
        cu, ci = np.unique(ycode, return_inverse=True)
        yp = np.array(
            [
                dgm.Y[join(prefixes[(c_ // 4) // dgm.n_levels], seg((c_ // 4) % dgm.n_levels, (c_ // 2) % 2, c_ % 2))]
                for c_ in cu
            ]
        )[ci]
        y = ((c == 0) & (uniforms(seed, active, k, SLOT_Y) < yp)).astype(np.int8)

        for col, val in (("id", active), ("k", np.full(active.size, k)), ("L", l), ("B", b), ("H", h), ("C", c), ("Y", y)):
            out[col].append(val)

        keep = (y == 0) & (c == 0)
        # new prefix ids for survivors
        new_codes, new_inv = np.unique(ycode[keep], return_inverse=True)
        new_prefixes = [
            join(prefixes[(c_ // 4) // dgm.n_levels], seg((c_ // 4) % dgm.n_levels, (c_ // 2) % 2, c_ % 2))
            for c_ in new_codes
        ]
        survivors = active[keep]
        prefix_of[survivors] = new_inv
        untreated[survivors] = un[keep] & (b[keep] == 0) & (h[keep] == 0)
        prefixes = new_prefixes
        active = survivors

    df = pd.DataFrame({c: np.concatenate(v) for c, v in out.items()})
    df["L"] = df["L"].astype(float)
    df["L1"] = L1[df["id"].to_numpy()]
    return from_frame(df, DGM_SCHEMA, K=K)


def _check(p, k, side):
    if np.any(p < -1e-15) or np.any(p > 1 + 1e-15):
        raise ConstraintInfeasible(f"intervention density outside [0, 1] for {side} at k={k}")


@dataclass
class InterventionalMC:
    risk: np.ndarray
    se: np.ndarray
    n: int
    util_B: np.ndarray
    util_H: np.ndarray


def sample_interventional(dgm: DiscreteDGM, regime: RegimeSpec, oracle: OracleResult, n: int, seed: int = 0) -> InterventionalMC:
    """Monte Carlo risk with treatments drawn from the oracle's scaled densities.

    The regime argument is kept for labelling; all scaling comes from
    ``oracle.sides`` (population quantities).  Censoring is abolished.
    """
    panel = sample_dgm(dgm, n, seed, len(oracle.sides), regime_sides=oracle.sides)
    K = len(oracle.sides)
    Y = panel.wide("Y")
    risk = np.cumsum(Y.sum(axis=0)) / n
    util_B = panel.wide("B").sum(axis=0) / n
    util_H = panel.wide("H").sum(axis=0) / n
    se = np.sqrt(risk * (1 - risk) / n)
    return InterventionalMC(risk[:K], se[:K], n, util_B, util_H)


# ---------------------------------------------------------------------------
# transplant-like parametric generator

BLOOD_TYPES = ("O", "A", "B", "AB")

TRANSPLANT_SCHEMA = PanelSchema(
    {
        "age": CovariateSpec("numeric", baseline=True),
        "female": CovariateSpec("numeric", baseline=True),
        "diabetes": CovariateSpec("numeric", baseline=True),
        "exception": CovariateSpec("numeric", baseline=True),
        "blood": CovariateSpec("categorical", reference="O", levels=BLOOD_TYPES, baseline=True),
        "meld": CovariateSpec("numeric"),
        "meld0": CovariateSpec("numeric", baseline=True),
    }
)


@dataclass(frozen=True)
class TransplantGenerator:
    """Waitlist-style panel: a worsening severity score drives allocation and death.

    Superior (``B``) and inferior (``H``) organ offers depend on the current
    score, exception status and blood type; delisting (``C``) is more likely
    for mild patients; death depends on severity and on having been treated.
    Coefficients are on the logit scale.
    """

    K: int = 24
    b_coef: tuple = (-3.9, 0.09, 0.6, -0.008, -0.25, 0.01)  # const, meld-20, exception, age-55, blood O, k
    h_coef: tuple = (-4.3, 0.06, 0.3, 0.01, 0.0, 0.005)
    c_coef: tuple = (-4.2, -0.07, 0.0, -0.01, 0.0, 0.0)
    y_coef: tuple = (-4.0, 0.13, -0.5, 0.03, 0.35, -1.4, -0.7)  # const, meld-20, exception, age-55, diabetes, ever B, ever H
    meld_drift: float = 0.45
    meld_sd: float = 1.8

    def sample(self, n: int, seed: int = 0, K: int | None = None) -> PanelDataset:
        K = self.K if K is None else int(K)
        ids = np.arange(n)
        age = np.clip(55 + 10 * normals(seed, ids, 0, 10), 18, 80).round(1)
        female = (uniforms(seed, ids, 0, 11) < 0.38).astype(float)
        diabetes = (uniforms(seed, ids, 0, 12) < 0.25).astype(float)
        exception = (uniforms(seed, ids, 0, 13) < 0.15).astype(float)
        blood = _categorical(uniforms(seed, ids, 0, 14), np.array([[0.44, 0.42, 0.10, 0.04]]), np.zeros(n, int))
        meld = np.clip(18 + 6 * normals(seed, ids, 0, 15), 6, 40)
        meld0 = meld.copy()
        ever_B = np.zeros(n)
        ever_H = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        cols = {c: [] for c in ("id", "k", "meld", "B", "H", "C", "Y")}
        for k in range(1, K + 1):
            a = np.flatnonzero(alive)
            if a.size == 0:
                break
            if k > 1:
                untreated_a = (ever_B[a] + ever_H[a]) == 0
                step = self.meld_drift + self.meld_sd * normals(seed, a, k, 15)
                meld[a] = np.where(untreated_a, np.clip(meld[a] + step, 6, 40), meld[a])
            m = meld[a]
            elig = (ever_B[a] + ever_H[a]) == 0
            common = np.column_stack(
                [np.ones(a.size), m - 20, exception[a], age[a] - 55, (blood[a] == 0).astype(float), np.full(a.size, k)]
            )
            pB = expit(common @ np.asarray(self.b_coef))
            b = (elig & (uniforms(seed, a, k, SLOT_B) < pB)).astype(np.int8)
            s = elig & (b == 0)
            pH = expit(common @ np.asarray(self.h_coef))
            h = (s & (uniforms(seed, a, k, SLOT_H) < pH)).astype(np.int8)
            crisk = s & (h == 0)
            pC = expit(common @ np.asarray(self.c_coef))
            c = (crisk & (uniforms(seed, a, k, SLOT_C) < pC)).astype(np.int8)
            eb = np.maximum(ever_B[a], b)
            eh = np.maximum(ever_H[a], h)
            ycov = np.column_stack([np.ones(a.size), m - 20, exception[a], age[a] - 55, diabetes[a], eb, eh])
            pY = expit(ycov @ np.asarray(self.y_coef))
            y = ((c == 0) & (uniforms(seed, a, k, SLOT_Y) < pY)).astype(np.int8)
            for col, val in (("id", a), ("k", np.full(a.size, k)), ("meld", m.round(2)), ("B", b), ("H", h), ("C", c), ("Y", y)):
                cols[col].append(val)
            ever_B[a], ever_H[a] = eb, eh
            alive[a] = (y == 0) & (c == 0)
        df = pd.DataFrame({c: np.concatenate(v) for c, v in cols.items()})
        sid = df["id"].to_numpy()
        for name, arr in (("age", age), ("female", female), ("diabetes", diabetes), ("exception", exception), ("meld0", meld0.round(2))):
            df[name] = arr[sid]
        df["blood"] = blood[sid]
        return from_frame(df, TRANSPLANT_SCHEMA, levels={"blood": BLOOD_TYPES}, K=K)


def population_panel(dgm: DiscreteDGM, K: int | None = None, censoring: bool = True) -> tuple[PanelDataset, np.ndarray]:
    """Every observable trajectory once, with its probability as subject weight.

    Estimators run on this panel with these weights see the DGM's law
    exactly, so saturated estimates coincide with population quantities.
    """
    from .oracle import trajectories

    rows, probs = [], []
    for i, (traj, p) in enumerate(sorted(trajectories(dgm, K, censoring), key=lambda t: t[0])):
        probs.append(p)
        l1 = traj[0][0]
        for k, (l, b, h, c, y) in enumerate(traj, start=1):
            rows.append((i, k, float(l), b, h, c, y, float(l1)))
    df = pd.DataFrame(rows, columns=["id", "k", "L", "B", "H", "C", "Y", "L1"])
    for c in ("B", "H", "C", "Y"):
        df[c] = df[c].astype(np.int8)
    panel = from_frame(df, DGM_SCHEMA, K=K)
    return panel, np.asarray(probs)


def null_dgm(K: int = 3, censoring: bool = True) -> DiscreteDGM:
    """Logistic DGM in which neither treatment affects ``L`` or ``Y``.

    Every regime has the same counterfactual risk, and treatment, censoring
    and covariate laws are additive on the logit scale in ``k`` and current
    ``L``, so the formula ``k + L`` models them correctly.
    """
    def fL(k, hist, cur):
        prev = hist[-1][0] if hist else 0
        p = float(expit(-0.3 + 0.8 * prev))
        return [1.0 - p, p]

    return dgm_from_functions(
        K,
        2,
        fL,
        lambda k, hist, cur: float(expit(-1.5 + 0.2 * k + 0.8 * cur[0])),
        lambda k, hist, cur: float(expit(-1.2 + 0.1 * k + 0.6 * cur[0])),
        lambda k, hist, cur: float(expit(-2.2 + 1.0 * cur[0])),
        (lambda k, hist, cur: float(expit(-2.5 + 0.1 * k + 0.5 * cur[0]))) if censoring else None,
    )
