"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy.special import expit

from prorep.boot import bootstrap
from prorep.cli import RunConfig
from prorep.glm import fit_pooled_logistic, loglik, predict_prob, score
from prorep.oracle import dgm_from_functions, gformula_risk, random_dgm
from prorep.pipeline import PipelineConfig, estimate, prepare, saturated_config
from prorep.regime import RegimeSpec, preset
from prorep.sim import TransplantGenerator, null_dgm, population_panel, sample_dgm
from prorep.validate import constraint_suite, degeneration_suite, range_suite, representation_suite

CONFIG_DIR = Path(__file__).resolve().parents[1] / "scripts" / "configs"


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, text):
        with capsys.disabled():
            print(f"\n{'PASS' if passed else 'FAIL'} criterion {criterion}: {text}")
    return emit


def test_criterion_1_representation(report):
    res = representation_suite(n_dgms=100)
    ok = res.passed and res.elapsed < 60
    report(1, ok, f"{res.cases} cases, max |direct - representation| {res.max_error:.2e}, {res.elapsed:.1f}s")
    assert res.passed, res.failures
    assert res.elapsed < 60


def test_criterion_2_constraints_reachable_branches(report):
    res = constraint_suite(n_dgms=40)
    covered = res.details["branches"]
    ok = res.passed and res.elapsed < 30 and all(b in covered for b in ([0, 0], [1, 0], [1, 1]))
    report("2", ok, f"branches {covered}, max |util - target| {res.max_error:.2e}, {res.elapsed:.1f}s")
    assert res.passed, res.failures
    assert [0, 0] in covered and [1, 0] in covered and [1, 1] in covered
    assert res.elapsed < 30


@pytest.mark.xfail(strict=True, reason="(aleph=0, beth=1) cannot occur: a capped target equals the eligible mass, which natural use never exceeds")
def test_criterion_2_unreachable_branch(report):
    covered = constraint_suite(n_dgms=40).details["branches"]
    report("2 (aleph=0, beth=1)", [0, 1] in covered, "branch not reachable by construction; expected failure")
    assert [0, 1] in covered


def test_criterion_3_range(report):
    res = range_suite(n_dgms=40)
    ok = res.passed and res.elapsed < 30
    report(3, ok, f"{res.cases} cases, max excess outside [0, 1] {res.max_error:.2e}, {res.elapsed:.1f}s")
    assert res.passed, res.failures
    assert res.elapsed < 30


def test_criterion_4_current_practice_identity(report):
    panel = sample_dgm(random_dgm(K=3, seed=44), 20_000, seed=44)
    est = estimate(prepare(panel, saturated_config([preset("g0"), preset("g1")])))
    d = est.diagnostics[est.diagnostics["regime"] == "g0"]
    unit = bool((d["alpha"] == 1.0).all() and (d["beta"] == 1.0).all())
    empirical = np.cumsum(panel.wide("Y").sum(axis=0)) / panel.n
    err = float(np.max(np.abs(est.risk[0] - empirical)))
    report(4, unit and err < 1e-12, f"alpha = beta = 1: {unit}, |risk - empirical incidence| {err:.2e}")
    assert unit
    assert err < 1e-12


@pytest.mark.slow
def test_criterion_5_consistency(report):
    t0 = time.perf_counter()
    regimes = [preset("g0"), preset("g1"), RegimeSpec("expand", 1.2, 1.2)]
    worst = 0.0
    bad = []
    for s in range(10):
        dgm = random_dgm(
            K=3, seed=500 + s, censoring=bool(s % 2), ranges={"B": (0.1, 0.5), "H": (0.1, 0.5), "C": (0.1, 0.5)}
        )
        panel = sample_dgm(dgm, 200_000, seed=s)
        boot = bootstrap(prepare(panel, saturated_config(regimes)), B=50, seed=s)
        se = boot.risk.std(axis=0, ddof=1)
        for i, reg in enumerate(regimes[1:], start=1):
            z = np.abs(boot.point[i] - gformula_risk(dgm, reg).risk) / se[i]
            worst = max(worst, float(z.max()))
            if np.any(z >= 3):
                bad.append((s, reg.label, z.round(2).tolist()))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 600
    report(5, ok, f"10 DGMs x (g1, expansion) x 3 intervals, worst |z| {worst:.2f}, {elapsed:.0f}s")
    assert not bad, bad
    assert elapsed < 600


def test_criterion_6_degeneration(report):
    res = degeneration_suite(n_dgms=40)
    report(6, res.passed, f"{res.cases} DGMs, max |risk - treat-all-eligible| and |density - 1| {res.max_error:.2e}")
    assert res.passed, res.failures


def censoring_dgm():
    """Recorded L drives both censoring and death, so ignoring censoring is biased."""
    def fL(k, hist, cur):
        p = 0.8 if hist and hist[-1][0] else 0.3
        return [1 - p, p]

    return dgm_from_functions(
        3, 2, fL,
        lambda k, h, c: 0.2 + 0.1 * c[0],
        lambda k, h, c: 0.15 + 0.1 * c[0],
        lambda k, h, c: 0.04 + 0.3 * c[0],
        lambda k, h, c: 0.03 + 0.4 * c[0],
    )


@pytest.mark.slow
def test_criterion_7_censoring(report):
    dgm = censoring_dgm()
    panel = sample_dgm(dgm, 200_000, seed=7)
    regimes = [preset("g0"), RegimeSpec("naive", 1.0, 1.0, abolish_censoring=False)]
    boot = bootstrap(prepare(panel, saturated_config(regimes)), B=30, seed=7)
    se = boot.risk.std(axis=0, ddof=1)
    truth = gformula_risk(dgm, preset("g0")).risk
    z_weighted = np.abs(boot.point[0] - truth) / se[0]
    z_naive = np.abs(boot.point[1] - truth) / se[1]
    ok = bool(np.all(z_weighted < 3) and z_naive[-1] > 5)
    report(7, ok, f"weighted max |z| {z_weighted.max():.2f}, unweighted |z| at K {z_naive[-1]:.1f}")
    assert np.all(z_weighted < 3)
    assert z_naive[-1] > 5


@pytest.mark.slow
def test_criterion_8_bootstrap_coverage(report):
    t0 = time.perf_counter()
    cell = {"terms": [{"saturated": ["k"]}, "L"], "intercept": False}
    cfg = PipelineConfig(
        {"B": cell, "H": cell, "C": cell, "gamma": {"terms": [{"saturated": ["k", "Z"]}], "intercept": False}},
        [preset("g0"), preset("g1")],
    )
    dgm = null_dgm(K=3)
    assert np.allclose(gformula_risk(dgm, preset("g0")).risk, gformula_risk(dgm, preset("g1")).risk, atol=1e-14)
    covered = 0
    for r in range(200):
        panel = sample_dgm(dgm, 2000, seed=10_000 + r)
        bands = bootstrap(prepare(panel, cfg), B=200, seed=r).contrast_bands()
        row = bands[bands["k"] == 3].iloc[0]
        covered += bool(row["lo"] <= 0.0 <= row["hi"])
    elapsed = time.perf_counter() - t0
    ok = covered >= 180 and elapsed < 900
    report(8, ok, f"g1 - g0 band at K covers 0 in {covered}/200 repetitions, {elapsed:.0f}s")
    assert covered >= 180
    assert elapsed < 900


def test_criterion_9_glm(report):
    rng = np.random.default_rng(9)
    n = 2000
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n)])
    y = (rng.uniform(size=n) < expit(X @ [-0.4, 0.7, -0.3])).astype(float)
    w = rng.uniform(0.2, 3.0, n)
    fit = fit_pooled_logistic(X, y, w)
    score_max = float(np.max(np.abs(score(fit.coefficients, X, y, w))))
    b = np.array([0.1, 0.2, -0.1])
    h = 1e-6
    numeric = np.array([(loglik(b + h * e, X, y, w) - loglik(b - h * e, X, y, w)) / (2 * h) for e in np.eye(3)])
    analytic = score(b, X, y, w)
    fd_err = float(np.max(np.abs(analytic - numeric) / np.abs(analytic)))
    g = rng.integers(0, 5, n)
    Xs = (g[:, None] == np.arange(5)).astype(float)
    ys = (rng.uniform(size=n) < np.array([0.05, 0.3, 0.5, 0.7, 0.95])[g]).astype(float)
    p = predict_prob(fit_pooled_logistic(Xs, ys, w), np.eye(5))
    freq = np.array([np.sum(w * ys * (g == j)) / np.sum(w * (g == j)) for j in range(5)])
    sat_err = float(np.max(np.abs(p - freq)))
    ok = score_max < 1e-8 and fd_err < 1e-6 and sat_err < 1e-12
    report(9, ok, f"score {score_max:.1e}, finite-difference rel. error {fd_err:.1e}, stratum error {sat_err:.1e}")
    assert score_max < 1e-8 and fd_err < 1e-6 and sat_err < 1e-12


def test_criterion_10_transplant_study(report):
    raw = yaml.safe_load((CONFIG_DIR / "transplant.yaml").read_text())
    cfg = RunConfig.from_mapping(raw, str(CONFIG_DIR)).pipeline()
    assert cfg.labels == ["g0", "g1", "g2", "g3"]
    t0 = time.perf_counter()
    panel = TransplantGenerator(K=24).sample(5000, seed=2024)
    est = estimate(prepare(panel, cfg))
    elapsed = time.perf_counter() - t0
    util = est.utilization()
    d = est.diagnostics
    present = np.bincount(panel.k, minlength=25)[1:]
    worst = 0.0
    for z in cfg.labels:
        sub = d[d["regime"] == z].sort_values("k")
        t = sub["target_B"].to_numpy()
        assert (sub["aleph_B"] == 1).all()
        worst = max(worst, float(np.max(np.abs(sub["util_B"].to_numpy() - t) / np.sqrt(t * (1 - t) / present))))
    curves_ok = est.risk.shape == (4, 24) and np.all(np.diff(est.risk, axis=1) >= 0) and len(util) == 96

    # saturated scale: population panel of a discrete DGM, exact propensities
    dgm = random_dgm(K=3, seed=10, censoring=True, ranges={"B": (0.05, 0.3), "H": (0.05, 0.3)})
    pop, prob = population_panel(dgm)
    sat = estimate(prepare(pop, saturated_config([preset(z) for z in ("g0", "g1", "g2", "g3")])), prob)
    sd = sat.diagnostics
    assert (sd["aleph_B"] == 1).all()
    series = np.vstack([sd[sd["regime"] == z].sort_values("k")["util_B"].to_numpy() for z in cfg.labels])
    spread = float(np.max(series.max(axis=0) - series.min(axis=0)))
    ok = elapsed < 120 and curves_ok and worst <= 4 and spread < 1e-10
    report(
        10, ok,
        f"n=5000 K=24 fit in {elapsed:.1f}s, superior utilization within {worst:.2f} binomial SE of target, "
        f"saturated-scale spread across regimes {spread:.1e}",
    )
    assert elapsed < 120
    assert curves_ok
    assert worst <= 4
    assert spread < 1e-10
