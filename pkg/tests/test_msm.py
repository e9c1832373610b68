import numpy as np
import pandas as pd
import pytest

from prorep.boot import BootstrapResult
from prorep.msm import MSMError, cumulative_risk, plugin_risk, prepare_msm
from prorep.oracle import random_dgm
from prorep.pipeline import PipelineConfig, estimate, prepare, run_pipeline, saturated_config
from prorep.regime import RegimeSpec, preset
from prorep.sim import TransplantGenerator, null_dgm, population_panel, sample_dgm
from prorep.weights import DegenerateZ


@pytest.mark.parametrize("h", [0.0, 0.05, 0.3])
def test_constant_hazard(h):
    K = 7
    risk = cumulative_risk(np.full((1, K), h))[0]
    assert risk[-1] == pytest.approx(1 - (1 - h) ** K, abs=1e-15)
    assert np.all(np.diff(risk) >= 0)


@pytest.fixture(scope="module")
def censored_sample():
    return sample_dgm(random_dgm(K=3, seed=11, censoring=True), 4000, seed=3)


def test_saturated_hazards_equal_weighted_empirical_hazards(censored_sample):
    p = censored_sample
    est = estimate(prepare(p, saturated_config([preset("g0"), preset("g1")])))
    f = p.frame
    rows = f["C"].to_numpy() == 0
    i, k = p.row_subject[rows], p.k[rows] - 1
    y = f["Y"].to_numpy()[rows]
    for z in ("g0", "g1"):
        W = est.weights.total(z)[i, k]
        lam = np.bincount(k, W * y, 3) / np.bincount(k, W, 3)
        assert np.max(np.abs(est.msm.hazards(z)[0] - lam)) < 1e-12


def test_current_practice_equals_empirical_incidence():
    p = sample_dgm(random_dgm(K=3, seed=5), 5000, seed=2)
    est = run_pipeline(p, saturated_config([preset("g0"), preset("g1")]))
    empirical = np.cumsum(p.wide("Y").sum(axis=0)) / p.n
    assert np.max(np.abs(est.risk[0] - empirical)) < 1e-12


def test_identical_regimes_have_zero_regime_effect(censored_sample):
    cfg = PipelineConfig(
        {"B": ["k", "L"], "H": ["k", "L"], "C": ["k", "L"], "gamma": ["k", "Z"]},
        [preset("g0"), RegimeSpec("copy", 1.0, 1.0)],
    )
    est = run_pipeline(censored_sample, cfg)
    assert abs(est.msm.psi["Z[copy]"]) < 1e-8
    assert np.max(np.abs(est.risk[0] - est.risk[1])) < 1e-10


def test_plugin_invariant_to_order_and_duplication(censored_sample):
    p = censored_sample
    cfg = saturated_config([preset("g0"), preset("g2")], V=("L1",))
    base = run_pipeline(p, cfg).risk
    order = np.random.default_rng(0).permutation(p.n)
    shuffled = run_pipeline(p.subset(order), cfg).risk
    assert np.allclose(base, shuffled, atol=1e-12)
    doubled = estimate(prepare(p, cfg), np.full(p.n, 2.0)).risk
    assert np.allclose(base, doubled, atol=1e-12)


def test_empty_V_gives_one_curve(censored_sample):
    est = run_pipeline(censored_sample, saturated_config([preset("g0"), preset("g1")]))
    assert est.msm.hazards("g1").shape == (1, 3)
    curve = plugin_risk(est.msm, "g1")
    assert np.allclose(curve.risk, est.risk[1])
    assert plugin_risk(est.msm, "g1", K=2).risk.shape == (2,)
    with pytest.raises(MSMError):
        plugin_risk(est.msm, "g1", K=4)
    with pytest.raises(MSMError):
        est.msm.hazards("g9")


def test_regime_terms_need_two_regimes(censored_sample):
    with pytest.raises(DegenerateZ):
        prepare_msm(censored_sample, ["g0"], ["k", "Z"])
    with pytest.raises(MSMError):
        prepare_msm(censored_sample, ["g0", "g1"], ["k", "L"])


def test_zero_hazard_gives_zero_risk():
    assert np.all(cumulative_risk(np.zeros((3, 5))) == 0)


def test_utilization_series():
    dgm = random_dgm(K=3, seed=21, censoring=True, ranges={"H": (0.05, 0.3)})
    panel, prob = population_panel(dgm)
    est = estimate(prepare(panel, saturated_config([preset("g0"), preset("g1"), preset("g2")])), prob)
    u = est.utilization().set_index(["regime", "k"])
    d = est.diagnostics.set_index(["regime", "k"])
    assert np.allclose(u.loc["g0", "util_B"], u.loc["g1", "util_B"], atol=1e-12)
    assert np.all(u.loc["g1", "util_H"] == 0)
    g2 = d.loc["g2"]
    free = g2["aleph_H"] == 1
    assert free.any()
    assert np.allclose(g2.loc[free, "util_H"], 1.25 * g2.loc[free, "pi_H_obs"], atol=1e-12)


def test_transplant_hazard_layout_fits():
    p = TransplantGenerator(K=12).sample(800, seed=1)
    gamma = [{"time": {"internal": [2, 4], "boundary": [1, 12]}}, "Z", {"interact": ["Z", "k"]}]
    cfg = PipelineConfig({"B": ["k", "meld"], "H": ["k", "meld"], "C": ["k"], "gamma": gamma}, [preset("g0"), preset("g1")])
    est = run_pipeline(p, cfg)
    assert est.msm.fit.converged
    assert "Z[g1]:k" in est.msm.psi.index


def test_contrast_difference_is_point_arithmetic():
    point = np.array([[0.593], [0.649]])
    draws = point[None] + np.random.default_rng(0).normal(0, 0.01, (50, 2, 1))
    res = BootstrapResult(["g0", "g1"], point, draws, np.ones(50, bool), 0)
    row = res.contrast_bands().iloc[0]
    assert row["contrast"] == "g1-g0"
    assert row["difference"] == pytest.approx(0.056, abs=1e-12)
    assert row["lo"] < row["difference"] < row["hi"]
