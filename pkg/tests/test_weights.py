import io

import numpy as np
import pytest

from prorep.data import load_panel
from prorep.oracle import check_constraints, random_dgm
from prorep.pipeline import PipelineConfig, estimate, prepare, saturated_config
from prorep.regime import RegimeSpec, preset, resolve_side
from prorep.sim import population_panel, sample_dgm
from prorep.validate import branch_regimes
from prorep.weights import (
    ClonedPanel,
    PanelArrays,
    PositivityViolation,
    _side_factor,
    clone_dataset,
    fit_treatment_models,
    weight_recursion,
)

PANEL = """id,k,B,H,C,Y
1,1,0,0,0,0
1,2,0,0,0,0
1,3,0,0,0,1
2,1,0,1,0,0
2,2,0,0,0,0
2,3,0,0,0,0
"""


def test_clone_counts():
    p = load_panel(io.StringIO(PANEL))
    cl = clone_dataset(p, [preset("g0"), preset("g1")])
    assert isinstance(cl, ClonedPanel)
    assert cl.n_rows == 2 * 6
    assert cl.k_star.tolist() == [3, 3]
    assert cl.frame.groupby("Z").size().tolist() == [6, 6]
    one = clone_dataset(p, [preset("g0")]).frame
    assert one.drop(columns="Z").equals(p.frame)
    with pytest.raises(ValueError):
        clone_dataset(p, [preset("g0"), preset("g0")])
    with pytest.raises(ValueError):
        clone_dataset(p, [])


def test_death_truncates_clone_rows():
    text = "id,k,B,H,C,Y\n" + "".join(f"1,{k},0,0,0,{int(k == 3)}\n" for k in range(1, 4))
    text += "".join(f"2,{k},0,0,0,0\n" for k in range(1, 6))
    p = load_panel(io.StringIO(text))
    assert p.K == 5
    assert clone_dataset(p, [preset("g0")]).k_star.tolist() == [3, 5]


def test_single_interval_weight_arithmetic():
    res = resolve_side(0.6, 0.5, 0.5, 1.0)
    assert res.beth == 1 and res.alpha == pytest.approx(0.6)
    f = np.array([0.5, 0.5])
    fac = _side_factor(res, f, np.array([1, 0]), np.array([True, True]), 1, "z", "B", np.array([1, 2]))
    assert fac == pytest.approx([0.6, 1.4])


def test_ineligible_rows_get_unit_factor():
    res = resolve_side(0.0, 0.5, 0.5, 1.0)
    fac = _side_factor(res, np.array([0.5, 0.5]), np.array([0, 0]), np.array([False, True]), 1, "z", "B", np.array([1, 2]))
    assert fac.tolist() == [1.0, 2.0]


def test_positivity_violation():
    res = resolve_side(0.5, 0.5, 0.5, 1.0)
    with pytest.raises(PositivityViolation) as err:
        _side_factor(res, np.array([1 - 1e-15]), np.array([0]), np.array([True]), 2, "g2", "B", np.array(["s7"]))
    assert err.value.subject == "s7" and err.value.k == 2


def test_impossible_record_under_regime_gets_zero_weight():
    res = resolve_side(0.5, 0.5, 0.5, 1.0)
    fac = _side_factor(res, np.array([0.0]), np.array([1]), np.array([True]), 1, "z", "B", np.array([1]))
    assert fac.tolist() == [0.0]


@pytest.fixture(scope="module")
def no_censoring_sample():
    return sample_dgm(random_dgm(K=3, seed=4), 3000, seed=1)


def test_current_practice_weights_are_one(no_censoring_sample):
    p = no_censoring_sample
    est = estimate(prepare(p, saturated_config([preset("g0"), preset("g1")])))
    w = est.weights
    assert np.all(w.W_B["g0"] == 1.0) and np.all(w.W_H["g0"] == 1.0) and np.all(w.W_C["g0"] == 1.0)
    d = est.diagnostics.query("regime == 'g0'")
    assert (d["alpha"] == 1.0).all() and (d["beta"] == 1.0).all()
    assert est.models.fit_C is None


def test_general_and_main_agree_on_presets(no_censoring_sample):
    regimes = [preset("g0"), preset("g1")]
    gen = estimate(prepare(no_censoring_sample, saturated_config(regimes)))
    main = estimate(prepare(no_censoring_sample, saturated_config(regimes, mode="main")))
    assert np.array_equal(gen.risk, main.risk)
    for z in ("g0", "g1"):
        assert np.array_equal(gen.weights.total(z), main.weights.total(z))


def test_weights_nonnegative_and_finite(no_censoring_sample):
    est = estimate(prepare(no_censoring_sample, saturated_config(branch_regimes(3, 0))))
    for z in est.labels:
        W = est.weights.total(z)
        assert np.all(np.isfinite(W)) and np.all(W >= 0)


def test_saturated_treatment_model_matches_strata(no_censoring_sample):
    p = no_censoring_sample
    tm = fit_treatment_models(p, {"B": {"terms": [{"saturated": ["k", "L"]}], "intercept": False},
                                   "H": ["k"]})
    f = p.frame.assign(pB=tm.p_B)
    elig = f[f["R"] == 1]
    grouped = elig.groupby(["k", "L"])
    assert np.max(np.abs(grouped["pB"].first() - grouped["B"].mean())) < 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_constraints_met_on_population_panel(seed):
    dgm = random_dgm(K=1 + seed % 3, seed=100 + seed, censoring=bool(seed % 2))
    panel, prob = population_panel(dgm)
    regimes = branch_regimes(dgm.K, seed)
    est = estimate(prepare(panel, saturated_config(regimes)), prob)
    d = est.diagnostics
    assert np.max(np.abs(d["util_B"] - d["target_B"])) < 1e-10
    assert np.max(np.abs(d["util_H"] - d["target_H"])) < 1e-10
    for reg in regimes:
        exact = check_constraints(dgm, reg)
        sub = d[d["regime"] == reg.label]
        assert np.allclose(sub["target_B"], [r["target_B"] for r in exact.rows], atol=1e-12)


def test_sample_utilization_targets_when_treated_side_scaled(no_censoring_sample):
    est = estimate(prepare(no_censoring_sample, saturated_config([preset("g0"), RegimeSpec("half", 0.5, 0.5)])))
    d = est.diagnostics
    hit = d[d["beth_B"] == 1]
    assert np.max(np.abs(hit["util_B"] - hit["target_B"])) < 1e-12


def test_weight_recursion_rejects_unknown_mode(no_censoring_sample):
    arr = PanelArrays.from_panel(no_censoring_sample)
    z = np.full(arr.present.shape, 0.5)
    with pytest.raises(ValueError):
        weight_recursion(arr, z, z, z * 0, [preset("g0")], mode="other")
