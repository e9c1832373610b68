import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prorep.oracle import (
    DiscreteDGM,
    InvalidDGM,
    StateSpaceTooLarge,
    check_constraints,
    deterministic_risk,
    gformula_hazard_repr,
    gformula_risk,
    random_dgm,
    trajectories,
)
from prorep.regime import RegimeSpec, preset
from prorep.sim import sample_interventional
from prorep.validate import random_regime


def factual_incidence(dgm):
    risk = np.zeros(dgm.K)
    for rows, p in trajectories(dgm, censoring=False):
        if rows[-1][4] == 1:
            risk[len(rows) - 1:] += p
    return risk


def test_zero_hazard_gives_zero_risk():
    dgm = random_dgm(K=3, seed=1, ranges={"Y": (0.0, 0.0)})
    assert np.all(gformula_risk(dgm, preset("g1")).risk == 0)


@pytest.mark.parametrize("seed", range(5))
def test_current_practice_is_factual(seed):
    dgm = random_dgm(K=3, seed=seed, censoring=True)
    assert np.max(np.abs(gformula_risk(dgm, preset("g0")).risk - factual_incidence(dgm))) < 1e-14


def test_one_interval_hazard_by_hand():
    dgm = random_dgm(K=1, seed=9)
    pl = dgm.L[""]
    expect = 0.0
    for l in range(2):
        b, h = dgm.B[f"{l}"], dgm.H[f"{l},0"]
        expect += pl[l] * (b * dgm.Y[f"{l},1,0"] + (1 - b) * h * dgm.Y[f"{l},0,1"] + (1 - b) * (1 - h) * dgm.Y[f"{l},0,0"])
    rep = gformula_hazard_repr(dgm, preset("g0"), V=None)
    assert rep.risk[0] == pytest.approx(expect, abs=1e-15)
    assert gformula_risk(dgm, preset("g0")).risk[0] == pytest.approx(expect, abs=1e-15)


@given(seed=st.integers(0, 10**6), censoring=st.booleans(), K=st.integers(1, 3))
def test_representations_agree(seed, censoring, K):
    dgm = random_dgm(K=K, seed=seed, censoring=censoring)
    for reg in (preset("g0"), preset("g1"), random_regime(K, seed)):
        direct = gformula_risk(dgm, reg).risk
        assert np.max(np.abs(direct - gformula_hazard_repr(dgm, reg, V="L1").risk)) < 1e-12
        assert np.max(np.abs(direct - gformula_hazard_repr(dgm, reg, V=None).risk)) < 1e-12
        assert np.all(np.diff(direct) >= -1e-15)
        assert np.all((direct >= 0) & (direct <= 1))


@pytest.mark.parametrize("seed", range(4))
def test_trajectories_sum_to_one(seed):
    dgm = random_dgm(K=3, seed=seed, censoring=True)
    assert math.fsum(p for _, p in trajectories(dgm)) == pytest.approx(1.0, abs=1e-13)


def test_constraint_examples():
    dgm = random_dgm(K=2, seed=3, censoring=True)
    g0 = check_constraints(dgm, preset("g0"))
    assert g0.ok()
    half = check_constraints(dgm, RegimeSpec("half", 0.5, 1.0))
    r = half.rows[0]
    assert r["beth_B"] == 1
    # factual P(B_1 = 1) is sum_l P(l) f_B(l)
    pB1 = sum(dgm.L[""][l] * dgm.B[f"{l}"] for l in range(2))
    assert r["util_B"] == pytest.approx(0.5 * pB1, abs=1e-15)
    big = check_constraints(dgm, RegimeSpec("big", 1.0, 1e6))
    r = big.rows[0]
    assert r["aleph_H"] == 0 and r["util_H"] == pytest.approx(r["elig_S"], abs=1e-15)


def test_treat_all_eligible_rule():
    dgm = random_dgm(K=2, seed=2)
    sat = gformula_risk(dgm, RegimeSpec("all", 1e6, 1.0)).risk
    assert np.max(np.abs(sat - deterministic_risk(dgm, lambda k, prefix, l: "B"))) < 1e-14
    none = deterministic_risk(dgm, lambda k, prefix, l: None)
    assert not np.allclose(none, sat)


def test_interventional_monte_carlo():
    dgm = random_dgm(K=2, seed=7)
    oracle = gformula_risk(dgm, preset("g1"))
    mc = sample_interventional(dgm, preset("g1"), oracle, 10**6, seed=1)
    assert np.all(np.abs(mc.risk - oracle.risk) < 3 * mc.se)
    assert np.all(mc.util_H == 0)


def test_json_round_trip(tmp_path):
    dgm = random_dgm(K=2, seed=4, censoring=True)
    again = DiscreteDGM.from_json(dgm.to_json())
    assert again == dgm
    path = tmp_path / "dgm.json"
    dgm.to_json(path)
    assert DiscreteDGM.from_json(str(path)) == dgm


def test_invalid_tables():
    d = random_dgm(K=1, seed=0).to_dict()
    d["L"][""] = [0.5, 0.6]
    with pytest.raises(InvalidDGM):
        DiscreteDGM.from_dict(d)
    d = random_dgm(K=1, seed=0).to_dict()
    del d["Y"]["0,1,0"]
    with pytest.raises(InvalidDGM):
        DiscreteDGM.from_dict(d)
    d = random_dgm(K=1, seed=0).to_dict()
    d["B"]["0"] = 1.5
    with pytest.raises(InvalidDGM):
        DiscreteDGM.from_dict(d)


def test_state_space_bound():
    dgm = random_dgm(K=3, seed=0)
    with pytest.raises(StateSpaceTooLarge):
        gformula_risk(dgm, preset("g0"), bound=10)
