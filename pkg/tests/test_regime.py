import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prorep.regime import (
    ConstraintInfeasible,
    RegimeError,
    RegimeSpec,
    preset,
    regimes_from_config,
    resolve_constraints,
    resolve_main,
    resolve_side,
)

prob = st.floats(0.0, 1.0, allow_nan=False)


def test_cap_at_eligible_mass():
    r = resolve_side(2.0, 0.4, 0.4, 0.5)
    assert r.target == 0.5
    assert r.aleph == 0
    assert r.alpha == 0.0
    assert r.treat_prob(0.3) == 1.0


def test_abolishing_sets_beth():
    r = resolve_side(0.0, 0.3, 0.3, 0.8)
    assert (r.aleph, r.beth, r.alpha, r.target) == (1, 1, 0.0, 0.0)
    assert r.treat_prob(0.7) == 0.0


def test_identity_multiplier_gives_unit_alpha():
    r = resolve_side(1.0, 0.25, 0.25, 0.6)
    assert r.alpha == 1.0
    assert r.treat_prob(0.37) == 0.37


def test_restriction_ratio():
    r = resolve_side(0.5, 0.4, 0.4, 0.9)
    assert r.beth == 1
    assert r.alpha == pytest.approx(0.5)


def test_expansion_scales_untreated_side():
    # target 0.3, natural 0.2, eligible 0.5: alpha = (1 - 0.6) / (1 - 0.4)
    r = resolve_side(1.5, 0.2, 0.2, 0.5)
    assert (r.aleph, r.beth) == (1, 0)
    assert r.alpha == pytest.approx(0.4 / 0.6)
    assert r.treat_prob(0.0) == pytest.approx(1 - 0.4 / 0.6)


def test_empty_eligible_pool():
    r = resolve_side(1.2, 0.0, 0.0, 0.0)
    assert r.target == 0.0
    assert np.isfinite(r.alpha)


def test_main_resolution_is_plain_ratio():
    r = resolve_main(1.25, 0.2, 0.4, 0.5)
    assert (r.aleph, r.beth) == (1, 1)
    assert r.alpha == pytest.approx(0.625)
    with pytest.raises(ConstraintInfeasible):
        resolve_main(1.0, 0.2, 0.0, 0.5)


@given(q=st.floats(0, 5), obs=prob, frac_nat=prob, frac_elig=prob)
def test_resolution_invariants(q, obs, frac_nat, frac_elig):
    elig = frac_elig
    nat = frac_nat * elig
    r = resolve_side(q, obs, nat, elig)
    assert r.target <= elig + 1e-15
    assert r.target == pytest.approx(min(q * obs, elig))
    assert not (r.aleph == 0 and r.beth == 1)
    if r.aleph:
        assert 0.0 <= r.alpha <= 1.0 + 1e-12
    # implied densities stay in [0, 1]
    for f in (0.0, 0.3, 1.0):
        d = float(r.treat_prob(f))
        assert -1e-12 <= d <= 1 + 1e-12


@given(obs=st.floats(0.01, 0.5), elig=st.floats(0.5, 1.0), q1=st.floats(0, 3), q2=st.floats(0, 3))
def test_target_monotone_in_multiplier(obs, elig, q1, q2):
    lo, hi = sorted((q1, q2))
    assert resolve_side(lo, obs, obs, elig).target <= resolve_side(hi, obs, obs, elig).target


def test_presets():
    assert preset("g0").q == 1.0 and preset("g0").m == 1.0
    assert preset("g1").m == 0.0
    assert preset("g2").m == 1.25
    assert preset("g3").m == 1.5
    with pytest.raises(RegimeError):
        preset("g9")


def test_config_round_trip():
    spec = RegimeSpec("custom", (1.0, 0.5), 2.0, abolish_censoring=False)
    assert RegimeSpec.from_config(spec.to_config()) == spec
    assert RegimeSpec.from_config("g2") == preset("g2")
    assert RegimeSpec.from_config({"label": "x", "preset": "g1"}).m == 0.0


def test_per_interval_lookup_and_horizon():
    spec = RegimeSpec("seq", (1.0, 2.0), 1.0)
    assert spec.q_at(2) == 2.0
    with pytest.raises(RegimeError):
        spec.q_at(3)
    with pytest.raises(RegimeError):
        spec.check_horizon(3)
    with pytest.raises(RegimeError):
        spec.q_at(0)


def test_invalid_multipliers():
    with pytest.raises(RegimeError):
        RegimeSpec("bad", -1.0)
    with pytest.raises(RegimeError):
        RegimeSpec("bad", float("nan"))


def test_config_errors():
    with pytest.raises(RegimeError):
        regimes_from_config([])
    with pytest.raises(RegimeError):
        regimes_from_config(["g0", "g0"])
    with pytest.raises(RegimeError):
        regimes_from_config([{"q": 1}])


def test_resolve_constraints_checks_inputs():
    res = resolve_constraints(preset("g1"), 1, 0.2, 0.1, 0.2, 0.1, 0.9, 0.7)
    assert res.target_B == pytest.approx(0.2) and res.target_H == 0.0
    with pytest.raises(RegimeError):
        resolve_constraints(preset("g0"), 1, 0.2, 0.1, 0.6, 0.1, 0.5, 0.7)
    with pytest.raises(RegimeError):
        resolve_constraints(preset("g0"), 1, 1.2, 0.1, 0.2, 0.1, 0.5, 0.7)
