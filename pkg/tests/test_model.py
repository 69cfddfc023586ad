import json
import math

import pytest
from hypothesis import given, strategies as st

from lifetime_ruin.model import (REFERENCE, MarketParams, ParameterError, Params, derive_params,
                                 load_params, validate)


def test_reference_derived_values_by_hand():
    d = derive_params(REFERENCE)
    # r~ = r - a + b^2 = 0.02 + 0.01; excess = mu - r = 0.04
    assert d.r_tilde == pytest.approx(0.03, abs=1e-15)
    assert d.excess == pytest.approx(0.04, abs=1e-15)
    assert d.mu_tilde == pytest.approx(0.07, abs=1e-15)
    assert d.m == pytest.approx(0.5 * 0.2 ** 2, abs=1e-15)
    assert d.bbar2 == pytest.approx(0.01, abs=1e-15)
    assert d.rho_tilde == pytest.approx(0.1 / math.sqrt(0.05), abs=1e-15)


def test_correlated_case_by_hand():
    p = MarketParams(r=0.03, mu=0.08, sigma=0.25, a=0.01, b=0.2, rho=0.5, lam=0.05)
    d = derive_params(p)
    excess = 0.08 - 0.03 - 0.25 * 0.2 * 0.5
    assert d.excess == pytest.approx(0.025)
    assert d.r_tilde == pytest.approx(0.03 - 0.01 + 0.04 + excess * 0.5 * 0.2 / 0.25)
    assert d.bbar2 == pytest.approx(0.04 * 0.75)


@pytest.mark.parametrize("change, message", [
    ({"sigma": 0.0}, "sigma must be positive"),
    ({"rho": 1.0}, "|rho| = 1 precluded"),
    ({"rho": -1.0}, "|rho| = 1 precluded"),
    ({"lam": 0.0}, "lambda must be positive"),
    ({"b": 0.0}, "b must be positive"),
    ({"r": math.nan}, "r must be finite"),
])
def test_validation_messages(change, message):
    kw = {**REFERENCE.__dict__, **change}
    p = MarketParams(**kw)
    report = validate(p)
    assert not report.ok
    assert message in report.problems
    with pytest.raises(ParameterError, match="invalid parameters"):
        derive_params(p)


def test_reference_is_valid():
    assert validate(REFERENCE).ok


@given(r=st.floats(0.001, 0.1), excess=st.floats(-0.1, 0.2), sigma=st.floats(0.05, 0.6),
       a=st.floats(-0.05, 0.05), b=st.floats(0.01, 0.5), rho=st.floats(-0.95, 0.95),
       lam=st.floats(0.005, 0.2))
def test_derived_identities(r, excess, sigma, a, b, rho, lam):
    p = MarketParams(r, r + excess + sigma * b * rho, sigma, a, b, rho, lam)
    d = derive_params(p)
    assert d.mu_tilde - d.r_tilde == pytest.approx(d.excess, abs=1e-12)
    assert 0 < d.rho_tilde < 1
    assert d.rho_tilde ** 2 == pytest.approx(d.bbar2 / (d.bbar2 + sigma ** 2))
    assert d.m >= 0


def test_mapping_round_trip():
    assert MarketParams.from_mapping(REFERENCE.to_mapping()) == REFERENCE


def test_mapping_errors():
    data = REFERENCE.to_mapping()
    del data["lambda"]
    with pytest.raises(ParameterError, match="missing key 'lambda'"):
        MarketParams.from_mapping(data)
    with pytest.raises(ParameterError, match="unknown key"):
        MarketParams.from_mapping({**REFERENCE.to_mapping(), "kappa": 1})
    with pytest.raises(ParameterError, match="non-numeric"):
        MarketParams.from_mapping({**REFERENCE.to_mapping(), "r": "abc"})


def test_load_params_formats(tmp_path):
    js = tmp_path / "p.json"
    js.write_text(json.dumps({"params": REFERENCE.to_mapping()}))
    assert load_params(js) == REFERENCE
    kv = tmp_path / "p.txt"
    kv.write_text("# reference\n" + "\n".join(f"{k} = {v}" for k, v in REFERENCE.to_mapping().items()))
    assert load_params(kv) == REFERENCE
    kv.write_text("r 0.02\n")
    with pytest.raises(ParameterError, match="line 1"):
        load_params(kv)


def test_params_bundle():
    prm = Params.build(REFERENCE)
    assert prm.lam == 0.04
    assert prm.derived == derive_params(REFERENCE)
