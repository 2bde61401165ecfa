import json

import numpy as np
import pandas as pd
import pytest

from causal_roundtrip.dgp import (LALONDE_COLUMNS, gen_ablation_mediation, gen_metric_validation_scm, gen_psm_failure,
                                  gen_semisynthetic_lalonde, gen_stress_noninvertible, lalonde_ite, load_lalonde_csv,
                                  mediation_ite, synthetic_lalonde_covariates)
from causal_roundtrip.exceptions import ConfigError, DimensionError


def test_psm_truth_and_overlap():
    gd = gen_psm_failure(5000, 42)
    assert gd.ate_true == 5000.0
    assert 0.2 < gd.data["T"].mean() < 0.8
    assert set(np.unique(gd.data["C1"])) == {0.0, 1.0, 2.0}
    np.testing.assert_allclose(np.abs(gd.cf_outcome - gd.data["Y"]), 5000.0)
    gd.graph.topo_order()


def test_stress_truth():
    gd = gen_stress_noninvertible(20000, 1)
    d = gd.data
    np.testing.assert_array_equal(gd.ite_true, 5.0)
    resid = d["Y"] - 5 * d["T"] - 2 * d["W"]
    assert resid.mean() == pytest.approx(2.25, abs=0.1)
    np.testing.assert_allclose(resid, gd.noises["Y"] ** 2, atol=1e-12)
    assert 0.0 < d["T"].mean() < 1.0


def test_ablation_monte_carlo_truth():
    gd = gen_ablation_mediation(4000, 42)
    analytic = 250 * np.sqrt(2 / np.pi)
    assert abs(gd.ate_true - analytic) <= 3 * gd.ate_se
    assert gd.metadata["reference_ate"] == 202.29
    assert mediation_ite(np.array([0.0]), np.array([0.0]))[0] == pytest.approx(375.0)
    t = gd.data["T"].to_numpy()
    np.testing.assert_allclose(np.where(t == 1, gd.data["Y"] - gd.cf_outcome, gd.cf_outcome - gd.data["Y"]),
                               gd.ite_true, atol=1e-9)
    with pytest.raises(ConfigError):
        gen_ablation_mediation(4000, 42, n_mc=1000)


def test_ablation_noise_depends_on_z():
    gd = gen_ablation_mediation(20000, 3)
    u, z = gd.noises["Y"], gd.data["Z"]
    assert u[z == 0].std() == pytest.approx(np.sqrt(16 + 4), rel=0.05)
    assert u[z == 1].std() == pytest.approx(3.0, rel=0.05)


def test_lalonde_ite_hand_value():
    cov = pd.DataFrame({"educ": [12.0], "age": [40.0], "nodegr": [0.0], "black": [1.0], "re74": [3000.0]})
    assert lalonde_ite(cov, 3000.0)[0] == pytest.approx(1500 + 350 * np.log(13), abs=1e-9)
    assert lalonde_ite(cov, 3000.0)[0] == pytest.approx(2397.7, abs=0.05)
    far = cov.assign(re74=1e7)
    assert lalonde_ite(far, 0.0)[0] == pytest.approx(1397.7, abs=0.05)


def test_semisynthetic_structure():
    gd = gen_semisynthetic_lalonde(seed=42)
    assert len(gd.data) == 445
    assert gd.ate_true == pytest.approx(gd.ite_true.mean())
    t = gd.data["treat"].to_numpy()
    np.testing.assert_allclose(np.where(t == 1, gd.data["re78"] - gd.cf_outcome, gd.cf_outcome - gd.data["re78"]),
                               gd.ite_true, atol=1e-6)


def test_synthetic_covariates_schema():
    cov = synthetic_lalonde_covariates(445, 42)
    assert tuple(cov.columns) == LALONDE_COLUMNS
    assert cov["age"].between(17, 55).all() and cov["educ"].between(3, 16).all()
    assert ((cov["black"] + cov["hisp"]) <= 1).all()


def test_fixture_loads():
    from importlib.resources import files

    path = files("causal_roundtrip") / "data" / "lalonde_fixture.csv"
    cov = load_lalonde_csv(path)
    assert cov.shape == (20, 8)
    gd = gen_semisynthetic_lalonde(path, seed=1)
    assert len(gd.data) == 20


def test_loader_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("treat,age\n1,20\n")
    with pytest.raises(DimensionError, match="educ"):
        load_lalonde_csv(p)
    cov = synthetic_lalonde_covariates(20, 1).astype(str)
    cov.loc[4, "age"] = "abc"
    cov.to_csv(p, index=False)
    with pytest.raises(DimensionError, match="row 5.*'age'"):
        load_lalonde_csv(p)


def test_generators_are_deterministic():
    a, b = gen_stress_noninvertible(300, 9), gen_stress_noninvertible(300, 9)
    pd.testing.assert_frame_equal(a.data, b.data)
    assert not gen_stress_noninvertible(300, 10).data.equals(a.data)
    with pytest.raises(ConfigError):
        gen_stress_noninvertible(50)


def test_metric_validation_models():
    gd, models = gen_metric_validation_scm(1000, 0)
    d = gd.data
    a = models["A"]
    u = a.encode(d["Y"], d["W"], d["T"])
    np.testing.assert_allclose(u, gd.noises["Y"], atol=1e-12)
    np.testing.assert_allclose(a.decode(u, d["W"], d["T"]), d["Y"], atol=1e-12)
    assert not np.allclose(models["B"].encode(d["Y"], d["W"], d["T"]), u)


def test_to_csv_sidecar(tmp_path):
    gd = gen_stress_noninvertible(200, 1)
    side = gd.to_csv(tmp_path / "s.csv")
    meta = json.loads(side.read_text())
    assert meta["ate_true"] == 5.0 and meta["n"] == 200
    table = pd.read_csv(tmp_path / "s.csv")
    assert {"noise_Y", "ite_true", "cf_outcome"} <= set(table.columns)
