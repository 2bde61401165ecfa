import numpy as np
import pandas as pd
import pytest

from causal_roundtrip.exceptions import ConfigError, DimensionError
from causal_roundtrip.metrics import (cic_score, cmi_score, delta_u, kmd_score, ksg_cmi, median_heuristic,
                                      metric_validation_suite, mmd2_unbiased, mmd_permutation_test,
                                      prior_matching_diagnostic)
from causal_roundtrip.samplers import LatentCode
from causal_roundtrip.scm import CausalGraph


def test_delta_u():
    rng = np.random.default_rng(0)
    u = rng.normal(size=5000)
    assert delta_u(u, u) == 0.0
    assert delta_u(3 * u + 1, u) == pytest.approx(0.0, abs=1e-20)
    assert 1.8 <= delta_u(rng.normal(size=5000), u) <= 2.2
    with pytest.raises(ConfigError):
        delta_u(u[:5], u[:5])


def test_cic_values():
    assert cic_score(0, 0) == 1.0
    assert cic_score(1, 0) == pytest.approx(0.36788, abs=1e-5)
    assert cic_score(0.5, 0.25) == pytest.approx(np.exp(-0.75))
    with pytest.raises(ConfigError):
        cic_score(-1, 0)


def test_ksg_gaussian_mi_median_over_seeds():
    truth = -0.5 * np.log(1 - 0.36)
    est = []
    for s in range(10):
        rng = np.random.default_rng(s)
        x = rng.normal(size=2000)
        y = 0.6 * x + 0.8 * rng.normal(size=2000)
        est.append(ksg_cmi(x, y))
    assert abs(np.median(est) - truth) <= 0.05


def test_ksg_independent_uniforms():
    rng = np.random.default_rng(1)
    assert abs(ksg_cmi(rng.random(2000), rng.random(2000))) <= 0.05


def test_ksg_markov_chain_conditional_independence():
    rng = np.random.default_rng(2)
    x = rng.normal(size=2000)
    z = x + 0.5 * rng.normal(size=2000)
    y = z + 0.5 * rng.normal(size=2000)
    assert ksg_cmi(x, y) > 0.3
    assert abs(ksg_cmi(x, y, z)) <= 0.05


def test_ksg_handles_discrete_ties():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 2, 1000).astype(float)
    y = x.copy()
    assert ksg_cmi(x, y) == pytest.approx(np.log(2), abs=0.05)


def test_ksg_validation():
    with pytest.raises(DimensionError):
        ksg_cmi(np.zeros(10), np.zeros(9))
    with pytest.raises(ConfigError):
        ksg_cmi(np.arange(4.0), np.arange(4.0), k=5)


def _frame(n=1500, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    b = np.sin(a) + 0.3 * rng.normal(size=n)
    return CausalGraph(["A", "B"], [("A", "B")]), pd.DataFrame({"A": a, "B": b})


def test_cmi_score_identity_and_noise():
    g, obs = _frame()
    assert cmi_score(g, obs, obs).aggregate == 1.0
    cf = obs.assign(B=np.random.default_rng(9).normal(size=len(obs)))
    rep = cmi_score(g, obs, cf)
    assert rep.per_edge["A->B"] < 0.1
    with pytest.raises(DimensionError):
        cmi_score(g, obs, obs[["A"]])


def test_mmd_identical_and_shifted():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(500, 1))
    assert abs(mmd2_unbiased(a, a, 1.0)) <= 4 / 500
    assert mmd2_unbiased(a, rng.normal(1, 1, (500, 1)), 1.0) > 0.1


def test_mmd_permutation_pvalues():
    passes = 0
    for s in range(10):
        rng = np.random.default_rng(s)
        a, b = rng.normal(size=(500, 1)), rng.normal(size=(500, 1))
        _, p = mmd_permutation_test(a, b, median_heuristic(np.vstack([a, b])), n_perm=200, seed=s)
        passes += p > 0.01
    assert passes >= 9


def test_median_heuristic():
    pts = np.array([[0.0], [1.0], [3.0]])
    assert median_heuristic(pts) == pytest.approx(2.0)


def test_kmd_ordering():
    g, obs = _frame()
    same = kmd_score(obs, obs, "B", ["A"])
    unrelated = kmd_score(obs, obs.assign(B=np.random.default_rng(2).normal(3, 1, len(obs))), "B", ["A"])
    assert same >= 0.99
    assert unrelated < same


def test_prior_matching():
    assert prior_matching_diagnostic(np.zeros(10)) == 0.0
    u = np.random.default_rng(0).normal(size=(20000, 3))
    assert prior_matching_diagnostic(u) == pytest.approx(3.0, rel=0.03)
    lat = LatentCode(u[:, 0], None, 10, "belm")
    assert prior_matching_diagnostic(lat) == pytest.approx(1.0, rel=0.03)


def test_metric_validation_suite_small():
    rows = {r.model: r for r in metric_validation_suite(n=800, seed=1)}
    assert rows["A"].cic == 1.0
    assert rows["B"].cic < 0.5
    assert rows["E"].cmi > 0
    assert rows["A"].kmd >= rows["E"].kmd
