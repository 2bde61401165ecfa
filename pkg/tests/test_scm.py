import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from causal_roundtrip.exceptions import ConfigError, DegenerateColumnError, DimensionError, GraphError, NotFittedError
from causal_roundtrip.scm import (AdditiveNoiseMechanism, CausalGraph, DiffusionMechanism, EmpiricalMechanism,
                                  MlpRegressor, NodePreprocessor, StructuralCausalModel, node_seed, sre_measure,
                                  topo_order)


def chain():
    return CausalGraph(["Y", "T", "W"], [("W", "T"), ("W", "Y"), ("T", "Y")])


def test_topo_order_simple():
    assert topo_order(chain()) == ["W", "T", "Y"]
    assert CausalGraph(["A"], []).topo_order() == ["A"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_topo_order_random_dag(seed):
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in rng.permutation(8)]
    edges = [(names[i], names[j]) for i in range(8) for j in range(i + 1, 8) if rng.random() < 0.3]
    g = CausalGraph(list(rng.permutation(names)), edges)
    pos = {n: i for i, n in enumerate(g.topo_order())}
    assert all(pos[u] < pos[v] for u, v in edges)


def test_topo_order_ignores_declaration_order():
    a = CausalGraph(["A", "B", "C", "D"], [("A", "C"), ("B", "C"), ("C", "D")])
    b = CausalGraph(["D", "C", "B", "A"], [("C", "D"), ("B", "C"), ("A", "C")])
    assert a.topo_order() == b.topo_order()
    assert a.parents("C") == b.parents("C") == ["A", "B"]


@pytest.mark.parametrize("nodes,edges,msg", [
    (["A", "B"], [("A", "B"), ("B", "A")], "cycle"),
    (["A"], [("A", "A")], "self-loop"),
    (["A", "A"], [], "duplicate"),
    (["A"], [("A", "Z")], "undeclared"),
])
def test_graph_validation(nodes, edges, msg):
    with pytest.raises(GraphError, match=msg):
        CausalGraph(nodes, edges)


def test_cycle_message_names_nodes():
    with pytest.raises(GraphError, match="A -> B -> C -> A|B -> C -> A -> B|C -> A -> B -> C"):
        CausalGraph(["A", "B", "C"], [("A", "B"), ("B", "C"), ("C", "A")])


def test_graph_dict_roundtrip():
    g = CausalGraph(["T", "Y"], [("T", "Y")], kinds={"T": "categorical"}, n_classes={"T": 2})
    h = CausalGraph.from_dict(g.to_dict())
    assert h.to_dict() == g.to_dict()
    assert h.descendants(["T"]) == {"Y"} and h.ancestors("Y") == {"T"} and h.children("T") == ["Y"]
    with pytest.raises(GraphError):
        CausalGraph.from_dict({"edges": []})
    with pytest.raises(GraphError):
        g.parents("nope")


def test_preprocessor_onehot_and_standardize():
    X = pd.DataFrame({"c": [0, 1, 2, 1], "x": [1.0, 2.0, 3.0, 4.0]})
    pp = NodePreprocessor().fit(X, [1.0, 2.0, 3.0, 4.0], {"c": "categorical"}, n_classes={"c": 3})
    out = pp.transform(X)
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(out[:, :3], np.eye(3)[[0, 1, 2, 1]])
    assert out[:, 3].mean() == pytest.approx(0) and out[:, 3].std() == pytest.approx(1)
    z = pp.transform_target([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(pp.inverse_transform_target(z), [1, 2, 3, 4])


def test_preprocessor_categorical_target_rounds_and_clips():
    pp = NodePreprocessor().fit(None, [0, 1, 2], target_kind="categorical")
    np.testing.assert_array_equal(pp.inverse_transform_target([-0.7, 0.6, 1.4, 7.0]), [0, 1, 1, 2])


def test_preprocessor_degenerate_column():
    with pytest.raises(DegenerateColumnError):
        NodePreprocessor().fit(pd.DataFrame({"x": [1.0, 1.0, 1.0]}), [1.0, 2.0, 3.0])


def test_empirical_identity_and_bootstrap(rng):
    m = EmpiricalMechanism().fit(None, rng.normal(3, 1, 2000))
    v = np.array([1.5, -2.0])
    np.testing.assert_array_equal(m.decode(m.encode(v)), v)
    s = m.sample(None, 4000, np.random.default_rng(1))
    assert abs(s.mean() - m.values_.mean()) < 3 * m.values_.std() / np.sqrt(4000) * 1.5


def test_anm_encode_is_exact_residual(rng):
    x = rng.normal(size=500)
    u = rng.normal(0, 0.1, 500)
    y = 2 * x + 1 + u
    m = AdditiveNoiseMechanism("linear").fit(pd.DataFrame({"x": x}), y)
    f = m.predict(pd.DataFrame({"x": x}))
    np.testing.assert_array_equal(m.encode(f + u, pd.DataFrame({"x": x})), (f + u) - f)
    np.testing.assert_allclose(m.decode(m.encode(y, pd.DataFrame({"x": x})), pd.DataFrame({"x": x})), y, atol=1e-12)


@pytest.mark.parametrize("reg", ["linear", "mlp", "gbm", "rf"])
def test_anm_recovers_line(reg):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 2000)
    y = 2 * x + 1 + rng.normal(0, 0.1, 2000)
    m = AdditiveNoiseMechanism(reg).fit(pd.DataFrame({"x": x}), y)
    assert 1.9 <= m.predict(pd.DataFrame({"x": [0.5]}))[0] <= 2.1


def test_anm_unknown_regressor():
    with pytest.raises(ConfigError):
        AdditiveNoiseMechanism("svm").fit(pd.DataFrame({"x": [0.0, 1.0]}), [0.0, 1.0])


def test_mlp_regressor_is_sklearn_compatible(rng):
    reg = MlpRegressor(hidden_dim=16, epochs=30)
    assert clone(reg).get_params() == reg.get_params()
    X = rng.normal(size=(300, 2))
    y = np.sin(X[:, 0]) + X[:, 1]
    with pytest.raises(NotFittedError):
        reg.predict(X)
    assert reg.fit(X, y).score(X, y) > 0.9


def test_diffusion_mechanism_roundtrip(stress_scm, stress_data):
    mech = stress_scm.mechanism("Y")
    pa = stress_scm.parent_frame(stress_data.data, "Y")
    y = stress_data.data["Y"].to_numpy()
    np.testing.assert_allclose(mech.decode(mech.encode(y, pa), pa), y, rtol=0, atol=1e-6 * y.std())


def test_sre_reported_and_measured(stress_scm, stress_data):
    pa = stress_scm.parent_frame(stress_data.data, "Y")
    y = stress_data.data["Y"]
    belm = sre_measure(stress_scm.mechanism("Y"), pa, y)
    ddim = sre_measure(stress_scm.mechanism("Y").with_sampler("ddim"), pa, y)
    assert belm.reported == 0.0 and belm.measured <= 1e-12
    assert ddim.reported == ddim.measured > 0
    anm = AdditiveNoiseMechanism("linear").fit(pa, y)
    res = sre_measure(anm, pa, y)
    assert res.reported == 0.0 and res.measured <= 1e-12
    assert sre_measure(EmpiricalMechanism().fit(None, y), None, y).measured == 0.0


def test_with_sampler_shares_denoiser(stress_scm):
    other = stress_scm.with_sampler("ddim")
    assert other.mechanism("Y").denoiser_ is stress_scm.mechanism("Y").denoiser_
    assert other.mechanism("Y").sampler == "ddim" and stress_scm.mechanism("Y").sampler == "belm"
    with pytest.raises(ConfigError):
        stress_scm.mechanism("Y").with_sampler("euler")


def test_categorical_diffusion_node_emits_valid_codes(stress_scm):
    s = stress_scm.sample(500, seed=3)
    assert set(np.unique(s["T"])) <= {0.0, 1.0}


def test_sample_is_deterministic(stress_scm):
    pd.testing.assert_frame_equal(stress_scm.sample(200, seed=7), stress_scm.sample(200, seed=7))


def test_empirical_scm_reproduces_marginals(rng):
    g = CausalGraph(["A", "B"], [])
    data = pd.DataFrame({"A": rng.normal(2, 1, 3000), "B": rng.exponential(1, 3000)})
    s = StructuralCausalModel(g).fit(data).sample(3000, seed=1)
    for c in "AB":
        assert abs(s[c].mean() - data[c].mean()) < 3 * data[c].std() * np.sqrt(2 / 3000)


def test_fit_is_deterministic_and_declaration_invariant(stress_data):
    mk = lambda: DiffusionMechanism(timesteps=10, hidden_dim=8, epochs=2)
    g1 = stress_data.graph
    g2 = CausalGraph(["Y", "W", "T"], [("T", "Y"), ("W", "T"), ("W", "Y")], kinds={"T": "categorical"},
                     n_classes={"T": 2})
    a = StructuralCausalModel(g1, {"T": mk(), "Y": mk()}, random_state=3).fit(stress_data.data)
    b = StructuralCausalModel(g2, {"Y": mk(), "T": mk()}, random_state=3).fit(stress_data.data[["Y", "T", "W"]])
    for node in ("T", "Y"):
        pa, pb = a.mechanism(node).denoiser_.params, b.mechanism(node).denoiser_.params
        assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_node_seed_depends_on_name_only():
    assert node_seed(1, "Y") == node_seed(1, "Y")
    assert node_seed(1, "Y") != node_seed(1, "T") != node_seed(2, "T")


def test_fit_validation(stress_data):
    g = stress_data.graph
    with pytest.raises(DimensionError, match="missing"):
        StructuralCausalModel(g).fit(stress_data.data[["W", "T"]])
    bad = stress_data.data.copy()
    bad.loc[0, "Y"] = np.nan
    with pytest.raises(DimensionError):
        StructuralCausalModel(g).fit(bad)
    bad = stress_data.data.copy()
    bad.loc[0, "T"] = 0.5
    with pytest.raises(DimensionError, match="categorical"):
        StructuralCausalModel(g).fit(bad)
    with pytest.raises(GraphError):
        StructuralCausalModel(g, {"Q": EmpiricalMechanism()}).fit(stress_data.data)
    with pytest.raises(ConfigError):
        StructuralCausalModel(g, {"Y": EmpiricalMechanism()}).fit(stress_data.data)
    with pytest.raises(NotFittedError):
        StructuralCausalModel(g).sample(5)


def test_row_mismatch_raises(stress_scm, stress_data):
    mech = stress_scm.mechanism("Y")
    pa = stress_scm.parent_frame(stress_data.data, "Y")
    with pytest.raises(DimensionError):
        mech.encode(stress_data.data["Y"].to_numpy()[:10], pa)
