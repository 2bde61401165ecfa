import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_roundtrip.exceptions import ConfigError, DimensionError, DivergenceError
from causal_roundtrip.nn import (AdamState, MlpSpec, adam_update, gradient_check, init_params, mlp_backward,
                                 mlp_forward, sinusoidal_embed)


def _random_params(spec, seed):
    rng = np.random.default_rng(seed)
    p = init_params(spec, rng)
    return {k: v + rng.normal(0, 0.2, v.shape) for k, v in p.items()}


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("activation", ["relu", "silu"])
def test_gradient_matches_finite_differences(seed, activation):
    spec = MlpSpec(input_dim=4, hidden_dim=8, num_blocks=2, activation=activation)
    params = _random_params(spec, seed)
    x = np.random.default_rng(seed + 100).normal(size=(6, 4))
    assert gradient_check(params, spec, x) <= 1e-4


def test_identity_network_is_linear():
    spec = MlpSpec(input_dim=3, hidden_dim=5, num_blocks=1, activation="identity")
    params = _random_params(spec, 3)
    x = np.random.default_rng(1).normal(size=(4, 3))
    y = np.random.default_rng(2).normal(size=(4, 3))
    np.testing.assert_allclose(mlp_forward(params, spec, x + y) - mlp_forward(params, spec, y),
                               mlp_forward(params, spec, x) - mlp_forward(params, spec, np.zeros((4, 3))),
                               atol=1e-12)


def test_zero_output_layer_gives_zero_output():
    spec = MlpSpec(input_dim=2, hidden_dim=16)
    params = init_params(spec, np.random.default_rng(0))
    assert np.all(mlp_forward(params, spec, np.ones((3, 2))) == 0)


def test_wrong_input_width_raises():
    spec = MlpSpec(input_dim=2, hidden_dim=4)
    with pytest.raises(DimensionError):
        mlp_forward(init_params(spec, np.random.default_rng(0)), spec, np.ones((3, 5)))


def test_bad_spec_raises():
    with pytest.raises(ConfigError):
        MlpSpec(input_dim=0, hidden_dim=4)
    with pytest.raises(ConfigError):
        MlpSpec(input_dim=2, hidden_dim=4, activation="tanh")


def test_backward_input_gradient_of_linear_map():
    spec = MlpSpec(input_dim=2, hidden_dim=3, num_blocks=0, activation="identity")
    params = _random_params(spec, 0)
    x = np.ones((1, 2))
    _, gx = mlp_backward(params, spec, x, np.ones((1, 1)))
    w = params["W_in"] @ params["W_out"]
    np.testing.assert_allclose(gx[0], w[:, 0], rtol=1e-12)


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.array([3.0, -0.5])}
    state = AdamState.for_params(params, learning_rate=0.1)
    new, state = adam_update(params, grads, state)
    np.testing.assert_allclose(new["w"], params["w"] - 0.1 * np.sign(grads["w"]), rtol=1e-6)
    assert state.step_count == 1
    assert params["w"][0] == 1.0


def test_adam_rejects_nan_gradient():
    params = {"w": np.zeros(2)}
    with pytest.raises(DivergenceError):
        adam_update(params, {"w": np.array([np.nan, 0.0])}, AdamState.for_params(params))


def test_adam_minimizes_quadratic():
    params = {"w": np.array([5.0, -3.0])}
    state = AdamState.for_params(params, learning_rate=0.05)
    for _ in range(2000):
        params, state = adam_update(params, {"w": 2 * params["w"]}, state)
    assert np.all(np.abs(params["w"]) < 1e-2)


def test_sinusoidal_embed_values():
    e = sinusoidal_embed(0, 8, 100)
    np.testing.assert_array_equal(e[0::2], 0.0)
    np.testing.assert_array_equal(e[1::2], 1.0)
    e = sinusoidal_embed(np.array([3]), 4, 10)
    np.testing.assert_allclose(e[0], [np.sin(3), np.cos(3), np.sin(3 / 100), np.cos(3 / 100)])
    with pytest.raises(ConfigError):
        sinusoidal_embed(11, 4, 10)
    with pytest.raises(ConfigError):
        sinusoidal_embed(1, 3, 10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_init_is_seed_deterministic(seed, blocks):
    spec = MlpSpec(input_dim=3, hidden_dim=6, num_blocks=blocks)
    a = init_params(spec, np.random.default_rng(seed))
    b = init_params(spec, np.random.default_rng(seed))
    assert all(np.array_equal(a[k], b[k]) for k in a)
