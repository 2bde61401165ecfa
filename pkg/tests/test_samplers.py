import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causal_roundtrip.diffusion import NoiseSchedule, linear_beta_schedule
from causal_roundtrip.exceptions import ConfigError, GridMismatchError, TrajectoryBlowupError
from causal_roundtrip.samplers import (EpsFunction, LatentCode, belm_coefficients, belm_decode,
                                       belm_decode_generative, belm_encode, ddim_decode, ddim_encode, ddim_step_down,
                                       ddim_step_up, roundtrip, sre_ratio)

from causal_roundtrip.experiments import ddim_tanh_sweep, roundtrip_denoisers


def stub(fn, T=50):
    return EpsFunction(fn, linear_beta_schedule(T))


ZERO = lambda x, t, c: np.zeros_like(x)
TANH = lambda x, t, c: np.tanh(x)


def test_ddim_step_hand_value():
    sched = NoiseSchedule.from_alpha_bar([1.0, 0.81, 0.25])
    out = ddim_step_down(1.0, 2, 0.5, sched)
    expected = 0.9 * (1 - np.sqrt(0.75) * 0.5) / 0.5 + np.sqrt(0.19) * 0.5
    assert out == pytest.approx(expected, abs=1e-12)
    assert out == pytest.approx(1.23852, abs=1e-5)


def test_ddim_step_zero_eps_rescales():
    sched = linear_beta_schedule(10)
    assert ddim_step_down(2.0, 5, 0.0, sched) == pytest.approx(2.0 * sched.gamma[4] / sched.gamma[5])


def test_ddim_equal_levels_is_identity():
    sched = NoiseSchedule.from_alpha_bar([1.0, 0.5, 0.5, 0.2], strict=False)
    assert ddim_step_down(0.7, 2, 0.3, sched) == pytest.approx(0.7)
    assert ddim_step_up(0.7, 1, 0.3, sched) == pytest.approx(0.7)


def test_ddim_up_down_with_nonlinear_eps_leaves_error():
    sched = linear_beta_schedule(20)
    x = np.linspace(-2, 2, 11)
    up = ddim_step_up(x, 5, np.tanh(x), sched)
    back = ddim_step_down(up, 6, np.tanh(up), sched)
    assert np.max(np.abs(back - x)) > 0


def test_ddim_constant_eps_roundtrip_exact():
    d = stub(lambda x, t, c: np.full_like(x, 0.7))
    x = np.linspace(-3, 3, 101)
    np.testing.assert_allclose(ddim_decode(ddim_encode(x, None, d), None, d), x, atol=1e-10)


def test_ddim_tanh_error_positive_and_scales_with_T():
    x0 = np.random.default_rng(0).standard_normal(1000)
    res = ddim_tanh_sweep(x0, [25, 50, 100, 200])
    errs = [r["mean_error"] for r in res["rows"]]
    assert res["rows"][1]["median_error"] > 1e-6
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    assert all(1.5 <= r <= 3.0 for r in ratios), ratios
    assert -1.4 <= res["slope"] <= -0.6


def test_belm_uniform_grid_is_leapfrog():
    rho = np.arange(6) * 0.3
    ab = 1.0 / (1.0 + rho**2)
    c = belm_coefficients(NoiseSchedule.from_alpha_bar(ab))
    np.testing.assert_allclose(c.a[1:5], 0.0, atol=1e-12)
    np.testing.assert_allclose(c.b[1:5], 1.0)
    np.testing.assert_allclose(c.d[1:5], -0.6)


def test_belm_consistency_a_plus_b():
    c = belm_coefficients(linear_beta_schedule(200))
    np.testing.assert_allclose((c.a + c.b)[1:200], 1.0, atol=1e-12)


def test_belm_three_point_is_third_order():
    # y' = -y integrated backwards with the three-point rule: local error O(h^3)
    def one_step_error(h):
        r0, r1, r2 = 1.0 + 2.2 * h, 1.0 + h, 1.0
        h1, h2 = r0 - r1, r2 - r1
        b = (h1 / h2) ** 2
        a, d = 1 - b, h1 * (h2 - h1) / h2
        y = lambda r: np.exp(-r)
        return abs(a * y(r1) + b * y(r2) + d * (-y(r1)) - y(r0))

    assert one_step_error(0.1) / one_step_error(0.05) >= 7.0


@pytest.mark.parametrize("T", [20, 200])
def test_belm_zero_eps_is_rescaling(T):
    d = stub(ZERO, T)
    x0 = np.linspace(-2, 2, 9)
    lat = belm_encode(x0, None, d)
    g = d.schedule.gamma
    np.testing.assert_allclose(lat.x_T, g[T] / g[0] * x0, rtol=1e-9)
    np.testing.assert_allclose(belm_decode_generative(lat.x_T, None, d), x0, rtol=1e-10)
    np.testing.assert_allclose(belm_decode(lat, None, d), x0, rtol=1e-12)


def test_belm_roundtrip_exact_on_all_denoisers():
    x0 = np.random.default_rng(3).standard_normal(1000) * 1.5
    for name, den, cond in roundtrip_denoisers(200, seed=0, train_epochs=5):
        c = np.random.default_rng(1).standard_normal((1000, 2)) if cond else None
        rec = belm_decode(belm_encode(x0, c, den), c, den)
        err = np.max(np.abs(rec - x0) / np.maximum(np.abs(x0), 1.0))
        assert err <= 1e-8, name


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=20),
       st.floats(0.2, 3.0), st.floats(-2, 2))
def test_belm_roundtrip_property(xs, freq, shift):
    d = stub(lambda x, t, c: np.sin(freq * x + shift) + 0.01 * t, 40)
    x0 = np.array(xs)
    np.testing.assert_allclose(roundtrip(x0, None, d, "belm"), x0, atol=1e-8)


def test_stiff_stub_loses_exactness_gradually():
    # parasitic mode of the three-point recursion grows with the stub's Lipschitz constant
    x0 = np.random.default_rng(3).standard_normal(1000) * 1.5
    errs = []
    for f in (1.0, 5.0):
        d = stub(lambda x, t, c: 2.0 * np.sin(f * x + t / 10.0), 200)
        errs.append(np.max(np.abs(roundtrip(x0, None, d, "belm") - x0)))
    assert errs[0] < 1e-10 < errs[1] < 1e-5


def test_belm_encode_injective():
    x0 = np.linspace(-3, 3, 500)
    lat = belm_encode(x0, None, stub(TANH, 50))
    gaps = np.abs(np.diff(np.sort(lat.x_T)))
    assert gaps.min() > 1e-12


def test_decode_changes_with_condition(stress_scm, stress_data):
    mech = stress_scm.mechanisms_["Y"]
    pa = stress_scm.parent_frame(stress_data.data, "Y")
    lat = mech.encode(stress_data.data["Y"], pa)
    flipped = pa.assign(T=1 - pa["T"])
    a = mech.decode(lat, pa)
    b = mech.decode(lat.without_aux(), flipped)
    assert np.mean(np.abs(a - b)) > 0


def test_ddim_trained_roundtrip_error_positive(stress_scm, stress_data):
    mech = stress_scm.mechanisms_["Y"].with_sampler("ddim")
    pa = stress_scm.parent_frame(stress_data.data, "Y")
    y = stress_data.data["Y"].to_numpy()
    x0 = mech.preprocessor_.transform_target(y)
    rec = mech.decode_normalized(mech.encode(y, pa), pa)
    rel = np.abs(rec - x0) / np.maximum(np.abs(x0), 1.0)
    assert np.median(rel) > 0


def test_generative_decode_matches_standard_normal_data():
    from causal_roundtrip.diffusion import DiffusionMechanismConfig, train_mechanism

    rng = np.random.default_rng(0)
    cfg = DiffusionMechanismConfig(timesteps=50, hidden_dim=64, epochs=150, learning_rate=2e-3)
    den = train_mechanism(rng.standard_normal(2000), None, cfg, seed=0)
    out = belm_decode_generative(np.random.default_rng(1).standard_normal(5000), None, den)
    assert abs(out.mean()) <= 0.05
    assert abs(out.var() - 1.0) <= 0.1


def test_grid_mismatch_raises():
    lat = belm_encode(np.zeros(3), None, stub(TANH, 20))
    with pytest.raises(GridMismatchError):
        belm_decode(lat, None, stub(TANH, 30))
    with pytest.raises(GridMismatchError):
        ddim_decode(lat, None, stub(TANH, 30))


def test_belm_decode_requires_aux():
    lat = belm_encode(np.zeros(3), None, stub(TANH, 20)).without_aux()
    with pytest.raises(ConfigError):
        belm_decode(lat, None, stub(TANH, 20))


def test_blowup_reports_step():
    d = stub(lambda x, t, c: np.exp(np.abs(x)) * 1e300, 20)
    with np.errstate(over="ignore"), pytest.raises(TrajectoryBlowupError) as exc:
        belm_encode(np.full(2, 5.0), None, d)
    assert exc.value.step >= 1


def test_determinism():
    d = stub(TANH, 30)
    x = np.linspace(-1, 1, 7)
    assert np.array_equal(belm_encode(x, None, d).x_T, belm_encode(x, None, d).x_T)


def test_sre_ratio():
    assert sre_ratio([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert sre_ratio([1.0, 1.0], [2.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        sre_ratio([], [])
