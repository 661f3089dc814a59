import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import operand_scale, ulp_close
from resnoise import diffusion as D
from resnoise.numerics import ShapeError
from resnoise.oracles import iterate_forward, posterior_by_quadrature, true_resnoise
from resnoise.schedule import acceleration_bias, build_schedule

S1000 = build_schedule(1000)

finite = st.floats(-3, 3, allow_nan=False)
vec = arrays(np.float64, 5, elements=finite)


def test_residual_basics():
    x0 = np.array([1.0, -1.0])
    assert np.array_equal(D.residual(x0, x0), np.zeros(2))
    assert D.residual(np.array([1.5]), np.array([1.0])).tolist() == [0.5]
    x_hat = np.array([0.25, 0.75])
    assert np.array_equal(x0 + D.residual(x_hat, x0), x_hat)
    with pytest.raises(ShapeError):
        D.residual(np.zeros(2), np.zeros(3))


def test_step_range_checked(sched1000):
    z = np.zeros(3)
    for t in (0, 1001):
        with pytest.raises(ValueError):
            D.q_sample_step(z, z, t, z, sched1000)
        with pytest.raises(ValueError):
            D.q_sample_closed(z, z, t, z, sched1000)
        with pytest.raises(ValueError):
            D.mu_from_resnoise(z, z, t, sched1000)
    with pytest.raises(ValueError):
        D.posterior_mean(z, z, z, 1, sched1000)


def test_one_step_without_noise_or_residual(sched1000, rng):
    x = rng.standard_normal(4)
    z = np.zeros(4)
    out = D.q_sample_step(x, z, 7, z, sched1000)
    assert np.array_equal(out, math.sqrt(sched1000.alpha[7]) * x)


def test_first_step_nearly_identity(sched1000, rng):
    x, R, eps = rng.standard_normal((3, 8))
    out = D.q_sample_step(x, R, 1, eps, sched1000)
    bound = 1e-4 * (np.abs(x) + np.abs(R)) + 1e-2 * np.abs(eps) + 1e-15
    # sqrt(1 - alpha_1) = 1e-2 multiplies the noise; the other deviations are O(beta_1)
    assert np.all(np.abs(out - x) <= bound)


def test_closed_form_at_half(sched1000):
    s = sched1000
    # pick the step nearest sqrt(alpha_bar) = 1/2 and evaluate with exact coefficient
    sab = math.sqrt(s.alpha_bar[s.t_prime])
    out = D.q_sample_closed(np.array([2.0]), np.array([1.0]), s.t_prime, np.zeros(1), s).x_t
    assert out[0] == pytest.approx(2 * sab + (1 - sab), abs=1e-15)
    assert out[0] == pytest.approx(1.5, abs=2 * acceleration_bias(s))


def test_zero_residual_reduces_to_vanilla(sched1000, rng):
    s = sched1000
    x0, eps = rng.standard_normal((2, 6))
    z = np.zeros(6)
    fs = D.q_sample_closed(x0, z, 50, eps, s)
    assert np.array_equal(fs.x_t, math.sqrt(s.alpha_bar[50]) * x0 + math.sqrt(s.one_minus_alpha_bar[50]) * eps)
    assert np.array_equal(fs.resnoise, eps)
    assert ulp_close(D.q_sample_simplified(x0, x0, 50, eps, s), fs.x_t, operand_scale(x0, eps))[0]


def test_resnoise_coefficient_at_first_step(sched1000):
    # 50-digit mpmath value of (1 - sqrt(0.9999)) sqrt(1e-4) / 1e-4
    assert D.resnoise_coef(1, sched1000) == pytest.approx(0.0050001250062503906523, rel=1e-10)
    k = D.resnoise_coef(np.arange(1, 1001), sched1000)
    assert np.all(np.isfinite(k)) and np.all(k > 0)


def test_simplified_coefficient_is_bias(sched1000):
    s = sched1000
    x0 = np.array([1.0])
    out = D.q_sample_simplified(x0, np.zeros(1), s.t_prime, np.zeros(1), s)
    assert abs(out[0]) == pytest.approx(acceleration_bias(s), rel=1e-12)


def test_hat_sample_cases(sched1000, rng):
    s = sched1000
    x_hat = rng.standard_normal(5)
    out = D.q_sample_hat(x_hat, 100, np.zeros(5), s)
    assert np.array_equal(out, math.sqrt(s.alpha_bar[100]) * x_hat)
    eps = rng.standard_normal(5)
    assert np.array_equal(D.q_sample_hat(np.zeros(5), 100, eps, s), math.sqrt(s.one_minus_alpha_bar[100]) * eps)


def test_hat_close_to_resnoise_sample_at_t_prime(sched1000, rng):
    s = sched1000
    x0, x_hat, eps = rng.standard_normal((3, 16))
    R = D.residual(x_hat, x0)
    diff = D.q_sample_closed(x0, R, s.t_prime, eps, s).x_t - D.q_sample_hat(x_hat, s.t_prime, eps, s)
    # the difference is (2 sqrt(ab) - 1)(x0 - x_hat)
    assert np.linalg.norm(diff) <= acceleration_bias(s) * np.linalg.norm(x0 - x_hat) * (1 + 1e-9) + 1e-14


def test_posterior_mean_zero_residual_is_ddpm(sched1000, rng):
    s = sched1000
    t = 123
    x_t, x0 = rng.standard_normal((2, 4))
    ab, abp = s.alpha_bar[t], s.alpha_bar[t - 1]
    ddpm = math.sqrt(abp) * s.beta[t] / (1 - ab) * x0 + math.sqrt(s.alpha[t]) * (1 - abp) / (1 - ab) * x_t
    np.testing.assert_allclose(D.posterior_mean(x_t, x0, np.zeros(4), t, s), ddpm, rtol=1e-14, atol=1e-15)


def test_mu_from_resnoise_cases(sched1000, rng):
    s = sched1000
    x_t = rng.standard_normal(4)
    assert np.array_equal(D.mu_from_resnoise(x_t, np.zeros(4), 9, s), x_t / math.sqrt(s.alpha[9]))
    eps = rng.standard_normal(4)
    vanilla = (x_t - (1 - s.alpha[9]) / math.sqrt(s.one_minus_alpha_bar[9]) * eps) / math.sqrt(s.alpha[9])
    np.testing.assert_allclose(D.mu_from_resnoise(x_t, eps, 9, s), vanilla, rtol=1e-15, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(vec, vec, vec, st.integers(1, 1000))
def test_two_forms_agree(x0, x_hat, eps, t):
    sched1000 = S1000
    s = sched1000
    a = D.q_sample_closed(x0, D.residual(x_hat, x0), t, eps, s).x_t
    b = D.q_sample_simplified(x0, x_hat, t, eps, s)
    ok, _ = ulp_close(a, b, operand_scale(x0, x_hat, eps, x_hat - x0, a))
    assert ok


@settings(max_examples=200, deadline=None)
@given(vec, vec, vec, st.integers(2, 1000))
def test_exchange_identity(x0, R, eps, t):
    sched1000 = S1000
    s = sched1000
    x_t = D.q_sample_closed(x0, R, t, eps, s).x_t
    a = D.posterior_mean(x_t, x0, R, t, s)
    b = D.mu_from_resnoise(x_t, D.resnoise_target(eps, R, t, s), t, s)
    ok, worst = ulp_close(a, b, operand_scale(x0, R, eps, x_t, a, x0 - R, x_t - R))
    assert ok, worst


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 1000))
def test_coefficients_sum_to_one(t):
    sched1000 = S1000
    s = sched1000
    one = np.ones(1)
    zero = np.zeros(1)
    c_x0 = D.q_sample_closed(one, zero, t, zero, s).x_t[0]
    c_R = D.q_sample_closed(zero, one, t, zero, s).x_t[0]
    assert c_R == 1 - math.sqrt(s.alpha_bar[t])
    assert c_x0 + c_R == pytest.approx(1.0, abs=1e-15)


def test_batched_steps_match_scalar(sched1000, rng):
    s = sched1000
    x0, R, eps = rng.standard_normal((3, 4, 2, 2))
    t = np.array([1, 10, 100, 368])
    fs = D.q_sample_closed(x0, R, t, eps, s)
    for i, ti in enumerate(t):
        one = D.q_sample_closed(x0[i], R[i], int(ti), eps[i], s)
        assert np.array_equal(fs.x_t[i], one.x_t)
        assert np.array_equal(fs.resnoise[i], one.resnoise)
    mu = D.mu_from_resnoise(fs.x_t, fs.resnoise, t, s)
    for i, ti in enumerate(t):
        assert np.array_equal(mu[i], D.mu_from_resnoise(fs.x_t[i], fs.resnoise[i], int(ti), s))


def test_markov_consistency_small(sched1000):
    s = sched1000
    rng = np.random.default_rng(2)
    n = 20000
    x0, R = np.full(n, 0.7), np.full(n, -0.4)
    for t in (1, 50):
        x = iterate_forward(x0, R, t, s, rng)
        sab = math.sqrt(s.alpha_bar[t])
        mean, var = sab * 0.7 + (1 - sab) * -0.4, 1 - s.alpha_bar[t]
        se = math.sqrt(var / n)
        assert abs(x.mean() - mean) < 5 * se
        assert abs(x.var(ddof=1) - var) < 5 * var * math.sqrt(2 / (n - 1))


@pytest.mark.parametrize("t", [2, 17, 150, 368, 900])
def test_posterior_matches_quadrature(t, sched1000):
    s = sched1000
    rng = np.random.default_rng(t)
    x0, R, eps = rng.uniform(-1, 1, 3)
    x_t = float(D.q_sample_closed(np.array([x0]), np.array([R]), t, np.array([eps]), s).x_t[0])
    mean, var = posterior_by_quadrature(x_t, x0, R, t, s)
    mu = D.posterior_mean(np.array([x_t]), np.array([x0]), np.array([R]), t, s)[0]
    assert abs(mean - mu) <= 1e-6
    assert abs(var - s.tilde_beta[t]) <= 1e-6


def test_true_resnoise_recovers_target(sched1000, rng):
    s = sched1000
    x0, R, eps = rng.standard_normal((3, 6))
    fs = D.q_sample_closed(x0, R, 200, eps, s)
    np.testing.assert_allclose(true_resnoise(fs.x_t, x0, R, 200, s), fs.resnoise, rtol=1e-12, atol=1e-12)
