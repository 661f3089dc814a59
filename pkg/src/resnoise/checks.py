"""Self-checks of the forward/reverse algebra against independent oracles.

Shared by the ``oracle-tests`` command and the acceptance suite.  Each check
returns a ``CheckResult``; none of them raise on failure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffusion as D
from . import oracles
from .numerics import make_rng, operand_scale, ulp_ratio
from .sampler import init_x_tprime
from .schedule import Schedule, acceleration_bias, build_schedule

MAX_ULP = 4.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""
    seconds: float = 0.0


def _instances(rng, n: int, s: Schedule, lo: int = 1):
    x0 = rng.uniform(-1, 1, n)
    R = rng.uniform(-1, 1, n)
    eps = rng.standard_normal(n)
    t = rng.integers(lo, s.T + 1, n)
    return x0, R, eps, t


def check_t_prime(T: int = 1000) -> CheckResult:
    s = build_schedule(T)
    tp, bias = oracles.t_prime_extended(T)
    rel = abs(acceleration_bias(s) - bias) / bias if bias else abs(acceleration_bias(s))
    ok = tp == s.t_prime and rel <= 1e-9
    return CheckResult(f"t' matches extended precision (T={T})", ok, rel, 1e-9,
                       f"t'={s.t_prime} oracle={tp}")


def check_closed_vs_simplified(s: Schedule, n: int = 1000, seed: int = 0) -> CheckResult:
    x0, R, eps, t = _instances(make_rng(seed), n, s)
    a = D.q_sample_closed(x0, R, t, eps, s).x_t
    b = D.q_sample_simplified(x0, x0 + R, t, eps, s)
    worst = ulp_ratio(a, b, operand_scale(x0, x0 + R, eps, a))
    return CheckResult("closed form == simplified form", worst <= MAX_ULP, worst, MAX_ULP, "ulp")


def check_exchange(s: Schedule, n: int = 1000, seed: int = 1) -> CheckResult:
    x0, R, eps, t = _instances(make_rng(seed), n, s, lo=2)
    fs = D.q_sample_closed(x0, R, t, eps, s)
    a = D.mu_from_resnoise(fs.x_t, fs.resnoise, t, s)
    b = D.posterior_mean(fs.x_t, x0, R, t, s)
    worst = ulp_ratio(a, b, operand_scale(x0, R, eps, fs.x_t, a, x0 - R, fs.x_t - R))
    return CheckResult("reverse mean from resnoise == posterior mean", worst <= MAX_ULP, worst, MAX_ULP, "ulp")


def check_zero_residual(s: Schedule, n: int = 1000, seed: int = 2) -> CheckResult:
    """With R = 0 every operation collapses to its plain DDPM form."""
    x0, _, eps, t = _instances(make_rng(seed), n, s, lo=2)
    z = np.zeros_like(x0)
    sab = np.sqrt(s.alpha_bar[t])
    comp = s.one_minus_alpha_bar[t]
    worst = 0.0
    x_t = D.q_sample_closed(x0, z, t, eps, s).x_t
    ref = sab * x0 + np.sqrt(comp) * eps
    worst = max(worst, ulp_ratio(x_t, ref, operand_scale(x0, eps, ref)))
    worst = max(worst, ulp_ratio(D.resnoise_target(eps, z, t, s), eps, np.abs(eps)))
    prev = x0 * 0.5
    step = D.q_sample_step(prev, z, t, eps, s)
    ref = np.sqrt(s.alpha[t]) * prev + np.sqrt(s.beta[t]) * eps
    worst = max(worst, ulp_ratio(step, ref, operand_scale(prev, eps, ref)))
    mu = D.mu_from_resnoise(x_t, eps, t, s)
    ref = (x_t - s.beta[t] / np.sqrt(comp) * eps) / np.sqrt(s.alpha[t])
    worst = max(worst, ulp_ratio(mu, ref, operand_scale(x_t, eps, ref)))
    pm = D.posterior_mean(x_t, x0, z, t, s)
    ref = (np.sqrt(s.alpha_bar[t - 1]) * s.beta[t] / comp * x0
           + np.sqrt(s.alpha[t]) * s.one_minus_alpha_bar[t - 1] / comp * x_t)
    worst = max(worst, ulp_ratio(pm, ref, operand_scale(x0, x_t, ref)))
    return CheckResult("zero residual reduces to plain DDPM", worst <= MAX_ULP, worst, MAX_ULP, "ulp")


def check_init_offset(s: Schedule, n: int = 1000, seed: int = 3) -> CheckResult:
    """Starting point minus the true x_{t'} is exactly -(2 sqrt(abar) - 1) x0."""
    x0, R, eps, _ = _instances(make_rng(seed), n, s)
    x_hat0 = x0 + R
    t = s.t_prime
    true = D.q_sample_closed(x0, R, t, eps, s).x_t
    start = init_x_tprime(x_hat0, eps, s)
    gap = true - start
    ref = (2 * np.sqrt(s.alpha_bar[t]) - 1) * x0
    worst = ulp_ratio(gap, ref, operand_scale(x0, x_hat0, eps, true))
    return CheckResult("start point offset == (2 sqrt(abar') - 1) x0", worst <= MAX_ULP, worst, MAX_ULP, "ulp")


def check_markov(s: Schedule, n: int = 100_000, seed: int = 4, n_se: float = 5.0,
                 x0: float = 0.7, R: float = -0.4) -> list[CheckResult]:
    """Iterated one-step samples match the closed-form mean and variance."""
    rng = make_rng(seed)
    out = []
    for t in sorted({1, max(1, s.t_prime // 2), s.t_prime}):
        xs = oracles.iterate_forward(np.full(n, x0), np.full(n, R), t, s, rng)
        sab = np.sqrt(s.alpha_bar[t])
        mean, var = sab * x0 + (1 - sab) * R, s.one_minus_alpha_bar[t]
        z_mean = abs(xs.mean() - mean) / np.sqrt(var / n)
        z_var = abs(xs.var(ddof=1) - var) / (var * np.sqrt(2.0 / (n - 1)))
        worst = max(z_mean, z_var)
        out.append(CheckResult(f"iterated forward moments at t={t}", worst <= n_se, worst, n_se,
                               "standard errors"))
    return out


def check_posterior_quadrature(s: Schedule, steps=(2, 17, 150, 368, 900), seed: int = 5,
                               tol: float = 1e-6) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for t in steps:
        if t > s.T:
            continue
        x0, R = rng.uniform(-1, 1, 2)
        x_t = D.q_sample_closed(np.array([x0]), np.array([R]), t, rng.standard_normal(1), s).x_t[0]
        m, v = oracles.posterior_by_quadrature(x_t, x0, R, t, s)
        pm = D.posterior_mean(np.array([x_t]), np.array([x0]), np.array([R]), t, s)[0]
        worst = max(worst, abs(m - pm), abs(v - s.tilde_beta[t]))
    return CheckResult("posterior mean and variance by quadrature", worst <= tol, worst, tol, "abs error")


def oracle_denoise(s: Schedule, shape, seed: int = 6) -> tuple[float, float]:
    """Noise-free reverse pass with the true resnoise.

    Returns (final error, start-point bias) as max-abs values; the bias is how
    far the start point sits from a true forward sample.
    """
    rng = make_rng(seed)
    x0 = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    x_hat0 = np.clip(0.8 * x0 + 0.1 + 0.1 * rng.standard_normal(shape), -1, 1)
    R = x_hat0 - x0
    eps = rng.standard_normal(shape)
    start = init_x_tprime(x_hat0, eps, s)
    bias = float(np.max(np.abs(start - D.q_sample_closed(x0, R, s.t_prime, eps, s).x_t)))
    final = oracles.oracle_reverse_pass(start, x0, R, s)[-1]
    return float(np.max(np.abs(final - x0))), bias


def check_oracle_denoise(s: Schedule, tol: float = 1e-6) -> list[CheckResult]:
    out = []
    for shape in ((1,), (16, 16)):
        err, bias = oracle_denoise(s, shape)
        out.append(CheckResult(f"oracle reverse pass recovers x0 {shape}", err <= tol, err, tol,
                               f"start bias {bias:.3g}"))
    return out


def run_all(T: int = 1000, markov_samples: int = 100_000) -> list[CheckResult]:
    s = build_schedule(T)
    jobs = [
        lambda: [check_t_prime(T)],
        lambda: [check_closed_vs_simplified(s)],
        lambda: [check_exchange(s)],
        lambda: [check_zero_residual(s)],
        lambda: [check_init_offset(s)],
        lambda: check_markov(s, markov_samples),
        lambda: [check_posterior_quadrature(s)],
        lambda: check_oracle_denoise(s),
    ]
    results = []
    for job in jobs:
        t0 = time.perf_counter()
        rs = job()
        dt = time.perf_counter() - t0
        results.extend(CheckResult(r.name, r.passed, r.value, r.limit, r.detail, dt / len(rs)) for r in rs)
    return results
