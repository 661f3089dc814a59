"""Independent numerical checks on the closed-form diffusion quantities.

Nothing here is used by training or sampling.  Each oracle reaches its answer
by a different route than the production code: brute-force iteration,
quadrature over the Gaussian factors, extended precision, or finite
differences.
"""

from __future__ import annotations

import math
import warnings

import mpmath
import numpy as np
from scipy import integrate, optimize

from . import diffusion as D
from .schedule import Schedule


def t_prime_extended(T: int, dps: int = 50) -> tuple[int, float]:
    """(t_prime, acceleration bias) from a high-precision cumulative product."""
    with mpmath.workdps(dps):
        lo, hi, half = mpmath.mpf("1e-4"), mpmath.mpf("2e-2"), mpmath.mpf("0.5")
        ab = mpmath.mpf(1)
        best_t, best_gap, best_root = 0, None, None
        for t in range(1, T + 1):
            ab *= 1 - (lo * (T - t) + hi * (t - 1)) / (T - 1)
            root = mpmath.sqrt(ab)
            gap = abs(root - half)
            if best_gap is None or gap < best_gap:
                best_t, best_gap, best_root = t, gap, root
        return best_t, float(abs(2 * best_root - 1))


def iterate_forward(x0: np.ndarray, R: np.ndarray, t: int, s: Schedule,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw x_t by t one-step transitions with fresh noise at each step."""
    x = np.array(x0, dtype=np.float64)
    for k in range(1, t + 1):
        x = D.q_sample_step(x, R, k, rng.standard_normal(x.shape), s)
    return x


def _log_normal(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * math.log(2 * math.pi * var)


def posterior_by_quadrature(x_t: float, x0: float, R: float, t: int, s: Schedule) -> tuple[float, float]:
    """Mean and variance of q(x_{t-1} | x_t, x0) from Bayes' rule, integrated numerically.

    The integrand is the product of the one-step likelihood and the t-1 step
    marginal; neither the posterior mean formula nor tilde_beta is used.
    """
    sa, a = math.sqrt(s.alpha[t]), s.alpha[t]
    sab_prev, ab_prev = math.sqrt(s.alpha_bar[t - 1]), s.alpha_bar[t - 1]

    def logp(y):
        return (_log_normal(x_t, sa * y + (1 - sa) * R, 1 - a)
                + _log_normal(y, sab_prev * x0 + (1 - sab_prev) * R, 1 - ab_prev))

    mode = optimize.minimize_scalar(lambda y: -logp(y), bracket=(x0 - 1, x_t + 1), tol=1e-14).x
    # curvature by central differences sets the integration window
    h = 1e-4
    curv = -(logp(mode + h) - 2 * logp(mode) + logp(mode - h)) / h**2
    width = 1.0 / math.sqrt(max(curv, 1e-300))
    lo, hi = mode - 40 * width, mode + 40 * width
    ref = logp(mode)

    def moment(k):
        # quad flags roundoff once it reaches the double-precision floor; that is expected here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(lambda y: (y - mode) ** k * math.exp(logp(y) - ref), lo, hi,
                                    points=[mode], epsabs=0, epsrel=1e-11, limit=200)
        return val

    z = moment(0)
    m1 = moment(1) / z
    m2 = moment(2) / z
    return mode + m1, m2 - m1 * m1


def true_resnoise(x_t, x0, R, t, s: Schedule) -> np.ndarray:
    """Resnoise implied by a known x0: solve the closed-form sample for its noise."""
    sab = math.sqrt(s.alpha_bar[t])
    eps = (x_t - sab * x0 - (1 - sab) * R) / math.sqrt(s.one_minus_alpha_bar[t])
    return D.resnoise_target(eps, R, t, s)


def oracle_reverse_pass(x_start, x0, R, s: Schedule) -> list[np.ndarray]:
    """Noise-free reverse chain from t_prime driven by the true resnoise.

    Returns the states ``[x_{t'}, x_{t'-1}, ..., x_0]``.
    """
    states = [np.array(x_start, dtype=np.float64)]
    x = states[0]
    for t in range(s.t_prime, 0, -1):
        x = D.mu_from_resnoise(x, true_resnoise(x, x0, R, t, s), t, s)
        states.append(x)
    return states


def finite_difference_grad(f, v: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at every coordinate of ``v``."""
    g = np.empty_like(v)
    for i in range(v.size):
        e = v.copy()
        e[i] += h
        fp = f(e)
        e[i] -= 2 * h
        fm = f(e)
        g[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst per-coordinate |a - b| / max(|a|, |b|, floor)."""
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def gradient_check(f, v: np.ndarray, analytic: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of ``analytic`` against central differences of ``f`` at ``v``.

    Difference quotients carry roundoff of order eps*|f|/h (about 1e-11 |f| at
    h = 1e-5), so components below 1e-6 max(1, |f|) are judged on absolute
    error instead of relative error.
    """
    fd = finite_difference_grad(f, v, h)
    return max_relative_error(analytic, fd, 1e-6 * max(1.0, abs(f(v))))
