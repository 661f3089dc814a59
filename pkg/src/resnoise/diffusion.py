"""Closed-form quantities of the residual-augmented forward process.

Every function is pure.  ``t`` may be a Python int or an integer array of
shape ``(B,)``; in the array case the leading axis of each tensor is the
batch axis and coefficients broadcast per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import check_same_shape
from .schedule import Schedule


@dataclass(frozen=True)
class ForwardSample:
    x_t: np.ndarray
    t: int | np.ndarray
    eps: np.ndarray
    resnoise: np.ndarray


def _steps(t, s: Schedule, lo: int = 1):
    if np.ndim(t) == 0:
        return s.check_step(t, lo)
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise ValueError("step array must be integer typed")
    if t.size and (t.min() < lo or t.max() > s.T):
        raise ValueError(f"steps outside [{lo}, {s.T}]")
    return t


def _at(arr: np.ndarray, t, like: np.ndarray):
    """Coefficient ``arr[t]`` shaped to broadcast against ``like``."""
    if np.ndim(t) == 0:
        return arr[t]
    return arr[t].reshape((-1,) + (1,) * (np.ndim(like) - 1))


def residual(x_hat0: np.ndarray, x0: np.ndarray) -> np.ndarray:
    check_same_shape(x_hat0, x0)
    return x_hat0 - x0


def q_sample_step(x_prev, R, t, eps, s: Schedule) -> np.ndarray:
    """One forward transition x_{t-1} -> x_t with the residual pulled in."""
    check_same_shape(x_prev, R, eps)
    t = _steps(t, s)
    sa = np.sqrt(_at(s.alpha, t, x_prev))
    sb = np.sqrt(_at(s.beta, t, x_prev))
    return sa * x_prev + (1.0 - sa) * R + sb * eps


def resnoise_coef(t, s: Schedule):
    """(1 - sqrt(alpha_t)) sqrt(1 - alpha_bar_t) / beta_t."""
    sa = np.sqrt(s.alpha[t])
    return (1.0 - sa) * np.sqrt(s.one_minus_alpha_bar[t]) / s.beta[t]


def resnoise_target(eps, R, t, s: Schedule) -> np.ndarray:
    check_same_shape(eps, R)
    t = _steps(t, s)
    k = resnoise_coef(t, s)
    if np.ndim(t):
        k = k.reshape((-1,) + (1,) * (np.ndim(eps) - 1))
    return eps + k * R


def q_sample_closed(x0, R, t, eps, s: Schedule) -> ForwardSample:
    """Sample x_t directly from x0, with the matching resnoise target."""
    check_same_shape(x0, R, eps)
    t = _steps(t, s)
    sab = np.sqrt(_at(s.alpha_bar, t, x0))
    x_t = sab * x0 + (1.0 - sab) * R + np.sqrt(_at(s.one_minus_alpha_bar, t, x0)) * eps
    return ForwardSample(x_t, t, eps, resnoise_target(eps, R, t, s))


def q_sample_simplified(x0, x_hat0, t, eps, s: Schedule) -> np.ndarray:
    """Same x_t written in terms of x0 and x_hat0 instead of the residual."""
    check_same_shape(x0, x_hat0, eps)
    t = _steps(t, s)
    sab = np.sqrt(_at(s.alpha_bar, t, x0))
    return (2.0 * sab - 1.0) * x0 + (1.0 - sab) * x_hat0 + np.sqrt(_at(s.one_minus_alpha_bar, t, x0)) * eps


def q_sample_hat(x_hat0, t, eps, s: Schedule) -> np.ndarray:
    """Plain DDPM noising of x_hat0 with the given noise."""
    check_same_shape(x_hat0, eps)
    t = _steps(t, s)
    return (np.sqrt(_at(s.alpha_bar, t, x_hat0)) * x_hat0
            + np.sqrt(_at(s.one_minus_alpha_bar, t, x_hat0)) * eps)


def posterior_mean(x_t, x0, R, t, s: Schedule) -> np.ndarray:
    """Mean of q(x_{t-1} | x_t, x0) for t >= 2.  Test oracle; the sampler never calls it."""
    check_same_shape(x_t, x0, R)
    t = _steps(t, s, lo=2)
    comp = _at(s.one_minus_alpha_bar, t, x_t)
    comp_prev = _at(s.one_minus_alpha_bar, t - 1, x_t)
    ab_prev = _at(s.alpha_bar, t - 1, x_t)
    beta = _at(s.beta, t, x_t)
    alpha = _at(s.alpha, t, x_t)
    c0 = np.sqrt(ab_prev) * beta / comp
    ct = np.sqrt(alpha) * comp_prev / comp
    return c0 * (x0 - R) + ct * (x_t - R) + R


def posterior_variance(t, s: Schedule):
    return s.tilde_beta[_steps(t, s)]


def mu_from_resnoise(x_t, eps_resnoise, t, s: Schedule) -> np.ndarray:
    """Reverse-step mean given a (true or predicted) resnoise."""
    check_same_shape(x_t, eps_resnoise)
    t = _steps(t, s)
    alpha = _at(s.alpha, t, x_t)
    beta = _at(s.beta, t, x_t)
    comp = _at(s.one_minus_alpha_bar, t, x_t)
    return (x_t - beta / np.sqrt(comp) * eps_resnoise) / np.sqrt(alpha)
