"""Accelerated reverse process starting at t' from the likelihood output.

Draw order: the initialization noise, then one z per step for t = t'..2.
The t=1 step returns the mean with no noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffusion as D
from .denoiser import DenoiserParams, predict_resnoise
from .schedule import Schedule

Predictor = Callable[[np.ndarray, np.ndarray, "int | np.ndarray"], np.ndarray]


@dataclass
class SampleTrace:
    x_init: np.ndarray
    x0: np.ndarray | None = None
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    # per step: (t, rms of x_t, rms of predicted resnoise)
    norms: list[tuple[int, float, float]] = field(default_factory=list)
    n_evals: int = 0


def init_x_tprime(x_hat0: np.ndarray, eps: np.ndarray, s: Schedule) -> np.ndarray:
    """Start of the reverse chain: the x0 term of x_{t'} is dropped."""
    t = s.t_prime
    sab = np.sqrt(s.alpha_bar[t])
    return (1.0 - sab) * x_hat0 + np.sqrt(s.one_minus_alpha_bar[t]) * eps


def _as_predictor(model) -> Predictor:
    if isinstance(model, DenoiserParams):
        return lambda x_t, I0, t: predict_resnoise(model, x_t, I0, t)
    return model


def _steps_like(x: np.ndarray, t: int, batched: bool):
    return np.full(len(x), t) if batched else t


def reverse_step(x_t, I0, t: int, model, z, s: Schedule, batched: bool = False) -> np.ndarray:
    """x_{t-1} from x_t using the predicted resnoise; ``z=None`` means no noise."""
    t = s.check_step(t, 2)
    if t > s.t_prime:
        raise ValueError(f"reverse step t={t} above t'={s.t_prime}")
    tt = _steps_like(x_t, t, batched)
    mean = D.mu_from_resnoise(x_t, _as_predictor(model)(x_t, I0, tt), tt, s)
    if z is None:
        return mean
    return mean + np.sqrt(s.tilde_beta[t]) * z


def sample(I0, x_hat0, model, s: Schedule, rng: np.random.Generator | None,
           stride: int = 0, batched: bool | None = None, noise: bool = True) -> SampleTrace:
    """Run the reverse chain from t' to 0.

    ``model`` is a ``DenoiserParams`` or any callable ``(x_t, I0, t) -> resnoise``.
    ``x_hat0`` is the likelihood output for ``I0``.  With ``batched`` (inferred
    when ``model`` is ``DenoiserParams``) the leading axis indexes independent
    chains.  ``noise=False`` replaces every draw with zeros.  Snapshots are
    kept every ``stride`` steps when ``stride > 0``.
    """
    x_hat0 = np.asarray(x_hat0, dtype=np.float64)
    if batched is None:
        batched = isinstance(model, DenoiserParams) and x_hat0.size != model.x_size
    predict = _as_predictor(model)

    def draw():
        if not noise:
            return np.zeros_like(x_hat0)
        return rng.standard_normal(x_hat0.shape)

    x = init_x_tprime(x_hat0, draw(), s)
    trace = SampleTrace(x_init=x.copy())
    if stride > 0:
        trace.snapshots.append((s.t_prime, x.copy()))
    for t in range(s.t_prime, 0, -1):
        tt = _steps_like(x, t, batched)
        eps_hat = predict(x, I0, tt)
        trace.n_evals += 1
        trace.norms.append((t, float(np.sqrt(np.mean(x * x))), float(np.sqrt(np.mean(eps_hat ** 2)))))
        x = D.mu_from_resnoise(x, eps_hat, tt, s)
        if t > 1:
            x = x + np.sqrt(s.tilde_beta[t]) * draw()
        if stride > 0 and ((t - 1) % stride == 0 or t == 1):
            trace.snapshots.append((t - 1, x.copy()))
    trace.x0 = x
    return trace
