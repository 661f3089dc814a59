"""Fully-connected resnoise predictor with handwritten backpropagation.

The network body sees ``concat(c_in * flatten(x_t), flatten(I0), embed_time(t))``
and has three SiLU hidden layers.  Two output heads are available:

``plain``
    the body output is the resnoise prediction.
``blend``
    ``eps = skip * a_t * x_t - b_t * body`` with
    ``a_t = c/(c^2 + s^2)``, ``b_t = s/sqrt(c^2 + s^2)``, ``c_in = 1/sqrt(c^2 + s^2)``,
    where ``c = sqrt(1 - alpha_bar_t)`` and ``s`` is ``sigma_data``.  For noisy
    steps the body effectively predicts a clean image; for nearly clean steps it
    predicts the noise.  ``skip`` is a learned scalar initialised to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .numerics import ShapeError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TimeEmbedding:
    dim: int = 32
    base_period: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ConfigError(f"time-embedding dimension must be even and >= 2, got {self.dim}")

    @property
    def periods(self) -> np.ndarray:
        half = self.dim // 2
        if half == 1:
            return np.ones(1)
        return self.base_period ** (np.arange(half) / (half - 1))


def embed_time(t, emb: TimeEmbedding) -> np.ndarray:
    """Sinusoidal embedding; shape ``(dim,)`` for scalar t, ``(B, dim)`` for a step array."""
    tt = np.asarray(t, dtype=np.float64)
    angles = tt[..., None] / emb.periods
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def silu(z):
    return z * expit(z)


def silu_grad(z):
    sig = expit(z)
    return sig * (1.0 + z * (1.0 - sig))


@dataclass
class DenoiserParams:
    """Layer weights ``(W [out x in], b [out])``, the skip gain, and the shapes they assume.

    ``noise_levels`` (``sqrt(1 - alpha_bar_t)`` indexed by t) is a fixed table
    used by the blend head, not a trainable parameter.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    x_size: int
    cond_size: int
    widths: tuple[int, ...]
    emb: TimeEmbedding = field(default_factory=TimeEmbedding)
    skip: np.ndarray = field(default_factory=lambda: np.ones(1))
    head: str = "plain"
    sigma_data: float = 0.1
    noise_levels: np.ndarray | None = field(default=None, repr=False)

    @property
    def in_size(self) -> int:
        return self.x_size + self.cond_size + self.emb.dim

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in self.layers:
            out += [W, b]
        return out + [self.skip]

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_arrays(self, arrays: list[np.ndarray]) -> "DenoiserParams":
        layers = [(arrays[2 * k], arrays[2 * k + 1]) for k in range(len(self.layers))]
        return replace(self, layers=layers, skip=arrays[-1])

    def with_flat(self, v: np.ndarray) -> "DenoiserParams":
        arrays, i = [], 0
        for a in self.arrays():
            arrays.append(np.array(v[i:i + a.size]).reshape(a.shape))
            i += a.size
        return self.with_arrays(arrays)

    def copy(self) -> "DenoiserParams":
        return self.with_arrays([a.copy() for a in self.arrays()])


def param_count(x_size: int, cond_size: int, widths, emb_dim: int) -> int:
    dims = [x_size + cond_size + emb_dim, *widths, x_size]
    return sum((a + 1) * b for a, b in zip(dims[:-1], dims[1:])) + 1


def init_params(x_size: int, cond_size: int, widths=(256, 256, 256), emb_dim: int = 32,
                rng: np.random.Generator | None = None, head: str = "plain",
                sigma_data: float = 0.1, noise_levels: np.ndarray | None = None,
                out_scale: float = 0.1) -> DenoiserParams:
    """Lecun-normal layers, zero biases; the output layer is shrunk by ``out_scale``."""
    if head not in ("plain", "blend"):
        raise ConfigError(f"unknown denoiser head {head!r}")
    if head == "blend" and noise_levels is None:
        raise ConfigError("blend head needs the schedule's noise levels")
    rng = rng if rng is not None else np.random.default_rng(0)
    emb = TimeEmbedding(emb_dim)
    dims = [x_size + cond_size + emb.dim, *widths, x_size]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        if k == len(dims) - 2:
            W *= out_scale
        layers.append((W, np.zeros(fan_out)))
    levels = None if noise_levels is None else np.asarray(noise_levels, dtype=np.float64)
    return DenoiserParams(layers, x_size, cond_size, tuple(widths), emb, np.ones(1),
                          head, float(sigma_data), levels)


def _head_coefs(params: DenoiserParams, t: np.ndarray):
    """(a_t, b_t, c_in) as column vectors over the batch."""
    if params.head == "plain":
        one = np.ones((len(t), 1))
        return 0.0 * one, -one, one
    c = params.noise_levels[t][:, None]
    s2 = params.sigma_data ** 2
    n2 = c * c + s2
    return c / n2, params.sigma_data / np.sqrt(n2), 1.0 / np.sqrt(n2)


def _prepare(params: DenoiserParams, x_t, I0, t):
    x_t = np.asarray(x_t, dtype=np.float64)
    I0 = np.asarray(I0, dtype=np.float64)
    batched = np.ndim(t) > 0
    B = len(t) if batched else 1
    xf = x_t.reshape(B, -1)
    cf = I0.reshape(B, -1)
    if xf.shape[1] != params.x_size or cf.shape[1] != params.cond_size:
        raise ShapeError(
            f"denoiser expects x size {params.x_size} and condition size {params.cond_size}, "
            f"got {xf.shape[1]} and {cf.shape[1]}"
        )
    tt = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.int64)), (B,))
    a, b, c_in = _head_coefs(params, tt)
    h = np.concatenate([c_in * xf, cf, embed_time(tt, params.emb)], axis=1)
    return h, xf, a, b, x_t.shape


def _forward(params: DenoiserParams, h: np.ndarray):
    pre, acts = [], [h]
    last = len(params.layers) - 1
    for k, (W, b) in enumerate(params.layers):
        z = h @ W.T + b
        if k < last:
            pre.append(z)
            h = silu(z)
            acts.append(h)
        else:
            h = z
    return h, pre, acts


def predict_resnoise(params: DenoiserParams, x_t, I0, t) -> np.ndarray:
    """Predicted resnoise, same shape as ``x_t``.

    ``t`` is an int for a single sample or a ``(B,)`` step array with batch-first
    ``x_t`` and ``I0``.
    """
    h, xf, a, b, shape = _prepare(params, x_t, I0, t)
    body, _, _ = _forward(params, h)
    return (params.skip[0] * a * xf - b * body).reshape(shape)


def loss_and_grad(params: DenoiserParams, x_t, I0, t, target) -> tuple[float, DenoiserParams]:
    """Mean squared error against ``target`` and its exact gradient."""
    h, xf, a, b, shape = _prepare(params, x_t, I0, t)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != shape:
        raise ShapeError(f"target shape {target.shape} != output shape {shape}")
    body, pre, acts = _forward(params, h)
    out = params.skip[0] * a * xf - b * body
    diff = out - target.reshape(out.shape)
    loss = float(np.mean(diff * diff))

    d_out = (2.0 / diff.size) * diff
    d_skip = np.array([np.sum(d_out * a * xf)])
    delta = -b * d_out
    grads = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k > 0:
            delta = (delta @ W) * silu_grad(pre[k - 1])
    return loss, replace(params, layers=grads, skip=d_skip)
