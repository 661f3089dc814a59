"""Resnoise training loop.

Per iteration: pick a batch, draw t uniformly from {1..t'} (or {1..T}), draw
Gaussian noise, build x_t and the resnoise target in closed form from the
cached likelihood output, and take one optimizer step on the batch MSE.

Draw order per iteration (one generator, seeded from the config): batch
indices, steps, noise, then, when augmenting, rotations and mirror flags.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import diffusion as D
from .data import Dataset, DatasetSpec, dihedral
from .denoiser import ConfigError, DenoiserParams, init_params, loss_and_grad
from .e2e_stub import LikelihoodCache, StubSpec, stub_apply
from .numerics import make_rng
from .schedule import Schedule, build_schedule

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class TrainConfig:
    T: int = 1000
    batch_size: int = 64
    iterations: int = 20000
    learning_rate: float = 1e-3
    seed: int = 0
    stub: StubSpec = field(default_factory=StubSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    restrict_t_to_t_prime: bool = True
    optimizer: str = "sgd"
    weight_decay: float = 0.0
    lr_schedule: str = "constant"
    warmup: int = 0
    augment: str = "none"
    widths: tuple[int, ...] = (256, 256, 256)
    emb_dim: int = 32
    head: str = "plain"
    sigma_data: float = 0.1
    use_cache: bool = True

    def validate(self) -> None:
        if self.batch_size < 1 or self.iterations < 1:
            raise ConfigError("batch_size and iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.augment not in ("none", "dihedral", "dihedral+shift"):
            raise ConfigError(f"unknown augment {self.augment!r}")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("widths must be positive")
        self.stub.validate()
        self.dataset.validate()


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params: DenoiserParams, grad: DenoiserParams, lr: float | None = None) -> DenoiserParams:
        lr = self.lr if lr is None else lr
        new = [p - lr * (g + self.weight_decay * p) if p.ndim == 2 else p - lr * g
               for p, g in zip(params.arrays(), grad.arrays())]
        return params.with_arrays(new)


@numba.njit(cache=True)
def _adam_update(p, g, m, v, out, b1, b2, step, eps, decay):
    """Fused moment update and step; one pass over memory instead of a dozen."""
    pf, gf, mf, vf, of = p.ravel(), g.ravel(), m.ravel(), v.ravel(), out.ravel()
    for i in range(pf.size):
        gi = gf[i]
        mi = b1 * mf[i] + (1.0 - b1) * gi
        vi = b2 * vf[i] + (1.0 - b2) * gi * gi
        mf[i] = mi
        vf[i] = vi
        of[i] = pf[i] - decay * pf[i] - step * mi / (np.sqrt(vi) + eps)


class Adam:
    """Adam with decoupled weight decay on weight matrices only."""

    def __init__(self, lr: float, weight_decay: float = 0.0, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.weight_decay = lr, weight_decay
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = self.v = None
        self.k = 0

    def step(self, params: DenoiserParams, grad: DenoiserParams, lr: float | None = None) -> DenoiserParams:
        lr = self.lr if lr is None else lr
        ps, gs = params.arrays(), grad.arrays()
        if self.m is None:
            self.m = [np.zeros_like(p) for p in ps]
            self.v = [np.zeros_like(p) for p in ps]
        self.k += 1
        c1 = 1.0 - self.b1 ** self.k
        c2 = 1.0 - self.b2 ** self.k
        step = lr * np.sqrt(c2) / c1  # bias corrections folded into the step size
        eps = self.eps * np.sqrt(c2)
        new = []
        for m, v, p, g in zip(self.m, self.v, ps, gs):
            out = np.empty_like(p)
            decay = lr * self.weight_decay if p.ndim == 2 else 0.0
            _adam_update(np.ascontiguousarray(p), np.ascontiguousarray(g), m, v, out,
                         self.b1, self.b2, step, eps, decay)
            new.append(out)
        return params.with_arrays(new)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.learning_rate, cfg.weight_decay)
    return SGD(cfg.learning_rate, cfg.weight_decay)


def learning_rate_at(cfg: TrainConfig, it: int) -> float:
    lr = cfg.learning_rate
    if cfg.warmup > 0:
        lr *= min(1.0, (it + 1) / cfg.warmup)
    if cfg.lr_schedule == "cosine":
        lr *= 0.5 * (1.0 + np.cos(np.pi * it / cfg.iterations))
    return lr


@dataclass
class Batch:
    I0: np.ndarray
    x0: np.ndarray
    x_hat0: np.ndarray
    background: np.ndarray | None = None


@dataclass
class StepRecord:
    """What a training step drew, kept for inspection and tests."""

    t: np.ndarray
    eps: np.ndarray
    x_t: np.ndarray
    target: np.ndarray


def _shift(x: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Per-sample cyclic shift of the last two axes."""
    B, H, W = x.shape
    rows = (np.arange(H)[None, :] - dy[:, None]) % H
    cols = (np.arange(W)[None, :] - dx[:, None]) % W
    x = np.take_along_axis(x, rows[:, :, None], axis=1)
    return np.take_along_axis(x, cols[:, None, :], axis=2)


def _shift_ranges(fg: np.ndarray, axis: int):
    """Shifts along ``axis`` that keep every foreground pixel from wrapping."""
    occupied = fg.any(axis=axis)
    n = occupied.shape[1]
    first = np.argmax(occupied, axis=1)
    last = n - 1 - np.argmax(occupied[:, ::-1], axis=1)
    return -first, n - 1 - last


def augment_batch(batch: Batch, rng: np.random.Generator, shift: bool = False,
                  stub: StubSpec | None = None) -> Batch:
    """Random symmetry of the square per sample, optionally followed by a translation.

    The fixed background is removed before the transform and added back, so
    augmented inputs stay on the data distribution.  Without ``shift`` the
    cached likelihood output is transformed along with the mask, which is
    exact for stubs that commute with the symmetry (pointwise maps and
    symmetric blurs do).  Translations move the shape without letting it wrap
    around; the input noise moves with it and stays i.i.d.  They need ``stub``
    so the likelihood output can be recomputed on the moved mask.
    """
    B = len(batch.x0)
    ks = rng.integers(0, 4, B)
    flips = rng.integers(0, 2, B).astype(bool)
    bg = 0.0 if batch.background is None else batch.background
    I0 = np.empty_like(batch.I0)
    x0 = np.empty_like(batch.x0)
    xh = np.empty_like(batch.x_hat0)
    for k in range(4):
        for f in (False, True):
            sel = (ks == k) & (flips == f)
            if not sel.any():
                continue
            I0[sel] = dihedral(batch.I0[sel] - bg, k, f)
            x0[sel] = dihedral(batch.x0[sel], k, f)
            xh[sel] = dihedral(batch.x_hat0[sel], k, f)
    if shift:
        if stub is None:
            raise ValueError("translation augmentation needs the stub to recompute x_hat0")
        fg = x0 > 0
        lo_y, hi_y = _shift_ranges(fg, 2)
        lo_x, hi_x = _shift_ranges(fg, 1)
        dy = rng.integers(lo_y, hi_y + 1)
        dx = rng.integers(lo_x, hi_x + 1)
        I0 = _shift(I0, dy, dx)
        x0 = _shift(x0, dy, dx)
        xh = stub_apply(stub, I0, x0)
    return Batch(I0 + bg, x0, xh, batch.background)


def draw_steps(rng: np.random.Generator, n: int, s: Schedule, restrict: bool = True) -> np.ndarray:
    upper = s.t_prime if restrict else s.T
    return rng.integers(1, upper + 1, n)


def train_step(params: DenoiserParams, batch: Batch, s: Schedule, rng: np.random.Generator,
               optimizer=None, lr: float | None = None, restrict: bool = True,
               augment: str = "none", record: list | None = None,
               stub: StubSpec | None = None) -> tuple[float, DenoiserParams]:
    """One optimizer step on the mean batch resnoise MSE.

    ``augment`` is ``"none"``, ``"dihedral"`` or ``"dihedral+shift"`` (the last needs ``stub``).
    """
    if len(batch.x0) == 0:
        raise ValueError("empty batch")
    optimizer = optimizer if optimizer is not None else SGD(1e-3)
    t = draw_steps(rng, len(batch.x0), s, restrict)
    eps = rng.standard_normal(batch.x0.shape)
    if augment != "none":
        batch = augment_batch(batch, rng, shift=augment == "dihedral+shift", stub=stub)
    R = D.residual(batch.x_hat0, batch.x0)
    fs = D.q_sample_closed(batch.x0, R, t, eps, s)
    loss, grad = loss_and_grad(params, fs.x_t, batch.I0, t, fs.resnoise)
    if not np.isfinite(loss):
        raise TrainingDivergence(
            f"non-finite loss {loss}; steps {t.min()}..{t.max()}, "
            f"|x_t|max={np.abs(fs.x_t).max():.3g}, |target|max={np.abs(fs.resnoise).max():.3g}"
        )
    if record is not None:
        record.append(StepRecord(t, eps, fs.x_t, fs.resnoise))
    return loss, optimizer.step(params, grad, lr)


@dataclass
class TrainReport:
    losses: np.ndarray
    wall_time: float
    params: DenoiserParams
    schedule: Schedule
    checkpoint: Path | None = None
    t_min: int = 0
    t_max: int = 0


def build_params(cfg: TrainConfig, x_size: int, cond_size: int, s: Schedule) -> DenoiserParams:
    rng = make_rng(cfg.seed + 1)
    levels = np.sqrt(s.one_minus_alpha_bar)
    return init_params(x_size, cond_size, tuple(cfg.widths), cfg.emb_dim, rng, head=cfg.head,
                       sigma_data=cfg.sigma_data, noise_levels=levels)


def train(cfg: TrainConfig, dataset: Dataset, cache: LikelihoodCache | None = None,
          checkpoint: str | Path | None = None, params: DenoiserParams | None = None,
          log_every: int = 1000, meta: dict | None = None) -> TrainReport:
    """Run ``cfg.iterations`` steps over ``dataset`` and optionally write a checkpoint.

    ``meta`` is stored verbatim in the checkpoint header.
    """
    cfg.validate()
    start = time.perf_counter()
    s = build_schedule(cfg.T)
    ds = dataset.canonical()
    cache = cache if cache is not None else LikelihoodCache(enabled=cfg.use_cache)
    x_hat = np.stack([cache.get_or_compute(i, cfg.stub, I, x)
                      for i, I, x in zip(ds.ids, ds.images, ds.masks)])
    x_size = int(np.prod(ds.masks.shape[1:]))
    params = params if params is not None else build_params(cfg, x_size, x_size, s)
    opt = make_optimizer(cfg)
    rng = make_rng(cfg.seed)
    losses = np.empty(cfg.iterations)
    t_lo, t_hi = s.T, 0
    record: list = []
    for it in range(cfg.iterations):
        idx = rng.integers(0, len(ds), cfg.batch_size)
        batch = Batch(ds.images[idx], ds.masks[idx], x_hat[idx], ds.background)
        record.clear()
        loss, params = train_step(params, batch, s, rng, opt, learning_rate_at(cfg, it),
                                  cfg.restrict_t_to_t_prime, cfg.augment, record, cfg.stub)
        t_lo = min(t_lo, int(record[0].t.min()))
        t_hi = max(t_hi, int(record[0].t.max()))
        losses[it] = loss
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d loss %.4f (mean of last %d: %.4f)", it + 1, loss, log_every,
                     losses[it + 1 - log_every:it + 1].mean())
    report = TrainReport(losses, time.perf_counter() - start, params, s, None, t_lo, t_hi)
    if checkpoint is not None:
        from .checkpoint import save_checkpoint

        save_checkpoint(checkpoint, params, cfg, iteration=cfg.iterations, extra=meta)
        report.checkpoint = Path(checkpoint)
    return report
