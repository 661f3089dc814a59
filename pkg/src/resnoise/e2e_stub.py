"""Surrogate end-to-end model with a controlled residual, plus its cache."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .denoiser import ConfigError
from .numerics import check_same_shape, load_tensor, save_tensor


@dataclass(frozen=True)
class StubSpec:
    kind: str = "affine_blur"
    gain: float = 0.8
    bias: float = 0.1
    kernel: int = 3

    def validate(self) -> None:
        if self.kind == "identity":
            return
        if self.kind != "affine_blur":
            raise ConfigError(f"unknown stub kind {self.kind!r}")
        if not 0.0 < self.gain <= 1.0:
            raise ConfigError(f"stub gain must lie in (0, 1], got {self.gain}")
        if abs(self.bias) > 0.5:
            raise ConfigError(f"|stub bias| must be <= 0.5, got {self.bias}")
        if self.kernel not in (1, 3, 5):
            raise ConfigError(f"stub kernel must be 1, 3 or 5, got {self.kernel}")


def box_blur(x: np.ndarray, kernel: int) -> np.ndarray:
    """k x k mean filter over the last two axes (last axis for 1-D input), edge-replicated."""
    if kernel == 1:
        return np.array(x, dtype=np.float64)
    size = [1] * x.ndim
    for ax in range(max(0, x.ndim - 2), x.ndim):
        size[ax] = kernel
    return uniform_filter(np.asarray(x, dtype=np.float64), size=size, mode="nearest")


def stub_apply(spec: StubSpec, I0: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Likelihood output x_hat0.

    The surrogate corrupts ``x0`` directly so the residual is known; ``I0`` is
    accepted for interface parity with a real model and only shape-checked.
    """
    spec.validate()
    check_same_shape(I0, x0)
    if spec.kind == "identity":
        return np.array(x0, dtype=np.float64)
    return np.clip(spec.gain * box_blur(x0, spec.kernel) + spec.bias, -1.0, 1.0)


class LikelihoodCache:
    """Sample id -> x_hat0.  Optionally mirrored to a directory of RSF1 files."""

    def __init__(self, directory: str | Path | None = None, enabled: bool = True):
        self._store: dict = {}
        self._lock = threading.Lock()
        self.enabled = enabled
        self.directory = Path(directory) if directory is not None else None
        self.hits = 0
        self.misses = 0

    def _path(self, key) -> Path:
        return self.directory / f"{key}.rsf"

    def get_or_compute(self, key, spec: StubSpec, I0, x0) -> np.ndarray:
        if not self.enabled:
            return stub_apply(spec, I0, x0)
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
            if self.directory is not None and self._path(key).exists():
                value = load_tensor(self._path(key))
            else:
                value = stub_apply(spec, I0, x0)
                if self.directory is not None:
                    self.directory.mkdir(parents=True, exist_ok=True)
                    save_tensor(self._path(key), value)
            value.setflags(write=False)
            self._store[key] = value
            self.misses += 1
            return value

    def __len__(self) -> int:
        return len(self._store)


def cache_get_or_compute(cache: LikelihoodCache, key, spec: StubSpec, I0, x0) -> np.ndarray:
    return cache.get_or_compute(key, spec, I0, x0)
