"""Synthetic mask/image pairs and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import ConfigError
from .numerics import check_same_shape, make_rng

AREA_RANGE = (0.1, 0.6)


@dataclass(frozen=True)
class DatasetSpec:
    height: int = 16
    width: int = 16
    count: int = 640
    shapes: str = "mixed"
    sigma: float = 0.5
    gradient: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.height < 4 or self.width < 4:
            raise ConfigError(f"image must be at least 4x4, got {self.height}x{self.width}")
        if self.shapes not in ("disc", "rectangle", "mixed"):
            raise ConfigError(f"unknown shape family {self.shapes!r}")
        if self.count < 1 or self.sigma < 0:
            raise ConfigError("count must be >= 1 and sigma >= 0")


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) conditioning inputs I0
    masks: np.ndarray   # (N, H, W) ground truth in {-1, +1}
    ids: list[str]
    background: np.ndarray | None = None  # fixed additive field in every image

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.masks[idx], [self.ids[i] for i in idx], self.background)

    def canonical(self) -> "Dataset":
        """Same samples sorted by id, so results do not depend on storage order."""
        return self.subset(np.argsort(np.array(self.ids), kind="stable"))


def _shape_mask(rng: np.random.Generator, kind: str, H: int, W: int) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    if kind == "disc":
        r = rng.uniform(0.18, 0.44) * min(H, W)
        cy, cx = rng.uniform(0.25 * H, 0.75 * H), rng.uniform(0.25 * W, 0.75 * W)
        inside = (yy + 0.5 - cy) ** 2 + (xx + 0.5 - cx) ** 2 <= r * r
    else:
        h = rng.integers(max(2, H // 4), int(0.85 * H) + 1)
        w = rng.integers(max(2, W // 4), int(0.85 * W) + 1)
        y0 = rng.integers(0, H - h + 1)
        x0 = rng.integers(0, W - w + 1)
        inside = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    return inside


def random_mask(rng: np.random.Generator, kind: str, H: int, W: int) -> np.ndarray:
    """A {-1, +1} mask whose foreground fraction lies in ``AREA_RANGE`` (rejection sampled)."""
    lo, hi = AREA_RANGE
    while True:
        k = kind if kind != "mixed" else ("disc", "rectangle")[rng.integers(2)]
        inside = _shape_mask(rng, k, H, W)
        if lo <= inside.mean() <= hi:
            return np.where(inside, 1.0, -1.0)


def intensity_ramp(H: int, W: int, amplitude: float) -> np.ndarray:
    """Fixed left-to-right ramp from -amplitude/2 to +amplitude/2."""
    return np.broadcast_to(amplitude * (np.linspace(0.0, 1.0, W) - 0.5), (H, W)).copy()


def make_dataset(spec: DatasetSpec) -> Dataset:
    spec.validate()
    rng = make_rng(spec.seed)
    H, W = spec.height, spec.width
    masks = np.stack([random_mask(rng, spec.shapes, H, W) for _ in range(spec.count)])
    noise = rng.standard_normal(masks.shape)
    images = masks + spec.sigma * noise + intensity_ramp(H, W, spec.gradient)
    ids = [f"s{spec.seed}_{i:05d}" for i in range(spec.count)]
    return Dataset(images, masks, ids, intensity_ramp(H, W, spec.gradient))


def split(ds: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, seed-stable train/held-out split."""
    if not 0 < n_train < len(ds):
        raise ConfigError(f"n_train must be in (0, {len(ds)})")
    perm = make_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def iou(pred: np.ndarray, truth: np.ndarray, threshold: float = 0.0) -> float:
    check_same_shape(pred, truth)
    p = np.asarray(pred) > threshold
    q = np.asarray(truth) > threshold
    union = np.logical_or(p, q).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, q).sum() / union)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    check_same_shape(a, b)
    d = np.asarray(a, dtype=np.float64) - b
    return float(np.mean(d * d))


def dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """Rotate the last two axes by k quarter turns, then optionally mirror columns."""
    y = np.rot90(x, k, axes=(-2, -1))
    return y[..., ::-1] if flip else y
