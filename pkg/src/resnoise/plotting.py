"""Report figures written straight to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_losses(losses: np.ndarray, path, window: int = 200) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    it = np.arange(1, len(losses) + 1)
    ax.plot(it, losses, lw=0.4, alpha=0.4, label="per step")
    if len(losses) >= window:
        smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
        ax.plot(it[window - 1:], smooth, lw=1.5, label=f"mean of {window}")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("resnoise MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_samples(I0, x0, x_hat0, x_diff, path, n: int = 6) -> Path:
    """One row per image: input, ground truth, likelihood output, diffusion sample."""
    n = min(n, len(x0))
    cols = [("input", I0, None), ("truth", x0, (-1, 1)), ("stub", x_hat0, (-1, 1)),
            ("diffusion", x_diff, (-1, 1))]
    fig, axes = plt.subplots(n, len(cols), figsize=(2 * len(cols), 2 * n), squeeze=False)
    for r in range(n):
        for c, (title, arr, lim) in enumerate(cols):
            ax = axes[r, c]
            kw = {} if lim is None else {"vmin": lim[0], "vmax": lim[1]}
            ax.imshow(arr[r], cmap="gray", **kw)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
