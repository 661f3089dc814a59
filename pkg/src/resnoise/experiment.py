"""Config parsing, the end-to-end mask-refinement experiment, and its metrics."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data import Dataset, iou, make_dataset, mse, split
from .denoiser import ConfigError
from .e2e_stub import LikelihoodCache, stub_apply
from .numerics import load_tensor, make_rng, save_tensor
from .sampler import sample
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    n_train: int = 512
    bootstrap: int = 1000
    eval_seed: int = 7
    figures: bool = True


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _widths(v: str) -> tuple[int, ...]:
    return tuple(int(w) for w in v.replace(",", " ").split())


# key -> (section, attribute, parser, description); section None means ExperimentConfig itself
KEYS: dict[str, tuple[str | None, str, object, str]] = {
    "T": ("train", "T", int, "number of diffusion steps"),
    "batch_size": ("train", "batch_size", int, "samples per optimizer step"),
    "iterations": ("train", "iterations", int, "optimizer steps"),
    "learning_rate": ("train", "learning_rate", float, "peak learning rate"),
    "seed": ("train", "seed", int, "training seed (also names the run directory)"),
    "restrict_t_to_t_prime": ("train", "restrict_t_to_t_prime", _bool, "draw t from 1..t' (else 1..T)"),
    "optimizer": ("train", "optimizer", str, "sgd | adam"),
    "weight_decay": ("train", "weight_decay", float, "decay on weight matrices"),
    "lr_schedule": ("train", "lr_schedule", str, "constant | cosine"),
    "warmup": ("train", "warmup", int, "linear warmup iterations"),
    "augment": ("train", "augment", str, "none | dihedral | dihedral+shift"),
    "widths": ("train", "widths", _widths, "hidden widths, comma separated"),
    "emb_dim": ("train", "emb_dim", int, "time embedding size (even)"),
    "head": ("train", "head", str, "plain | blend"),
    "sigma_data": ("train", "sigma_data", float, "data scale used by the blend head"),
    "use_cache": ("train", "use_cache", _bool, "cache likelihood outputs"),
    "stub": ("stub", "kind", str, "identity | affine_blur"),
    "stub_gain": ("stub", "gain", float, "affine_blur gain a"),
    "stub_bias": ("stub", "bias", float, "affine_blur offset b"),
    "stub_kernel": ("stub", "kernel", int, "affine_blur box size"),
    "height": ("dataset", "height", int, "image rows"),
    "width": ("dataset", "width", int, "image columns"),
    "count": ("dataset", "count", int, "images generated (train + held-out)"),
    "shapes": ("dataset", "shapes", str, "disc | rectangle | mixed"),
    "noise_sigma": ("dataset", "sigma", float, "input noise level"),
    "gradient": ("dataset", "gradient", float, "intensity ramp amplitude"),
    "dataset_seed": ("dataset", "seed", int, "dataset and split seed"),
    "n_train": (None, "n_train", int, "training images; the rest are held out"),
    "bootstrap": (None, "bootstrap", int, "bootstrap resamples for confidence intervals"),
    "eval_seed": (None, "eval_seed", int, "sampler seed"),
    "figures": (None, "figures", _bool, "render png figures"),
}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    base = base or ExperimentConfig()
    vals: dict[str, dict] = {"train": {}, "stub": {}, "dataset": {}, None: {}}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        section, attr, conv, _ = KEYS[key]
        try:
            vals[section][attr] = conv(value)
        except ValueError as e:
            raise ConfigError(f"line {n}: bad value for {key}: {e}") from None
    tc = base.train
    tc = dataclasses.replace(
        tc,
        stub=dataclasses.replace(tc.stub, **vals["stub"]),
        dataset=dataclasses.replace(tc.dataset, **vals["dataset"]),
        **vals["train"],
    )
    cfg = dataclasses.replace(base, train=tc, **vals[None])
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def validate(cfg: ExperimentConfig) -> None:
    cfg.train.validate()
    if not 0 < cfg.n_train < cfg.train.dataset.count:
        raise ConfigError("n_train must leave at least one held-out image")
    if cfg.bootstrap < 1:
        raise ConfigError("bootstrap must be >= 1")


def render_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, (section, attr, _, doc) in KEYS.items():
        obj = cfg if section is None else cfg.train if section == "train" else getattr(cfg.train, section)
        v = getattr(obj, attr)
        if isinstance(v, tuple):
            v = ",".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of every setting except the seed, which is appended separately."""
    body = [ln for ln in render_config(cfg).splitlines() if not ln.startswith("seed ")]
    return hashlib.sha256("\n".join(body).encode()).hexdigest()[:12]


def run_dir_name(cfg: ExperimentConfig) -> str:
    return f"{config_hash(cfg)}_seed{cfg.train.seed}"


@dataclass(frozen=True)
class MetricsRow:
    id: str
    mse_stub: float
    mse_diffusion: float
    iou_stub: float
    iou_diffusion: float


def metrics_rows(ids, x0, x_hat0, x_diff) -> list[MetricsRow]:
    return [MetricsRow(i, mse(h, x), mse(d, x), iou(h, x), iou(d, x))
            for i, x, h, d in zip(ids, x0, x_hat0, x_diff)]


def bootstrap_ci(delta: np.ndarray, n_resamples: int, seed: int, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``delta``."""
    if np.all(delta == delta[0]):
        return float(delta[0]), float(delta[0])
    res = stats.bootstrap((delta,), np.mean, n_resamples=n_resamples, confidence_level=level,
                          method="percentile", random_state=make_rng(seed))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def summarize(rows: list[MetricsRow], n_resamples: int, seed: int) -> list[dict]:
    out = []
    for name, better in (("iou", 1.0), ("mse", -1.0)):
        a = np.array([getattr(r, f"{name}_stub") for r in rows])
        b = np.array([getattr(r, f"{name}_diffusion") for r in rows])
        lo, hi = bootstrap_ci(b - a, n_resamples, seed)
        gap_zero = bool(np.all(np.array([r.mse_stub for r in rows]) == 0.0))
        out.append({
            "metric": name,
            "stub_mean": float(a.mean()),
            "diffusion_mean": float(b.mean()),
            "delta_mean": float((b - a).mean()),
            "ci_low": lo,
            "ci_high": hi,
            "improved": bool(better * (b - a).mean() > 0),
            "ci_excludes_zero": bool(lo > 0 or hi < 0),
            "gap_already_zero": gap_zero,
        })
    return out


def write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_losses(path, losses: np.ndarray) -> None:
    write_csv(path, [{"iteration": i + 1, "loss": float(v)} for i, v in enumerate(losses)])


@dataclass
class ExperimentResult:
    run_dir: Path
    rows: list[MetricsRow]
    summary: list[dict]
    wall_time: float


def prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = make_dataset(cfg.train.dataset)
    return split(ds, cfg.n_train, cfg.train.dataset.seed)


def evaluate_run(run_dir, cfg: ExperimentConfig) -> ExperimentResult:
    """Recompute metrics.csv and summary.csv from the tensors saved in ``run_dir``."""
    run_dir = Path(run_dir)
    x0 = load_tensor(run_dir / "heldout_x0.rsf")
    xh = load_tensor(run_dir / "heldout_x_hat0.rsf")
    xd = load_tensor(run_dir / "samples.rsf")
    ids = (run_dir / "heldout_ids.txt").read_text().split()
    rows = metrics_rows(ids, x0, xh, xd)
    summary = summarize(rows, cfg.bootstrap, cfg.eval_seed)
    write_csv(run_dir / "metrics.csv", [dataclasses.asdict(r) for r in rows])
    write_csv(run_dir / "summary.csv", summary)
    return ExperimentResult(run_dir, rows, summary, 0.0)


def run_experiment(cfg: ExperimentConfig, out_root) -> ExperimentResult:
    """Train on the training split, sample the held-out split, and write metrics."""
    validate(cfg)
    start = time.perf_counter()
    run_dir = Path(out_root) / run_dir_name(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(render_config(cfg))
    tr, te = prepare_data(cfg)
    cache = LikelihoodCache(enabled=cfg.train.use_cache)
    report = train(cfg.train, tr, cache=cache, checkpoint=run_dir / "model.rsck",
                   meta={"n_train": cfg.n_train})
    write_losses(run_dir / "losses.csv", report.losses)

    te = te.canonical()
    x_hat = np.stack([stub_apply(cfg.train.stub, I, x) for I, x in zip(te.images, te.masks)])
    trace = sample(te.images, x_hat, report.params, report.schedule, make_rng(cfg.eval_seed))
    save_tensor(run_dir / "heldout_I0.rsf", te.images)
    save_tensor(run_dir / "heldout_x0.rsf", te.masks)
    save_tensor(run_dir / "heldout_x_hat0.rsf", x_hat)
    save_tensor(run_dir / "samples.rsf", trace.x0)
    (run_dir / "heldout_ids.txt").write_text("\n".join(te.ids) + "\n")
    result = evaluate_run(run_dir, cfg)
    if cfg.figures:
        from .plotting import plot_losses, plot_samples

        plot_losses(report.losses, run_dir / "losses.png")
        plot_samples(te.images, te.masks, x_hat, trace.x0, run_dir / "samples.png")
    result.wall_time = time.perf_counter() - start
    (run_dir / "timing.json").write_text(json.dumps({"wall_time_s": result.wall_time,
                                                     "train_time_s": report.wall_time}))
    log.info("run %s finished in %.1fs", run_dir, result.wall_time)
    return result
