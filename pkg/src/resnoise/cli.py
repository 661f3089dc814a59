"""Command-line entry point: ``resnoise <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .denoiser import ConfigError

log = logging.getLogger("resnoise")


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_schedule(args) -> int:
    from .schedule import acceleration_bias, build_schedule, schedule_rows

    s = build_schedule(args.t)
    cols = ["t", "beta", "alpha", "alpha_bar", "sqrt_alpha_bar", "tilde_beta"]
    rows = [[r[c] if c == "t" else repr(float(r[c])) for c in cols] for r in schedule_rows(s)]
    rows.append(["t_prime", s.t_prime, "acceleration_bias", repr(acceleration_bias(s)), "", ""])
    _write_rows(Path(args.out), cols, rows)
    print(f"T={s.T} t'={s.t_prime} acceleration_bias={acceleration_bias(s):.6g} -> {args.out}")
    return 0


def _load(args):
    from .experiment import load_config

    return load_config(args.config)


def cmd_train(args) -> int:
    from .experiment import prepare_data, render_config, run_dir_name, write_losses
    from .trainer import train

    cfg = _load(args)
    run_dir = Path(args.out) / run_dir_name(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(render_config(cfg))
    tr, _ = prepare_data(cfg)
    report = train(cfg.train, tr, checkpoint=run_dir / "model.rsck",
                   meta={"n_train": cfg.n_train})
    write_losses(run_dir / "losses.csv", report.losses)
    if cfg.figures:
        from .plotting import plot_losses

        plot_losses(report.losses, run_dir / "losses.png")
    print(f"trained {cfg.train.iterations} steps in {report.wall_time:.1f}s; "
          f"final loss {report.losses[-1]:.4f} -> {run_dir}")
    return 0


def cmd_sample(args) -> int:
    from .checkpoint import config_from_dict, load_checkpoint
    from .e2e_stub import stub_apply
    from .experiment import ExperimentConfig, prepare_data
    from .numerics import make_rng, save_tensor
    from .sampler import sample
    from .schedule import build_schedule

    params, header = load_checkpoint(args.checkpoint)
    tcfg = config_from_dict(header["config"])
    n_train = header.get("n_train", ExperimentConfig().n_train)
    _, te = prepare_data(ExperimentConfig(train=tcfg, n_train=n_train))
    te = te.canonical().subset(np.arange(min(args.n, len(te))))
    x_hat = np.stack([stub_apply(tcfg.stub, I, x) for I, x in zip(te.images, te.masks)])
    s = build_schedule(header["T"])
    trace = sample(te.images, x_hat, params, s, make_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "I0.rsf", te.images)
    save_tensor(out / "x0.rsf", te.masks)
    save_tensor(out / "x_hat0.rsf", x_hat)
    save_tensor(out / "samples.rsf", trace.x0)
    _write_rows(out / "trace.csv", ["t", "rms_x_t", "rms_resnoise"],
                [[t, repr(a), repr(b)] for t, a, b in trace.norms])
    print(f"{len(te)} samples, {trace.n_evals} denoiser calls each -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .experiment import evaluate_run, load_config, run_experiment

    if args.run_dir:
        cfg = load_config(Path(args.run_dir) / "config.txt")
        res = evaluate_run(args.run_dir, cfg)
    else:
        if not args.config:
            raise ConfigError("eval needs --config or --run-dir")
        res = run_experiment(_load(args), args.out)
    for row in res.summary:
        flag = "  (gap already zero)" if row["gap_already_zero"] else ""
        print(f"{row['metric']}: stub {row['stub_mean']:.4f}  diffusion {row['diffusion_mean']:.4f}  "
              f"delta {row['delta_mean']:+.4f}  95% CI [{row['ci_low']:+.4f}, {row['ci_high']:+.4f}]{flag}")
    print(f"-> {res.run_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    from .denoiser import init_params, loss_and_grad
    from .numerics import make_rng
    from .oracles import gradient_check
    from .schedule import build_schedule

    s = build_schedule(100)
    rng = make_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        for head in ("plain", "blend"):
            x_size, cond, B = int(rng.integers(2, 6)), int(rng.integers(1, 5)), 3
            widths = tuple(int(w) for w in rng.integers(2, 6, int(rng.integers(1, 4))))
            p = init_params(x_size, cond, widths, 4, rng, head=head,
                            noise_levels=np.sqrt(s.one_minus_alpha_bar), out_scale=1.0)
            p = p.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in p.arrays()])
            x, c = rng.standard_normal((B, x_size)), rng.standard_normal((B, cond))
            t = rng.integers(1, s.T + 1, B)
            y = rng.standard_normal((B, x_size))
            _, g = loss_and_grad(p, x, c, t, y)
            err = gradient_check(lambda v: loss_and_grad(p.with_flat(v), x, c, t, y)[0],
                                 p.flat(), g.flat(), args.h)
            worst = max(worst, err)
            if args.verbose:
                print(f"trial {trial} {head:5s} widths={widths} params={p.n_params()} rel err {err:.2e}")
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} (limit {args.tol:g}) {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle_tests(args) -> int:
    from .checks import run_all

    results = run_all(args.t, args.markov_samples)
    width = max(len(r.name) for r in results)
    print(f"{'check':{width}s}  result  {'value':>10s}  {'limit':>8s}  detail")
    for r in results:
        print(f"{r.name:{width}s}  {'PASS' if r.passed else 'FAIL':6s}  {r.value:10.3g}  "
              f"{r.limit:8.3g}  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} passed")
    return 0 if n_fail == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resnoise", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="write the noise schedule as CSV")
    p.add_argument("--t", type=int, default=1000, help="number of steps T")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train", help="train a denoiser from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample held-out images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="run the full experiment, or re-score a finished run")
    p.add_argument("--config")
    p.add_argument("--run-dir")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-tests", help="run the algebra and oracle checks")
    p.add_argument("--t", type=int, default=1000)
    p.add_argument("--markov-samples", type=int, default=100_000)
    p.set_defaults(func=cmd_oracle_tests)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
