"""Command-line pipeline: every run is a pure function of config file + seed.

Subcommands: generate | train | eval | sweep-bias | verify-bounds | grad-check.
Exit codes: 0 success, 1 usage or configuration failure, 2 numerical failure
(divergent training, bound violation, or a failed gradient check). Output
files are byte-stable across reruns; wall-clock timings appear only in log
lines and in the history file's timing column.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from . import datagen as dg
from . import model as md
from . import theory as th
from . import training as tr
from .autodiff import Tensor
from .config import ConfigError, load_config, resolve_out_dir

SPLIT_LABELS = {"test": "out-of-sample", "train": "within-sample",
                "val": "validation"}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


def _log(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out_dir = resolve_out_dir(args.out or cfg.out_dir)
    spec = cfg.dataset_spec(seed)
    started = time.perf_counter()
    dataset = dg.make_dataset(spec)
    dg.save_dataset(dataset, out_dir)
    t_star = dg.optimal_treatment(dataset.x, dataset.weights, spec.kind)
    corr = float(np.corrcoef(dataset.t, t_star)[0, 1])
    _log(f"dataset written to {out_dir} "
         f"({time.perf_counter() - started:.1f}s elapsed)")
    _log(f"  kind={spec.kind} N={dataset.n} d={dataset.d} alpha={spec.alpha} "
         f"noise_std={spec.noise_std} seed={seed}")
    _log(f"  splits train/val/test = {dataset.train_idx.size}"
         f"/{dataset.val_idx.size}/{dataset.test_idx.size}")
    _log(f"  mean treatment = {dataset.t.mean():.4f}, corr(t, t*) = {corr:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_one(dataset, cfg, seed, out_dir, method=None, gamma=None):
    model_cfg = cfg.model_config(input_dim=dataset.d, method=method)
    train_cfg = cfg.train_config(seed=seed, gamma=gamma)
    if model_cfg.method == "mlp" and cfg.attention_keys_set_explicitly():
        keys = ", ".join(sorted(cfg.attention_keys_set_explicitly()))
        _log(f"  warning: mlp ignores attention settings ({keys})")
    ckpt_path = os.path.join(out_dir, f"checkpoint-seed{seed}.json")
    hist_path = os.path.join(out_dir, f"history-seed{seed}.csv")
    try:
        params, history = tr.train(dataset, model_cfg, train_cfg)
    except tr.DivergenceError as exc:
        if exc.history is not None:
            exc.history.write_csv(hist_path)
            _log(f"  divergence at iteration {exc.iteration}; partial history "
                 f"saved to {hist_path}")
        raise
    tr.save_checkpoint(params, train_cfg, ckpt_path,
                       iteration=train_cfg.iterations)
    history.write_csv(hist_path)
    return params, history, ckpt_path


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = dg.load_dataset(args.dataset)
    out_dir = resolve_out_dir(args.out or cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    for seed in seeds:
        started = time.perf_counter()
        _, history, ckpt_path = _train_one(dataset, cfg, seed, out_dir)
        _log(f"seed {seed}: {len(history.pred_losses)} iterations, final "
             f"l_pred {history.pred_losses[-1]:.6f}, checkpoint {ckpt_path} "
             f"({time.perf_counter() - started:.1f}s elapsed)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _score_checkpoint(ckpt_path, dataset, split, oracle=False):
    ckpt = tr.load_checkpoint(ckpt_path)
    if ckpt.model_config.input_dim != dataset.d:
        raise ValueError(
            f"checkpoint expects {ckpt.model_config.input_dim} covariates but "
            f"dataset has {dataset.d}"
        )
    grid = th.treatment_grid()
    idx = dataset.split(split)
    truth = dg.response_grid(dataset, idx, grid)
    if oracle:
        pred = truth
        method = "oracle"
    else:
        params = tr.params_from_checkpoint(ckpt)
        pred = md.response_curves(params, dataset.x[idx], grid)
        method = ckpt.model_config.method
    row = th.MetricsRow(
        method=method,
        seed=ckpt.train_config.seed,
        alpha=dataset.spec.alpha,
        split=SPLIT_LABELS[split],
        mise=th.mise(pred, truth, grid),
        pe=th.policy_error(pred, truth, grid),
    )
    return row


def cmd_eval(args) -> int:
    dataset = dg.load_dataset(args.dataset)
    out_path = resolve_out_dir(args.out)
    rows = []
    for split in args.split:
        row = _score_checkpoint(args.checkpoint, dataset, split,
                                oracle=args.oracle)
        rows.append(row)
        _log(f"{row.method} seed {row.seed} {row.split}: mise={row.mise:.6f} "
             f"pe={row.pe:.6f}")
    th.write_metrics_rows(rows, out_path, append=True)
    _log(f"appended {len(rows)} row(s) to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep-bias
# ---------------------------------------------------------------------------

def cmd_sweep_bias(args) -> int:
    cfg = load_config(args.config)
    alphas = tuple(args.alphas) if args.alphas else cfg.sweep_alphas
    if not alphas or any(a < 1.0 for a in alphas):
        raise ConfigError("alphas must be a nonempty list of values >= 1")
    seeds = list(cfg.seeds)
    if args.realizations is not None:
        if args.realizations > len(seeds):
            raise ConfigError(
                f"--realizations {args.realizations} exceeds the {len(seeds)} "
                f"seeds in the config"
            )
        seeds = seeds[: args.realizations]
    out_dir = resolve_out_dir(args.out or cfg.out_dir)
    os.makedirs(out_dir, exist_ok=True)

    rows, failures = [], []
    for alpha in alphas:
        for seed in seeds:
            cell_dir = os.path.join(out_dir, f"alpha-{alpha:g}", f"seed-{seed}")
            try:
                dataset = dg.make_dataset(cfg.dataset_spec(seed, alpha=alpha))
                dg.save_dataset(dataset, os.path.join(cell_dir, "data"))
            except Exception as exc:  # noqa: BLE001 - cell isolation
                failures.append(f"alpha={alpha:g} seed={seed} generate: {exc}")
                continue
            for method in cfg.sweep_methods:
                started = time.perf_counter()
                try:
                    mdir = os.path.join(cell_dir, method)
                    os.makedirs(mdir, exist_ok=True)
                    _, _, ckpt_path = _train_one(dataset, cfg, seed, mdir,
                                                 method=method)
                    row = _score_checkpoint(ckpt_path, dataset, "test")
                    rows.append(row)
                    _log(f"alpha={alpha:g} seed={seed} {method}: "
                         f"mise={row.mise:.4f} pe={row.pe:.4f} "
                         f"({time.perf_counter() - started:.1f}s elapsed)")
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    failures.append(f"alpha={alpha:g} seed={seed} {method}: {exc}")
                    _log(f"alpha={alpha:g} seed={seed} {method}: FAILED ({exc})")
    report_path = os.path.join(out_dir, "sweep_report.csv")
    th.write_metrics_rows(rows, report_path)
    with open(os.path.join(out_dir, "failures.txt"), "w") as fh:
        for line in failures:
            fh.write(line + "\n")
    _log(f"sweep report: {report_path} ({len(rows)} rows, "
         f"{len(failures)} failed cells)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-bounds
# ---------------------------------------------------------------------------

def cmd_verify_bounds(args) -> int:
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    started = time.perf_counter()
    report = th.verify_bounds(args.instances, max_side=args.max_size,
                              seed=args.seed)
    text = report.to_text()
    if args.out:
        out_path = resolve_out_dir(args.out)
        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out_path, "w") as fh:
            fh.write(text)
        _log(f"report written to {out_path}")
    _log(f"{report.checks} checks on {report.instances} instances "
         f"({time.perf_counter() - started:.1f}s elapsed)")
    for name in sorted(report.min_slack):
        _log(f"  min slack {name}: {report.min_slack[name]!r}")
    if report.violations:
        _log(f"{len(report.violations)} violation(s); first counterexample:")
        name, context, result = report.violations[0]
        _log(f"  {name} at {context}: {result!r}")
        return EXIT_NUMERIC
    _log("no violations")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grad-check
# ---------------------------------------------------------------------------

def _scalarize(t: Tensor) -> Tensor:
    return ad.mean(ad.tanh(t))


def _primitive_worst(rng) -> float:
    m = Tensor(rng.normal(size=(4, 3)))
    right = Tensor(rng.normal(size=(3, 2)))
    batched = Tensor(rng.normal(size=(2, 3, 4)))
    target = Tensor(rng.normal(size=(4, 3)))
    cases = {
        (4, 3): [
            lambda t: _scalarize(ad.matmul(t, right)),
            lambda t: _scalarize(ad.add(m, t)),
            lambda t: _scalarize(ad.sub(t, m)),
            lambda t: _scalarize(ad.mul(t, 1.7)),
            lambda t: _scalarize(ad.mul(t, m)),
            lambda t: _scalarize(ad.relu(t)),
            lambda t: _scalarize(ad.tanh(t)),
            lambda t: _scalarize(ad.sigmoid(t)),
            lambda t: _scalarize(ad.row_softmax(t)),
            lambda t: _scalarize(ad.concat([t, m])),
            lambda t: _scalarize(ad.reshape(t, (3, 4))),
            lambda t: _scalarize(ad.transpose(t)),
            lambda t: ad.mean(t),
            lambda t: ad.mse(t, target),
        ],
        (12,): [lambda t: _scalarize(ad.matmul(batched, ad.reshape(t, (4, 3))))],
    }
    worst = 0.0
    for shape, fns in cases.items():
        for fn in fns:
            x = rng.normal(size=shape)
            worst = max(worst, ad.grad_check(fn, x, step=1e-5))
    return worst


def _model_components(seed: int) -> dict:
    from .splines import SplineConfig

    spline = SplineConfig(2, (1 / 3, 2 / 3))
    base = dict(input_dim=5, hidden_width=6, hidden_layers=1, repr_dim=8,
                attn_dim=4, value_dim=4, tokens=4, head_hidden=5, spline=spline)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 5))
    t = rng.uniform(size=4)
    y = rng.normal(size=4)
    z = rng.normal(size=(4, 8))

    acfr = md.init_params(md.ModelConfig(method="acfr", **base), seed)
    noattn = md.init_params(md.ModelConfig(method="acfr-no-attn", **base), seed)
    mlp = md.init_params(md.ModelConfig(method="mlp", **base), seed)
    z_target = Tensor(rng.normal(size=32))

    def check(loss_fn, params):
        return ad.grad_check_params(loss_fn, params)

    return {
        "encoder": lambda: check(
            lambda: ad.mse(ad.reshape(md.encode(acfr, x), (32,)), z_target),
            acfr.encoder_params()),
        "treatment_predictor": lambda: check(
            lambda: ad.mse(md.predict_treatment(acfr, z), Tensor(t)),
            acfr.predictor_params()),
        "attention_head": lambda: check(
            lambda: ad.mse(md.outcome_attention(acfr, z, t), Tensor(y)),
            acfr.outcome_params()),
        "no_attention_head": lambda: check(
            lambda: ad.mse(md.outcome_no_attention(noattn, z, t), Tensor(y)),
            noattn.outcome_params()),
        "mlp_baseline": lambda: check(
            lambda: ad.mse(md.mlp_baseline(mlp, x, t), Tensor(y)),
            mlp.outcome_params()),
        "losses": lambda: max(
            ad.grad_check(lambda p: ad.mse(p, Tensor(y)), rng.normal(size=4)),
            ad.grad_check(lambda p: ad.mse(Tensor(y), p), rng.normal(size=4)),
        ),
    }


def cmd_grad_check(args) -> int:
    tolerance = 1e-4
    worst: dict = {}
    started = time.perf_counter()
    for round_idx in range(args.rounds):
        seed = args.seed + round_idx
        rng = np.random.default_rng(seed)
        worst["primitives"] = max(worst.get("primitives", 0.0),
                                  _primitive_worst(rng))
        for name, runner in _model_components(seed).items():
            worst[name] = max(worst.get(name, 0.0), runner())
    failed = {k: v for k, v in worst.items() if v >= tolerance}
    lines = [f"rounds = {args.rounds}", f"base_seed = {args.seed}"]
    for name in sorted(worst):
        status = "FAIL" if name in failed else "ok"
        lines.append(f"{name}: worst relative error {worst[name]!r} [{status}]")
    text = "\n".join(lines) + "\n"
    if args.out:
        out_path = resolve_out_dir(args.out)
        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out_path, "w") as fh:
            fh.write(text)
    _log(text.rstrip())
    _log(f"({time.perf_counter() - started:.1f}s elapsed)")
    if failed:
        _log(f"gradient check FAILED for: {', '.join(sorted(failed))}")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acfr",
        description="Adversarial counterfactual regression pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a dataset directory")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="dataset directory (default: config out_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the dose grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", action="append", choices=("train", "val", "test"),
                   default=None)
    p.add_argument("--oracle", action="store_true",
                   help="score the ground truth as its own predictor")
    p.add_argument("--out", required=True, help="metrics csv (appended)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-bias", help="bias-robustness sweep over alpha")
    p.add_argument("--config", required=True)
    p.add_argument("--alphas", type=float, nargs="+")
    p.add_argument("--realizations", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_bias)

    p = sub.add_parser("verify-bounds", help="brute-force bound verification")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--max-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report file")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--out", help="report file")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "split", "unset") is None:
        args.split = ["test"]
    try:
        return args.func(args)
    except (ConfigError, tr.CheckpointError, FileNotFoundError, ValueError,
            OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except tr.DivergenceError as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
