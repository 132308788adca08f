"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as B
from . import checkpoint, lds
from ._kernels import BACKEND
from .config import RunConfig, load_run_config, parse_text
from .data import (
    ConfigurationError,
    IngestionError,
    apply_scaler,
    fit_scaler,
    load_covariates,
    load_csv,
    split,
    synthetic_hourly,
    window_count,
    with_time_features,
    write_csv,
)
from .evaluation import TrainingDiverged, rolling_evaluate, train_loop
from .gradcheck import SUITE_TOLERANCE, gradcheck_suite
from .tensor import ParameterError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("tidelab")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(outdir: Path, command: str, rc: RunConfig | None, started: float, extra: dict | None = None) -> None:
    body = {
        "command": command,
        "seed": None if rc is None else rc.seed,
        "config_hash": None if rc is None else rc.digest(),
        "config": None if rc is None else rc.to_text(),
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "backend": BACKEND,
    }
    body.update(extra or {})
    _write_json(outdir / "manifest.json", body)


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_config(args) -> RunConfig:
    rc = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    flags = {}
    for key in ("preset", "horizon", "seed", "data", "covariates", "max_epochs"):
        v = getattr(args, key, None)
        if v is not None:
            flags[key] = v
    rc = rc.updated(flags)
    return rc.updated(_parse_sets(getattr(args, "set", None)))


def prepare_dataset(rc: RunConfig):
    """Load, subset, add calendar features, split and normalise as ``rc`` says."""
    if not rc.data:
        raise ConfigurationError("no dataset given (set 'data' or pass --data)")
    path = Path(rc.data)
    if not path.is_file():
        raise ConfigurationError(f"dataset file not found: {path}")
    ds = load_csv(path)
    if rc.max_series is not None:
        if rc.max_series < 1:
            raise ConfigurationError("max_series must be positive")
        ds = ds.select_series(range(min(rc.max_series, ds.num_series)))
    if rc.covariates:
        cpath = Path(rc.covariates)
        if not cpath.is_file():
            raise ConfigurationError(f"covariate file not found: {cpath}")
        ds = load_covariates(cpath, ds)
    elif rc.time_features:
        ds = with_time_features(ds)
    spec = split(ds, lookback=rc.lookback, horizon=rc.horizon)
    if rc.normalize:
        ds = apply_scaler(ds, fit_scaler(ds, spec))
    return ds, spec


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    started = time.perf_counter()
    rc = _run_config(args)
    for key in ("data", "covariates"):
        if getattr(rc, key):
            rc = rc.updated({key: str(Path(getattr(rc, key)).resolve())})
    ds, spec = prepare_dataset(rc)
    cfg = rc.model_config(ds.covariate_dim, ds.num_series, ds.static_dim)
    tcfg = rc.train_config()
    out = _outdir(args.outdir)
    try:
        res = train_loop(cfg, tcfg, ds, spec)
    except TrainingDiverged as exc:
        _write_json(out / "divergence.json", {k: v for k, v in exc.snapshot.items() if k != "params"}
                    | {"history": [r.__dict__ for r in exc.snapshot["history"]]})
        raise _Fail(EXIT_DIVERGED, str(exc)) from exc
    (out / "history.csv").write_text(res.history_csv())
    checkpoint.save(res.model, out / "checkpoint.bin", meta={"run_config": rc.to_text()})
    report = rolling_evaluate(res.model, ds, spec, "test", cfg.lookback, cfg.horizon, tcfg.eval_batch_size)
    _write_json(out / "metrics.json", report.to_dict())
    _manifest(out, "train", rc, started, {"best_epoch": res.best_epoch, "steps": res.steps})
    print(report.to_json())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    try:
        model, meta = checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise ConfigurationError(str(exc)) from exc
    rc = RunConfig.from_mapping(parse_text(meta.get("run_config", "")))
    rc = rc.updated({k: v for k, v in (("data", args.data), ("covariates", args.covariates)) if v is not None})
    if args.raw_scale:
        rc = rc.updated({"normalize": False})
    ds, spec = prepare_dataset(rc)
    cfg = model.config
    if ds.covariate_dim != cfg.covariate_dim and not cfg.linear_only:
        raise ConfigurationError(f"dataset has {ds.covariate_dim} covariates, checkpoint expects {cfg.covariate_dim}")
    if ds.static_dim != cfg.static_dim and not cfg.linear_only:
        raise ConfigurationError(f"dataset has {ds.static_dim} static features, checkpoint expects {cfg.static_dim}")
    if cfg.revin and ds.num_series > cfg.num_series:
        raise ConfigurationError(f"checkpoint holds RevIN parameters for {cfg.num_series} series, dataset has {ds.num_series}")
    predictor = (lambda b: b.target) if args.leak_targets else model
    report = rolling_evaluate(predictor, ds, spec, args.segment, cfg.lookback, cfg.horizon)
    expected = window_count(spec, args.segment, cfg.lookback, cfg.horizon, ds.num_series)
    print(report.to_json())
    print(f"window_count {report.window_count} (closed form {expected})", file=sys.stderr)
    if args.outdir:
        out = _outdir(args.outdir)
        _write_json(out / "metrics.json", report.to_dict())
        _manifest(out, "evaluate", rc, started, {"segment": args.segment, "normalized": not args.raw_scale})
    return EXIT_OK if report.window_count == expected else EXIT_CHECK


def cmd_bench(args) -> int:
    started = time.perf_counter()
    lookbacks = tuple(int(v) for v in args.lookbacks.split(","))
    if any(L < 1 for L in lookbacks):
        raise ConfigurationError("look-backs must be positive")
    if args.data:
        path = Path(args.data)
        if not path.is_file():
            raise ConfigurationError(f"dataset file not found: {path}")
        ds = load_csv(path)
    else:
        ds = synthetic_hourly(args.series, args.steps, seed=0)
    ds = with_time_features(ds)
    points = B.sweep(ds, lookbacks, horizon=args.horizon, steps=args.batch, preset=args.preset, reps=args.reps,
                     warmup=args.warmup, train_reps=args.train_reps, train_warmup=args.train_warmup,
                     micro_batch=args.micro_batch,
                     progress=lambda p: print(f"L={p.lookback} infer_us={p.infer_us:.0f} train_s={p.train_s:.1f}",
                                              file=sys.stderr))
    a, b, r2 = B.affine_fit([p.lookback for p in points], [p.infer_us for p in points])
    out = _outdir(args.outdir)
    (out / "timings.csv").write_text(B.timings_csv(points))
    _manifest(out, "bench", None, started, {"intercept_us": a, "slope_us_per_step": b, "r2": r2,
                                            "batch_shape": [args.batch, ds.num_series], "horizon": args.horizon,
                                            "reps": args.reps, "warmup": args.warmup})
    print(B.timings_csv(points), end="")
    print(f"affine fit: infer_us = {a:.1f} + {b:.3f} L, R^2 = {r2:.4f}")
    return EXIT_OK


def cmd_lds(args) -> int:
    started = time.perf_counter()
    out = _outdir(args.outdir)
    status = EXIT_OK
    summary: dict = {"seed": args.seed}
    if args.verify_decay:
        params = lds.sample_lds(args.seed, gamma=args.gamma)
        roll = lds.rollout(params, args.steps, args.seed + 1, seasonality=False)
        ks = list(range(1, args.max_k + 1))
        curve = lds.decay_curve(params, roll, ks)
        lines = ["k,deviation,bound"] + [f"{k},{d!r},{b!r}" for k, d, b in zip(curve.ks, curve.deviation, curve.bound)]
        (out / "decay.csv").write_text("\n".join(lines) + "\n")
        ok = abs(curve.slope - np.log(curve.gamma)) <= 0.1 and curve.bound_ok
        summary["decay"] = {"gamma": curve.gamma, "slope": curve.slope, "log_gamma": float(np.log(curve.gamma)),
                            "bound_ok": bool(curve.bound_ok), "pass": bool(ok)}
        print(f"gamma {curve.gamma}  fitted slope {curve.slope:.4f}  ln(gamma) {np.log(curve.gamma):.4f}  "
              f"bound satisfied {curve.bound_ok}")
        status = max(status, EXIT_OK if ok else EXIT_CHECK)
    if args.make_dataset or args.fit_linear:
        data = lds.make_lds_dataset(args.seed)
        counts = data.example_counts()
        summary["counts"] = counts
        if args.make_dataset:
            write_csv(data.dataset, out / "lds.csv", out / "lds_covariates.csv")
            print(f"examples: train {counts['train']}, val {counts['val']}, test {counts['test']}")
        if args.fit_linear:
            fit = lds.fit_linear(data.dataset, data.split, data.lookback, data.horizon)
            rep = rolling_evaluate(fit.model(data.lookback, data.horizon), data.dataset, data.split, "test",
                                   data.lookback, data.horizon)
            summary["fit_linear"] = rep.to_dict() | {"penalty": fit.penalty, "val_mse": fit.val_mse}
            _write_json(out / "metrics.json", rep.to_dict())
            print(f"linear model: test mse {rep.mse:.4f} (penalty {fit.penalty:g}, val mse {fit.val_mse:.4f})")
    _write_json(out / "lds_summary.json", summary)
    _manifest(out, "lds", None, started, {"seed": args.seed})
    return status


_GRADCHECK_KEYS = {"seed": int, "eps": float, "min_margin": float}


def cmd_gradcheck(args) -> int:
    opts = {"seed": args.seed, "eps": 1e-5, "min_margin": 1e-3}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise _Fail(EXIT_CONFIG, f"config file not found: {path}")
        for key, value in parse_text(path.read_text()).items():
            if key not in _GRADCHECK_KEYS:
                raise _Fail(EXIT_CONFIG, f"unknown gradcheck key {key!r}")
            try:
                opts[key] = _GRADCHECK_KEYS[key](value)
            except ValueError:
                raise _Fail(EXIT_CONFIG, f"gradcheck key {key!r}: cannot parse {value!r}") from None
    errors = gradcheck_suite(**opts)
    worst = 0.0
    for name, err in errors.items():
        flag = "ok" if err < SUITE_TOLERANCE else "FAIL"
        print(f"{name:24s} {err:.3e} {flag}")
        worst = max(worst, err)
    return EXIT_OK if worst < SUITE_TOLERANCE else EXIT_CHECK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tidelab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, history and metrics")
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--preset", help="published hyper-parameters for a benchmark dataset")
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="wide CSV: timestamp column then one column per series")
    p.add_argument("--covariates", help="CSV of dynamic covariates on the same timestamps")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--outdir", default="out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rolling evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--covariates")
    p.add_argument("--segment", choices=("val", "test"), default="test")
    p.add_argument("--raw-scale", action="store_true", help="report in original units instead of normalized")
    p.add_argument("--leak-targets", action="store_true", help="score the targets themselves (pipeline check)")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="inference and training time across look-backs")
    p.add_argument("--lookbacks", default=",".join(str(v) for v in B.DEFAULT_LOOKBACKS))
    p.add_argument("--batch", type=int, default=8, help="time steps per batch (each covers every series)")
    p.add_argument("--horizon", type=int, default=96)
    p.add_argument("--preset", default="electricity")
    p.add_argument("--data", help="dataset CSV; default is a synthetic 321-series hourly panel")
    p.add_argument("--series", type=int, default=321)
    p.add_argument("--steps", type=int, default=26304)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--train-reps", type=int, default=20)
    p.add_argument("--train-warmup", type=int, default=3)
    p.add_argument("--micro-batch", type=int, default=642, help="gradient accumulation chunk for training steps")
    p.add_argument("--outdir", default="out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("lds", help="linear dynamical system experiments")
    p.add_argument("--verify-decay", action="store_true")
    p.add_argument("--make-dataset", action="store_true")
    p.add_argument("--fit-linear", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--steps", type=int, default=2000, help="roll-out length for --verify-decay")
    p.add_argument("--max-k", type=int, default=80)
    p.add_argument("--outdir", default="out")
    p.set_defaults(func=cmd_lds)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key = value file with seed, eps, min_margin")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "lds" and not (args.verify_decay or args.make_dataset or args.fit_linear):
        print("error: choose at least one of --verify-decay, --make-dataset, --fit-linear", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, IngestionError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
