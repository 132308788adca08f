"""Metrics, rolling evaluation, the training loop and ablations."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .data import (
    ConfigurationError,
    SplitSpec,
    TimeSeriesDataset,
    WindowBatch,
    build_batch,
    enumerate_windows,
    make_batches,
    window_count,
)
from .model import ModelConfig, TiDEModel, TiDEParams, forward, init_params
from .optim import AdamState, ScheduleConfig, adam_update, cosine_lr
from .tensor import DimensionError

log = logging.getLogger(__name__)


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mae: prediction {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred - target)))


@dataclass
class MetricsReport:
    mse: float
    mae: float
    window_count: int
    per_step: np.ndarray  # MSE at each horizon step
    cells: int = 0  # scored (window, step) pairs; < window_count * H when masked

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "window_count": self.window_count,
            "per_step": [float(v) for v in self.per_step],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


Predictor = Callable[[WindowBatch], np.ndarray]


def rolling_evaluate(model: Predictor, dataset: TimeSeriesDataset, spec: SplitSpec, segment: str,
                     lookback: int, horizon: int, batch_size: int = 1024,
                     mask: np.ndarray | None = None) -> MetricsReport:
    """Score ``model`` on every stride-1 window whose horizon lies in ``segment``.

    ``mask`` is an optional (N, T) boolean array; only target cells where it is
    true are scored.  Sums are accumulated in window order, so the result does
    not depend on ``batch_size``.
    """
    if segment not in ("val", "test", "train"):
        raise ConfigurationError(f"unknown segment {segment!r}")
    series, anchors = enumerate_windows(dataset, spec, segment, lookback, horizon)
    sq = np.zeros(horizon)
    ab = np.zeros(horizon)
    cnt = np.zeros(horizon)
    offs = np.arange(horizon)
    for start in range(0, series.size, batch_size):
        s, a = series[start : start + batch_size], anchors[start : start + batch_size]
        batch = build_batch(dataset, s, a, lookback, horizon)
        pred = np.asarray(model(batch), dtype=np.float64)
        if pred.shape != batch.target.shape:
            raise DimensionError(f"model returned {pred.shape}, expected {batch.target.shape}")
        err = pred - batch.target
        if mask is not None:
            w = mask[s[:, None], a[:, None] + offs[None, :]].astype(np.float64)
        else:
            w = np.ones_like(err)
        sq += (w * err * err).sum(axis=0)
        ab += (w * np.abs(err)).sum(axis=0)
        cnt += w.sum(axis=0)
    n = cnt.sum()
    if n == 0:
        raise ConfigurationError("the mask selects no target cells")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_step = np.where(cnt > 0, sq / np.maximum(cnt, 1), np.nan)
    return MetricsReport(float(sq.sum() / n), float(ab.sum() / n), int(series.size), per_step, int(n))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 512
    seed: int = 0
    learning_rate: float = 1e-3
    max_batches_per_epoch: int | None = None
    eval_batch_size: int = 1024

    def __post_init__(self):
        for name in ("max_epochs", "patience", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.patience > self.max_epochs:
            raise ConfigurationError("patience may not exceed max_epochs")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float


@dataclass
class TrainResult:
    params: TiDEParams
    config: ModelConfig
    history: list[EpochRecord]
    best_epoch: int
    steps: int

    @property
    def model(self) -> TiDEModel:
        return TiDEModel(self.config, self.params)

    def history_csv(self) -> str:
        lines = ["epoch,train_mse,val_mse,lr"]
        lines += [f"{r.epoch},{r.train_mse!r},{r.val_mse!r},{r.lr!r}" for r in self.history]
        return "\n".join(lines) + "\n"


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def _streams(seed: int):
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(drop)


def train_loop(cfg: ModelConfig, tcfg: TrainConfig, dataset: TimeSeriesDataset, spec: SplitSpec,
               params: TiDEParams | None = None, on_epoch: Callable[[EpochRecord], None] | None = None
               ) -> TrainResult:
    """Mini-batch Adam on MSE with cosine decay and early stopping on validation MSE.

    Returns the parameters from the epoch with the lowest validation MSE.
    """
    L, H = cfg.lookback, cfg.horizon
    if not cfg.linear_only and dataset.covariate_dim != cfg.covariate_dim:
        raise ConfigurationError(f"dataset has {dataset.covariate_dim} covariates, model expects {cfg.covariate_dim}")
    if not cfg.linear_only and dataset.static_dim != cfg.static_dim:
        raise ConfigurationError(f"dataset has {dataset.static_dim} static features, model expects {cfg.static_dim}")
    if cfg.revin and cfg.num_series < dataset.num_series:
        raise ConfigurationError(f"RevIN affine sized for {cfg.num_series} series, dataset has {dataset.num_series}")
    n_windows = window_count(spec, "train", L, H, dataset.num_series)
    if n_windows < 1:
        raise ConfigurationError("no admissible training window")
    per_epoch = -(-n_windows // tcfg.batch_size)
    if tcfg.max_batches_per_epoch is not None:
        per_epoch = min(per_epoch, tcfg.max_batches_per_epoch)
    sched = ScheduleConfig(tcfg.learning_rate, tcfg.max_epochs * per_epoch)

    init_rng, shuffle_rng, drop_rng = _streams(tcfg.seed)
    if params is None:
        params = init_params(cfg, init_rng)
    named = params.named_parameters()
    state = AdamState()
    model = TiDEModel(cfg, params)

    history: list[EpochRecord] = []
    best_val, best_epoch, best_params = math.inf, 0, params.copy()
    step = 0
    lr = sched.max_lr
    for epoch in range(1, tcfg.max_epochs + 1):
        total, count = 0.0, 0
        for b, batch in enumerate(make_batches(dataset, spec, "train", L, H, tcfg.batch_size, shuffle_rng)):
            if b >= per_epoch:
                break
            lr = cosine_lr(step, sched)
            with T.Tape() as tape:
                pred = forward(batch, params, cfg, training=True, rng=drop_rng)
                loss = T.mse_loss(pred, batch.target)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}, step {step}",
                    {"epoch": epoch, "step": step, "lr": lr, "history": list(history),
                     "params": {k: v.data.copy() for k, v in best_params.named_parameters().items()}},
                )
            grads = T.backprop(tape, loss, named)
            adam_update(named, grads, state, lr)
            total += value * len(batch)
            count += len(batch)
            step += 1
        val = rolling_evaluate(model, dataset, spec, "val", L, H, tcfg.eval_batch_size).mse
        rec = EpochRecord(epoch, total / max(count, 1), val, lr)
        history.append(rec)
        log.info("epoch %d train_mse %.6f val_mse %.6f lr %.3g", epoch, rec.train_mse, val, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if val < best_val:
            best_val, best_epoch, best_params = val, epoch, params.copy()
        elif epoch - best_epoch >= tcfg.patience:
            break
    return TrainResult(best_params, cfg, history, best_epoch, step)


# --------------------------------------------------------------------------
# ablations

VARIANTS = ("full", "no_temporal_decoder", "no_residuals", "linear")


def variant_config(cfg: ModelConfig, variant: str) -> ModelConfig:
    if variant == "full":
        return cfg
    if variant == "no_temporal_decoder":
        return replace(cfg, temporal_decoder=False)
    if variant == "no_residuals":
        return replace(cfg, residual=False)
    if variant == "linear":
        return replace(cfg, linear_only=True)
    raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")


@dataclass
class AblationResult:
    variant: str
    full: MetricsReport
    ablated: MetricsReport
    full_train: TrainResult = field(repr=False)
    ablated_train: TrainResult = field(repr=False)


def ablate(variant: str, cfg: ModelConfig, tcfg: TrainConfig, dataset: TimeSeriesDataset, spec: SplitSpec,
           segment: str = "test", mask: np.ndarray | None = None) -> AblationResult:
    """Train the full model and ``variant`` with identical seed and budget; score both."""
    vcfg = variant_config(cfg, variant)
    full_run = train_loop(cfg, tcfg, dataset, spec)
    full_rep = rolling_evaluate(full_run.model, dataset, spec, segment, cfg.lookback, cfg.horizon,
                                tcfg.eval_batch_size, mask)
    if variant == "full":
        return AblationResult(variant, full_rep, full_rep, full_run, full_run)
    var_run = train_loop(vcfg, tcfg, dataset, spec)
    var_rep = rolling_evaluate(var_run.model, dataset, spec, segment, cfg.lookback, cfg.horizon,
                               tcfg.eval_batch_size, mask)
    return AblationResult(variant, full_rep, var_rep, full_run, var_run)
