"""Wall-clock timing of inference and training across look-back lengths."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import presets
from . import tensor as T
from .data import SplitSpec, TimeSeriesDataset, WindowBatch, build_batch, window_count
from .model import ModelConfig, TiDEModel
from .optim import AdamState, adam_update

DEFAULT_LOOKBACKS = (192, 336, 720, 1440, 2880)


@dataclass
class TimingPoint:
    lookback: int
    infer_us: float  # median inference time per batch
    train_s: float  # estimated time of one training epoch
    step_s: float  # median time of one training step
    batches_per_epoch: int


def median_time(fn, reps: int = 20, warmup: int = 3) -> float:
    """Median wall time of ``fn()`` in seconds over ``reps`` calls after ``warmup`` calls."""
    if reps < 1 or warmup < 0:
        raise ValueError("reps must be >= 1 and warmup >= 0")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _slice(batch: WindowBatch, sl: slice) -> WindowBatch:
    return WindowBatch(
        batch.lookback[sl], batch.target[sl],
        None if batch.covariates is None else batch.covariates[sl],
        None if batch.static is None else batch.static[sl],
        batch.series_index[sl], batch.anchor_t[sl],
    )


def train_step(model: TiDEModel, batch: WindowBatch, state: AdamState, lr: float,
               rng: np.random.Generator, micro_batch: int | None = None) -> float:
    """One Adam step on the batch MSE, accumulating gradients over micro-batches."""
    named = model.named_parameters()
    n = len(batch)
    chunk = n if micro_batch is None else max(1, micro_batch)
    grads = {k: np.zeros_like(v.data) for k, v in named.items()}
    total = 0.0
    for start in range(0, n, chunk):
        part = _slice(batch, slice(start, start + chunk))
        w = len(part) / n
        with T.Tape() as tape:
            loss = T.mse_loss(model.forward(part, training=True, rng=rng), part.target)
        for k, g in T.backprop(tape, loss, named).items():
            grads[k] += w * g
        total += w * float(loss.data)
    adam_update(named, grads, state, lr)
    return total


def bench_config(lookback: int, horizon: int, dataset: TimeSeriesDataset, preset: str = "electricity") -> ModelConfig:
    return presets.preset_model_config(preset, horizon, num_series=dataset.num_series,
                                       covariate_dim=dataset.covariate_dim, lookback=lookback)


def timing_batch(dataset: TimeSeriesDataset, lookback: int, horizon: int, steps: int = 8) -> WindowBatch:
    """``steps`` consecutive anchors for every series: a steps x N x L batch."""
    N = dataset.num_series
    series = np.repeat(np.arange(N), steps)
    anchors = np.tile(np.arange(lookback, lookback + steps), N)
    return build_batch(dataset, series, anchors, lookback, horizon)


def sweep(dataset: TimeSeriesDataset, lookbacks=DEFAULT_LOOKBACKS, horizon: int = 96, steps: int = 8,
          preset: str = "electricity", reps: int = 20, warmup: int = 3, train_reps: int = 20,
          train_warmup: int = 3, micro_batch: int | None = 642, seed: int = 0, spec: SplitSpec | None = None,
          progress=None) -> list[TimingPoint]:
    """Time inference and training for every look-back in ``lookbacks``.

    Epoch time is the median step time times the number of batches in an epoch
    of the training segment (``spec`` defaults to the 7:1:2 split).
    """
    from .data import split

    spec = spec or split(dataset)
    out = []
    for L in lookbacks:
        if L + horizon + steps > dataset.num_steps:
            raise ValueError(f"look-back {L} does not fit in {dataset.num_steps} steps")
        cfg = bench_config(L, horizon, dataset, preset)
        model = TiDEModel(cfg, seed=seed)
        batch = timing_batch(dataset, L, horizon, steps)
        infer = median_time(lambda: model(batch), reps, warmup)
        state, rng = AdamState(), np.random.default_rng(seed)
        step = median_time(lambda: train_step(model, batch, state, 1e-6, rng, micro_batch), train_reps, train_warmup)
        per_epoch = -(-window_count(spec, "train", L, horizon, dataset.num_series) // len(batch))
        point = TimingPoint(L, infer * 1e6, step * per_epoch, step, per_epoch)
        out.append(point)
        if progress is not None:
            progress(point)
    return out


def affine_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y ~ a + b x``; returns (a, b, R^2)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    X = np.c_[np.ones_like(x), x]
    (a, b), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - (a + b * x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def timings_csv(points: list[TimingPoint]) -> str:
    lines = ["L,infer_us,train_s"]
    lines += [f"{p.lookback},{p.infer_us:.1f},{p.train_s:.3f}" for p in points]
    return "\n".join(lines) + "\n"
