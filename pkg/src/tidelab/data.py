"""Benchmark ingestion, splits, scaling, calendar covariates and window batching."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from .tensor import ParameterError


class IngestionError(ValueError):
    """A dataset file is malformed; the message names the offending row."""


class ConfigurationError(ValueError):
    """Split or window settings are incompatible with the data."""


class Frequency(enum.Enum):
    MIN10 = 600
    MIN15 = 900
    HOURLY = 3600

    @property
    def seconds(self) -> int:
        return self.value

    @property
    def steps_per_hour(self) -> int:
        return 3600 // self.value

    @classmethod
    def from_seconds(cls, s: float) -> "Frequency":
        for f in cls:
            if f.value == s:
                return f
        raise IngestionError(f"unsupported sampling stride of {s} seconds (need 10 min, 15 min or 1 h)")


@dataclass
class EventLog:
    """Where :func:`inject_events` placed events and which series they hit."""

    affected: np.ndarray  # bool (N,)
    a_starts: np.ndarray  # step indices
    b_starts: np.ndarray
    span: int

    def event_mask(self, T: int) -> np.ndarray:
        m = np.zeros(T, dtype=bool)
        for s in np.concatenate([self.a_starts, self.b_starts]):
            m[s : s + self.span] = True
        return m

    def adjacent_mask(self, T: int) -> np.ndarray:
        """(N, T) mask of affected series during an event or the span right after it."""
        m = np.zeros(T, dtype=bool)
        for s in np.concatenate([self.a_starts, self.b_starts]):
            m[s : s + 2 * self.span] = True
        return self.affected[:, None] & m[None, :]


@dataclass
class TimeSeriesDataset:
    values: np.ndarray  # (N, T)
    timestamps: np.ndarray  # datetime64[s], (T,)
    frequency: Frequency
    covariates: np.ndarray | None = None  # (T, r)
    static: np.ndarray | None = None  # (N, s)
    names: list[str] = field(default_factory=list)
    covariate_names: list[str] = field(default_factory=list)
    events: EventLog | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ConfigurationError(f"values must be (N >= 1, T), got {self.values.shape}")
        N, T = self.values.shape
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        if self.timestamps.shape != (T,):
            raise ConfigurationError(f"{self.timestamps.shape[0]} timestamps for {T} steps")
        if T > 1:
            stride = np.diff(self.timestamps).astype(np.int64)
            if not np.all(stride == self.frequency.seconds):
                raise ConfigurationError("timestamps are not evenly spaced at the dataset frequency")
        if self.covariates is None:
            self.covariates = np.zeros((T, 0))
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        if self.covariates.shape[0] != T:
            raise ConfigurationError(f"covariates cover {self.covariates.shape[0]} steps, data has {T}")
        if self.static is None:
            self.static = np.zeros((N, 0))
        self.static = np.asarray(self.static, dtype=np.float64)
        if not self.names:
            self.names = [f"s{i}" for i in range(N)]
        if not self.covariate_names:
            self.covariate_names = [f"c{j}" for j in range(self.covariates.shape[1])]

    @property
    def num_series(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]

    @property
    def covariate_dim(self) -> int:
        return self.covariates.shape[1]

    @property
    def static_dim(self) -> int:
        return self.static.shape[1]

    def with_values(self, values) -> "TimeSeriesDataset":
        return replace(self, values=np.asarray(values, dtype=np.float64))

    def select_series(self, idx) -> "TimeSeriesDataset":
        idx = np.asarray(idx)
        ev = self.events
        if ev is not None:
            ev = replace(ev, affected=ev.affected[idx])
        return replace(
            self,
            values=self.values[idx],
            static=self.static[idx],
            names=[self.names[i] for i in idx],
            events=ev,
        )


# --------------------------------------------------------------------------
# CSV


def _parse_time(text: str, row: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise IngestionError(f"row {row}: cannot parse timestamp {text!r}") from None


def load_csv(path) -> TimeSeriesDataset:
    """Read a ``date,series1,series2,...`` file (one series per column)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if len(header) < 2:
            raise IngestionError(f"{path}: header needs a date column and at least one series")
        width = len(header)
        stamps: list[datetime] = []
        rows: list[list[float]] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise IngestionError(f"row {lineno}: expected {width} fields, found {len(rec)}")
            stamps.append(_parse_time(rec[0], lineno))
            try:
                rows.append([float(c) for c in rec[1:]])
            except ValueError:
                bad = next(c for c in rec[1:] if not _is_float(c))
                raise IngestionError(f"row {lineno}: non-numeric value {bad!r}") from None
    if len(stamps) < 2:
        raise IngestionError(f"{path}: need at least two rows to infer the frequency")
    stride = (stamps[1] - stamps[0]).total_seconds()
    freq = Frequency.from_seconds(stride)
    step = timedelta(seconds=stride)
    for i in range(2, len(stamps)):
        if stamps[i] - stamps[i - 1] != step:
            raise IngestionError(f"row {i + 2}: stride {stamps[i] - stamps[i - 1]} differs from {step}")
    values = np.asarray(rows, dtype=np.float64).T
    if not np.all(np.isfinite(values)):
        r = int(np.argwhere(~np.isfinite(values))[0, 1]) + 2
        raise IngestionError(f"row {r}: non-finite value")
    ts = np.array(stamps, dtype="datetime64[s]")
    return TimeSeriesDataset(values, ts, freq, names=[h.strip() for h in header[1:]])


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _write_table(path, header, stamps, columns) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(len(stamps)):
            w.writerow([str(stamps[t]).replace("T", " ")] + [repr(float(c[t])) for c in columns])


def write_csv(dataset: TimeSeriesDataset, path, covariate_path=None) -> None:
    """Write values in the ingestion layout; covariates go to a sidecar file."""
    _write_table(path, ["date", *dataset.names], dataset.timestamps, list(dataset.values))
    if covariate_path is not None:
        _write_table(covariate_path, ["date", *dataset.covariate_names], dataset.timestamps,
                     list(dataset.covariates.T))


def load_covariates(path, dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    side = load_csv(path)
    if side.num_steps != dataset.num_steps or np.any(side.timestamps != dataset.timestamps):
        raise IngestionError(f"{path}: covariate timestamps do not match the dataset")
    return replace(dataset, covariates=side.values.T.copy(), covariate_names=side.names)


# --------------------------------------------------------------------------
# splits and scaling


@dataclass(frozen=True)
class SplitSpec:
    """Segment boundaries plus the windowing convention for each segment.

    ``eval_lookback_crosses``: validation/test look-backs may start in the
    preceding segment (only the horizon must lie inside).  ``drop_last``:
    leave out the final anchor of every segment, as loaders iterating over
    ``range(T_seg - L - H)`` do.
    """

    train_end: int
    val_end: int
    num_steps: int
    eval_lookback_crosses: bool = True
    drop_last: bool = False

    def bounds(self, segment: str) -> tuple[int, int]:
        if segment == "train":
            return 0, self.train_end
        if segment == "val":
            return self.train_end, self.val_end
        if segment == "test":
            return self.val_end, self.num_steps
        raise ConfigurationError(f"unknown segment {segment!r}")


def split(dataset_or_steps, ratios: Sequence[float] = (0.7, 0.1, 0.2),
          lookback: int | None = None, horizon: int | None = None) -> SplitSpec:
    """Chronological split at ``floor(r0 T)`` and ``floor((r0 + r1) T)``."""
    T = dataset_or_steps if isinstance(dataset_or_steps, int) else dataset_or_steps.num_steps
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ParameterError(f"ratios must be three positive numbers, got {ratios}")
    fr = [Fraction(repr(float(r))) for r in ratios]
    if abs(float(sum(fr)) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must sum to 1, got {sum(ratios)}")
    train_end = math.floor(fr[0] * T)
    val_end = math.floor((fr[0] + fr[1]) * T)
    if not 0 < train_end < val_end < T:
        raise ConfigurationError(f"{T} steps are too few to split by {ratios}")
    if lookback is not None and horizon is not None:
        need = lookback + horizon
        if train_end < need:
            raise ConfigurationError(f"training segment of {train_end} steps is shorter than L+H={need}")
        if val_end - train_end < horizon or T - val_end < horizon:
            raise ConfigurationError(f"validation/test segments are shorter than the horizon {horizon}")
    return SplitSpec(train_end, val_end, T)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]


SCALER_EPS = 1e-8


def fit_scaler(dataset: TimeSeriesDataset, spec: SplitSpec) -> Scaler:
    """Per-series mean and (population) std over the training steps only."""
    train = dataset.values[:, : spec.train_end]
    if train.shape[1] == 0:
        raise ConfigurationError("empty training segment")
    return Scaler(train.mean(axis=1), np.maximum(train.std(axis=1), SCALER_EPS))


def apply_scaler(dataset: TimeSeriesDataset, scaler: Scaler) -> TimeSeriesDataset:
    return dataset.with_values(scaler.transform(dataset.values))


# --------------------------------------------------------------------------
# calendar covariates

TIME_FEATURE_NAMES = [
    "minute_of_hour",
    "hour_of_day",
    "day_of_week",
    "day_of_month",
    "day_of_year",
    "month_of_year",
    "week_of_year",
    "age",
]


def time_features(timestamps, frequency: Frequency | None = None) -> np.ndarray:
    """Eight calendar features per step, each scaled as value/(cardinality-1) - 0.5.

    Features finer than the sampling stride come out constant.  ``age`` is the
    step index rescaled to [-0.5, 0.5] over the span of ``timestamps``.
    """
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    T = ts.shape[0]
    minutes = ts.astype("datetime64[m]")
    hours = ts.astype("datetime64[h]")
    days = ts.astype("datetime64[D]")
    months = ts.astype("datetime64[M]")
    years = ts.astype("datetime64[Y]")
    minute = (minutes - hours).astype(np.int64)
    hour = (hours - days).astype(np.int64)
    dow = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    dom = (days - months).astype(np.int64)
    doy = (days - years).astype(np.int64)
    month = (months - years).astype(np.int64)
    week = np.fromiter((d.isocalendar()[1] - 1 for d in days.astype(object)), dtype=np.int64, count=T)
    age = np.arange(T, dtype=np.float64)
    raw = [
        (minute, 60),
        (hour, 24),
        (dow, 7),
        (dom, 31),
        (doy, 366),
        (month, 12),
        (week, 53),
        (age, max(T, 2)),
    ]
    return np.stack([v / (card - 1.0) - 0.5 for v, card in raw], axis=1)


def with_time_features(dataset: TimeSeriesDataset) -> TimeSeriesDataset:
    """Prepend the calendar features to any existing covariates."""
    tf = time_features(dataset.timestamps, dataset.frequency)
    cov = np.concatenate([tf, dataset.covariates], axis=1)
    return replace(dataset, covariates=cov, covariate_names=TIME_FEATURE_NAMES + dataset.covariate_names)


# --------------------------------------------------------------------------
# windows


@dataclass
class WindowBatch:
    lookback: np.ndarray  # (B, L)
    target: np.ndarray  # (B, H)
    covariates: np.ndarray  # (B, L+H, r)
    static: np.ndarray  # (B, s)
    series_index: np.ndarray  # (B,)
    anchor_t: np.ndarray  # (B,) first horizon step

    def __len__(self) -> int:
        return self.lookback.shape[0]


def anchor_range(spec: SplitSpec, segment: str, lookback: int, horizon: int) -> range:
    """Admissible horizon start steps.

    Training windows stay inside the training segment.  Validation and test
    windows keep their horizon inside the segment and, by default, may read
    their look-back from the steps before it.
    """
    lo, hi = spec.bounds(segment)
    if segment == "train" or not spec.eval_lookback_crosses:
        first = lo + lookback
    else:
        first = max(lo, lookback)
    last = hi - horizon - (1 if spec.drop_last else 0)
    return range(first, last + 1)


def window_count(spec: SplitSpec, segment: str, lookback: int, horizon: int, num_series: int) -> int:
    """Closed form: N * (T_seg - L - H + 1) for self-contained segments.

    When evaluation look-backs may cross into the previous segment the
    per-series count is ``T_seg - H + 1`` (capped by the start of the data);
    ``drop_last`` removes one window per series.
    """
    lo, hi = spec.bounds(segment)
    if segment == "train" or not spec.eval_lookback_crosses:
        per = (hi - lo) - lookback - horizon + 1
    else:
        per = hi - horizon - max(lo, lookback) + 1
    if spec.drop_last:
        per -= 1
    return num_series * max(per, 0)


def build_batch(dataset: TimeSeriesDataset, series, anchors, lookback: int, horizon: int) -> WindowBatch:
    series = np.ascontiguousarray(series, dtype=np.int64)
    anchors = np.ascontiguousarray(anchors, dtype=np.int64)
    win = _kernels.gather_windows(dataset.values, series, anchors, lookback, horizon)
    offs = np.arange(-lookback, horizon)
    cov = dataset.covariates[anchors[:, None] + offs[None, :]]
    return WindowBatch(
        lookback=win[:, :lookback],
        target=win[:, lookback:],
        covariates=cov,
        static=dataset.static[series],
        series_index=series,
        anchor_t=anchors,
    )


def enumerate_windows(dataset, spec, segment, lookback, horizon) -> tuple[np.ndarray, np.ndarray]:
    anchors = np.asarray(anchor_range(spec, segment, lookback, horizon), dtype=np.int64)
    if anchors.size == 0:
        raise ConfigurationError(f"no admissible (L={lookback}, H={horizon}) window in the {segment} segment")
    N = dataset.num_series
    series = np.repeat(np.arange(N, dtype=np.int64), anchors.size)
    return series, np.tile(anchors, N)


def make_batches(dataset: TimeSeriesDataset, spec: SplitSpec, segment: str, lookback: int, horizon: int,
                 batch_size: int, rng: np.random.Generator | None = None) -> Iterator[WindowBatch]:
    """One epoch over every (series, anchor) pair, shuffled by ``rng`` when given."""
    if batch_size < 1:
        raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
    series, anchors = enumerate_windows(dataset, spec, segment, lookback, horizon)
    order = rng.permutation(series.size) if rng is not None else np.arange(series.size)
    for start in range(0, order.size, batch_size):
        sel = order[start : start + batch_size]
        yield build_batch(dataset, series[sel], anchors[sel], lookback, horizon)


def batches_per_epoch(dataset, spec, segment, lookback, horizon, batch_size) -> int:
    n = window_count(spec, segment, lookback, horizon, dataset.num_series)
    return -(-n // batch_size)


# --------------------------------------------------------------------------
# semi-synthetic events

TYPE_A_MEAN = np.array([1.0, 2.0, 2.0, 1.0])
TYPE_B_MEAN = np.array([2.0, 1.0, 1.0, 2.0])
EVENT_COV_VAR = 0.1


def _place_events(T: int, span: int, count: int, rng: np.random.Generator, taken: np.ndarray) -> list[int]:
    starts = []
    for _ in range(count):
        for _attempt in range(1000):
            s = int(rng.integers(0, T - span + 1))
            if not taken[max(0, s - span) : s + 2 * span].any():
                taken[s : s + span] = True
                starts.append(s)
                break
    return sorted(starts)


def inject_events(dataset: TimeSeriesDataset, rng: np.random.Generator, events_per_type: float | None = None,
                  affected_fraction: float = 0.8) -> TimeSeriesDataset:
    """Add two kinds of 24-hour events and eight noisy covariates flagging them.

    A random 80% of series is affected.  Type-A events multiply affected values
    by U[3, 3.2]; Type-B events divide them by U[2, 2.2].  Four covariates per
    type are Gaussian with variance 0.1, centred on the type's mean vector
    during its events and on zero otherwise.  Event counts per type are Poisson
    with mean ``events_per_type`` (default: one per 30 days); events never
    overlap and are separated by at least one event span.
    """
    N, T = dataset.values.shape
    span = 24 * dataset.frequency.steps_per_hour
    if events_per_type is None:
        events_per_type = T / (30 * 24 * dataset.frequency.steps_per_hour)
    n_affected = int(round(affected_fraction * N))
    affected = np.zeros(N, dtype=bool)
    affected[rng.choice(N, size=n_affected, replace=False)] = True

    taken = np.zeros(T, dtype=bool)
    a_starts = _place_events(T, span, int(rng.poisson(events_per_type)), rng, taken)
    b_starts = _place_events(T, span, int(rng.poisson(events_per_type)), rng, taken)

    values = dataset.values.copy()
    sd = math.sqrt(EVENT_COV_VAR)
    cov_a = rng.normal(0.0, sd, size=(T, 4))
    cov_b = rng.normal(0.0, sd, size=(T, 4))
    for s in a_starts:
        values[affected, s : s + span] *= rng.uniform(3.0, 3.2, size=(n_affected, 1))
        cov_a[s : s + span] += TYPE_A_MEAN
    for s in b_starts:
        values[affected, s : s + span] /= rng.uniform(2.0, 2.2, size=(n_affected, 1))
        cov_b[s : s + span] += TYPE_B_MEAN
    cov = np.concatenate([dataset.covariates, cov_a, cov_b], axis=1)
    names = dataset.covariate_names + [f"event_a{j}" for j in range(4)] + [f"event_b{j}" for j in range(4)]
    log = EventLog(affected, np.asarray(a_starts, dtype=np.int64), np.asarray(b_starts, dtype=np.int64), span)
    return replace(dataset, values=values, covariates=cov, covariate_names=names, events=log)


# --------------------------------------------------------------------------
# synthetic stand-in for the hourly benchmark files


def synthetic_hourly(num_series: int, num_steps: int, seed: int = 0,
                     start: str = "2016-07-01T00:00:00") -> TimeSeriesDataset:
    """Positive hourly load-like series with daily and weekly cycles plus AR(1) noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(num_steps)
    level = rng.uniform(50, 500, size=(num_series, 1))
    amp_d = rng.uniform(0.1, 0.4, size=(num_series, 1))
    amp_w = rng.uniform(0.05, 0.2, size=(num_series, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(num_series, 1))
    daily = np.sin(2 * np.pi * t / 24 + phase)
    weekly = np.sin(2 * np.pi * t / 168 + phase / 3)
    eps = rng.normal(0, 0.05, size=(num_series, num_steps))
    noise = np.empty_like(eps)
    noise[:, 0] = eps[:, 0]
    for k in range(1, num_steps):
        noise[:, k] = 0.9 * noise[:, k - 1] + eps[:, k]
    values = level * (1.0 + amp_d * daily + amp_w * weekly + noise)
    ts = np.datetime64(start, "s") + np.arange(num_steps) * np.timedelta64(3600, "s")
    return TimeSeriesDataset(np.maximum(values, 1.0), ts, Frequency.HOURLY,
                             names=[f"MT_{i + 1:03d}" for i in range(num_series)])
