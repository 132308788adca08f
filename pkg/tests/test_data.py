import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tidelab import _kernels
from tidelab.data import (
    ConfigurationError, Frequency, IngestionError, SplitSpec, TimeSeriesDataset, anchor_range, apply_scaler,
    build_batch, fit_scaler, inject_events, load_covariates, load_csv, make_batches, split, synthetic_hourly,
    time_features, window_count, with_time_features, write_csv,
)
from tidelab.tensor import ParameterError


def hourly(values, start="2020-01-01T00:00:00", stride=3600, cov=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    T = values.shape[1]
    ts = np.datetime64(start, "s") + np.arange(T) * np.timedelta64(stride, "s")
    return TimeSeriesDataset(values, ts, Frequency.from_seconds(stride), covariates=cov)


def write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- CSV


def test_load_minimal_csv(tmp_path):
    rows = ["date,OT"] + [f"2020-01-01 {h:02d}:00:00,{h * 1.5}" for h in range(10)]
    ds = load_csv(write(tmp_path / "a.csv", rows))
    assert (ds.num_series, ds.num_steps, ds.frequency) == (1, 10, Frequency.HOURLY)
    np.testing.assert_array_equal(ds.values[0], np.arange(10) * 1.5)
    assert ds.names == ["OT"]


def test_load_detects_15_minute_and_10_minute(tmp_path):
    for stride, freq in ((15, Frequency.MIN15), (10, Frequency.MIN10)):
        rows = ["date,a,b"] + [f"2020-01-01 00:{m * stride:02d}:00,1,2" for m in range(4)]
        assert load_csv(write(tmp_path / f"f{stride}.csv", rows)).frequency == freq


@pytest.mark.parametrize("bad,match", [
    ("2020-01-01 02:00:00,1,2,3", "row 4"),
    ("2020-01-01 02:00:00,1,x", "row 4"),
    ("2020-01-01 03:00:00,1,2", "row 4"),
    ("yesterday,1,2", "row 4"),
])
def test_load_errors_name_the_row(tmp_path, bad, match):
    rows = ["date,a,b", "2020-01-01 00:00:00,1,2", "2020-01-01 01:00:00,1,2", bad]
    with pytest.raises(IngestionError, match=match):
        load_csv(write(tmp_path / "bad.csv", rows))


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip_with_covariates(tmp_path):
    ds = with_time_features(synthetic_hourly(3, 50, seed=1))
    write_csv(ds, tmp_path / "v.csv", tmp_path / "c.csv")
    back = load_covariates(tmp_path / "c.csv", load_csv(tmp_path / "v.csv"))
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.covariates, ds.covariates)
    np.testing.assert_array_equal(back.timestamps, ds.timestamps)
    assert back.names == ds.names and back.covariate_names == ds.covariate_names


def test_dataset_rejects_uneven_timestamps():
    ts = np.array(["2020-01-01T00", "2020-01-01T01", "2020-01-01T03"], dtype="datetime64[s]")
    with pytest.raises(ConfigurationError):
        TimeSeriesDataset(np.zeros((1, 3)), ts, Frequency.HOURLY)


# ---------------------------------------------------------------- split


def test_split_examples():
    s = split(26304)
    assert (s.train_end, s.val_end) == (18412, 21043)
    assert (s.train_end, s.val_end) == (int(0.7 * 26304), int(0.8 * 26304))
    s = split(10)
    assert (s.train_end, s.val_end) == (7, 8)


def test_split_ratio_contract():
    split(100, (1 / 3, 1 / 3, 1 / 3))
    with pytest.raises(ParameterError):
        split(100, (0.3, 0.3, 0.3))
    with pytest.raises(ParameterError):
        split(100, (0.5, 0.5))


def test_split_too_short_for_window():
    with pytest.raises(ConfigurationError):
        split(100, lookback=60, horizon=20)


@given(st.integers(10, 10**6))
def test_split_floor_property(T):
    s = split(T)
    assert s.train_end == math.floor(7 * T / 10) and s.val_end == math.floor(8 * T / 10)


# ---------------------------------------------------------------- scaler


def test_constant_series_normalizes_to_zero():
    ds = hourly(np.full((1, 20), 7.0))
    out = apply_scaler(ds, fit_scaler(ds, split(ds)))
    np.testing.assert_array_equal(out.values, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_scaler_train_moments_and_round_trip(seed):
    rng = np.random.default_rng(seed)
    ds = hourly(rng.normal(rng.uniform(-100, 100), rng.uniform(0.1, 50), size=(3, 60)))
    spec = split(ds)
    sc = fit_scaler(ds, spec)
    z = sc.transform(ds.values)[:, : spec.train_end]
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=1), 1.0, atol=1e-8)
    np.testing.assert_allclose(sc.inverse(sc.transform(ds.values)), ds.values, atol=1e-10)


def test_scaler_no_leakage():
    rng = np.random.default_rng(0)
    ds = hourly(rng.normal(size=(4, 100)))
    spec = split(ds)
    a = fit_scaler(ds, spec)
    v = ds.values.copy()
    v[:, spec.train_end:] += rng.normal(0, 100, size=v[:, spec.train_end:].shape)
    b = fit_scaler(ds.with_values(v), spec)
    assert a.mean.tobytes() == b.mean.tobytes() and a.std.tobytes() == b.std.tobytes()


# ---------------------------------------------------------------- time features


def test_time_feature_endpoints_and_granularity():
    ts = np.datetime64("2021-03-01T00:00:00", "s") + np.arange(48) * np.timedelta64(3600, "s")
    tf = time_features(ts, Frequency.HOURLY)
    assert tf.shape == (48, 8)
    assert tf[0, 1] == -0.5 and tf[23, 1] == 0.5
    np.testing.assert_array_equal(tf[:, 0], -0.5)
    assert tf[0, 7] == -0.5 and tf[-1, 7] == 0.5


def test_time_feature_calendar_endpoints():
    ts = np.array(["2020-01-06T00:00", "2020-01-12T00:00", "2020-12-31T00:00", "2020-01-31T00:00"],
                  dtype="datetime64[s]")
    tf = time_features(ts)
    assert tf[0, 2] == -0.5 and tf[1, 2] == 0.5  # Monday, Sunday
    assert tf[2, 4] == 0.5  # day 366 of a leap year
    assert tf[2, 5] == 0.5 and tf[0, 5] == -0.5  # December, January
    assert tf[3, 3] == 0.5  # 31st of the month


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**8), st.sampled_from([600, 900, 3600]), st.integers(2, 3000))
def test_time_features_bounded(offset, stride, T):
    ts = np.datetime64("2000-01-01T00:00:00", "s") + offset * 60 + np.arange(T) * np.timedelta64(stride, "s")
    tf = time_features(ts)
    assert tf.min() >= -0.5 and tf.max() <= 0.5


def test_time_features_periodic():
    ts = np.datetime64("2019-05-05T00:00:00", "s") + np.arange(24 * 21) * np.timedelta64(3600, "s")
    tf = time_features(ts)
    np.testing.assert_array_equal(tf[:-24, 1], tf[24:, 1])
    np.testing.assert_array_equal(tf[:-168, 2], tf[168:, 2])


# ---------------------------------------------------------------- windows


def test_single_series_window_count():
    ds = hourly(np.arange(10.0))
    spec = SplitSpec(10, 12, 14)
    # train segment has 10 steps; L=3, H=2 -> 6 windows
    batches = list(make_batches(hourly(np.arange(14.0)), spec, "train", 3, 2, 4, np.random.default_rng(0)))
    assert sum(len(b) for b in batches) == 6 == window_count(spec, "train", 3, 2, 1)
    assert ds.num_steps == 10


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(40, 120), st.integers(1, 8), st.integers(1, 6), st.integers(1, 50))
def test_epoch_covers_every_pair_once(N, T, L, H, bs):
    ds = hourly(np.random.default_rng(0).normal(size=(N, T)))
    spec = split(ds)
    seen = Counter()
    for b in make_batches(ds, spec, "train", L, H, bs, np.random.default_rng(1)):
        assert len(b) <= bs
        seen.update(zip(b.series_index.tolist(), b.anchor_t.tolist()))
    assert sum(seen.values()) == N * (spec.train_end - L - H + 1) == window_count(spec, "train", L, H, N)
    assert max(seen.values()) == 1
    expected = {(i, t) for i in range(N) for t in range(L, spec.train_end - H + 1)}
    assert set(seen) == expected


def test_epoch_multiset_independent_of_batch_size():
    ds = hourly(np.zeros((3, 80)))
    spec = split(ds)

    def pairs(bs):
        return sorted((i, t) for b in make_batches(ds, spec, "train", 5, 3, bs, np.random.default_rng(bs))
                      for i, t in zip(b.series_index, b.anchor_t))

    assert pairs(1) == pairs(7) == pairs(512)


def test_epoch_order_deterministic_for_seed():
    ds = hourly(np.zeros((2, 60)))
    spec = split(ds)
    a = [b.anchor_t.tolist() for b in make_batches(ds, spec, "train", 4, 2, 5, np.random.default_rng(9))]
    b = [b.anchor_t.tolist() for b in make_batches(ds, spec, "train", 4, 2, 5, np.random.default_rng(9))]
    assert a == b


def test_window_integrity():
    rng = np.random.default_rng(0)
    ds = hourly(rng.normal(size=(3, 50)), cov=rng.normal(size=(50, 2)))
    spec = split(ds)
    for b in make_batches(ds, spec, "train", 6, 4, 7, rng):
        for row in range(len(b)):
            i, t = b.series_index[row], b.anchor_t[row]
            np.testing.assert_array_equal(np.r_[b.lookback[row], b.target[row]], ds.values[i, t - 6:t + 4])
            np.testing.assert_array_equal(b.covariates[row], ds.covariates[t - 6:t + 4])


def test_no_admissible_window_and_bad_batch_size():
    ds = hourly(np.zeros((1, 20)))
    spec = split(ds)
    with pytest.raises(ConfigurationError):
        list(make_batches(ds, spec, "train", 10, 5, 4))
    with pytest.raises(ConfigurationError):
        list(make_batches(ds, spec, "train", 2, 1, 0))


def test_eval_windows_may_cross_into_previous_segment():
    spec = SplitSpec(70, 80, 100)
    r = anchor_range(spec, "test", 24, 5)
    assert (r.start, r.stop - 1) == (80, 95)
    assert window_count(spec, "test", 24, 5, 2) == 2 * len(r)
    own = SplitSpec(70, 80, 100, eval_lookback_crosses=False)
    assert window_count(own, "test", 10, 5, 1) == 20 - 10 - 5 + 1
    assert window_count(SplitSpec(70, 80, 100, drop_last=True), "test", 24, 5, 1) == len(r) - 1


def test_batch_larger_than_series_count_mixes_series():
    ds = hourly(np.zeros((3, 100)))
    b = next(make_batches(ds, split(ds), "train", 4, 2, 512, np.random.default_rng(0)))
    assert set(b.series_index.tolist()) == {0, 1, 2}


def test_gather_kernel_paths_agree():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(5, 200))
    series, anchors = rng.integers(0, 5, 64), rng.integers(30, 190, 64)
    a = _kernels.gather_windows_numpy(values, series, anchors, 30, 10)
    b = _kernels.gather_windows_numba(values, series, anchors, 30, 10)
    np.testing.assert_array_equal(a, b)
    ds = hourly(values)
    np.testing.assert_array_equal(build_batch(ds, series, anchors, 30, 10).lookback, a[:, :30])


# ---------------------------------------------------------------- events


def test_zero_events_leave_values():
    base = synthetic_hourly(5, 500, seed=0)
    ds = inject_events(base, np.random.default_rng(0), events_per_type=0)
    np.testing.assert_array_equal(ds.values, base.values)
    assert ds.covariate_dim == base.covariate_dim + 8
    cov = ds.covariates[:, -8:]
    assert abs(cov.mean()) < 0.02
    assert abs(cov.var() - 0.1) < 0.01


def test_affected_fraction_over_seeds():
    base = synthetic_hourly(50, 100, seed=0)
    fr = [inject_events(base, np.random.default_rng(s), 0).events.affected.mean() for s in range(200)]
    assert abs(np.mean(fr) - 0.8) <= 0.02


def test_event_effects_and_spans():
    base = synthetic_hourly(10, 24 * 120, seed=2)
    ds = inject_events(base, np.random.default_rng(3), events_per_type=3)
    ev = ds.events
    assert len(ev.a_starts) + len(ev.b_starts) > 0
    assert ev.span == 24
    ratio = ds.values / base.values
    for s in ev.a_starts:
        seg = ratio[ev.affected, s:s + 24]
        assert ((seg >= 3.0) & (seg <= 3.2)).all()
        np.testing.assert_allclose(ds.covariates[s:s + 24, -8:-4].mean(axis=0), [1, 2, 2, 1], atol=0.4)
    for s in ev.b_starts:
        seg = ratio[ev.affected, s:s + 24]
        assert ((seg >= 1 / 2.2) & (seg <= 1 / 2.0)).all()
        np.testing.assert_allclose(ds.covariates[s:s + 24, -4:].mean(axis=0), [2, 1, 1, 2], atol=0.4)
    np.testing.assert_array_equal(ratio[~ev.affected], 1.0)
    # each event occupies exactly 24 consecutive steps and none overlap
    mask = ev.event_mask(ds.num_steps)
    assert mask.sum() == 24 * (len(ev.a_starts) + len(ev.b_starts))
    outside = ~mask
    np.testing.assert_array_equal(ratio[:, outside], 1.0)


def test_adjacent_mask_covers_event_and_following_span():
    base = synthetic_hourly(4, 24 * 40, seed=0)
    ds = inject_events(base, np.random.default_rng(1), events_per_type=2)
    m = ds.events.adjacent_mask(ds.num_steps)
    assert m.shape == (4, ds.num_steps)
    assert not m[~ds.events.affected].any()
