import numpy as np
import pytest

from tidelab import bench
from tidelab.data import synthetic_hourly, with_time_features
from tidelab.model import ModelConfig, TiDEModel
from tidelab.optim import AdamState


def test_affine_fit_exact_line():
    a, b, r2 = bench.affine_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert (a, b, r2) == pytest.approx((1.0, 2.0, 1.0))
    assert bench.affine_fit([1, 2, 3], [5, 5, 5])[2] == 1.0


def test_median_time_counts_calls():
    calls = []
    t = bench.median_time(lambda: calls.append(1), reps=5, warmup=2)
    assert len(calls) == 7 and t >= 0
    with pytest.raises(ValueError):
        bench.median_time(lambda: None, reps=0)


def test_timing_batch_shape():
    ds = with_time_features(synthetic_hourly(5, 300))
    b = bench.timing_batch(ds, 48, 24, steps=8)
    assert b.lookback.shape == (40, 48) and b.covariates.shape == (40, 72, 8)
    assert sorted(set(b.series_index.tolist())) == list(range(5))


def test_micro_batching_matches_full_batch_step():
    ds = with_time_features(synthetic_hourly(3, 200))
    cfg = ModelConfig(lookback=16, horizon=4, covariate_dim=8, temporal_width=4, hidden_size=8)
    batch = bench.timing_batch(ds, 16, 4, steps=7)
    models = [TiDEModel(cfg, seed=0) for _ in range(2)]
    losses = [bench.train_step(m, batch, AdamState(), 1e-2, np.random.default_rng(0), mb)
              for m, mb in zip(models, (None, 5))]
    assert losses[0] == pytest.approx(losses[1], rel=1e-12)
    a, b = models[0].named_parameters(), models[1].named_parameters()
    for k in a:
        np.testing.assert_allclose(a[k].data, b[k].data, rtol=1e-9, atol=1e-12)


def test_sweep_reports_every_lookback():
    ds = with_time_features(synthetic_hourly(2, 800))
    pts = bench.sweep(ds, (24, 48), horizon=96, steps=2, reps=2, warmup=0, train_reps=1, train_warmup=0)
    assert [p.lookback for p in pts] == [24, 48]
    assert all(p.infer_us > 0 and p.train_s > 0 and p.batches_per_epoch >= 1 for p in pts)
    assert bench.timings_csv(pts).splitlines()[0] == "L,infer_us,train_s"
    with pytest.raises(ValueError):
        bench.sweep(ds, (2000,), horizon=96)
