import numpy as np
import pytest

from tidelab import checkpoint
from tidelab.checkpoint import CheckpointError
from tidelab.model import ModelConfig, TiDEModel

CFG = ModelConfig(lookback=10, horizon=4, covariate_dim=3, temporal_width=2, hidden_size=6,
                  num_encoder_layers=2, revin=True, num_series=3)


def test_round_trip_is_lossless(tmp_path):
    model = TiDEModel(CFG, seed=4)
    for t in model.named_parameters().values():
        t.data += np.random.default_rng(0).normal(size=t.shape) * np.pi
    checkpoint.save(model, tmp_path / "m.bin", meta={"note": "x"})
    back, meta = checkpoint.load(tmp_path / "m.bin")
    assert back.config == CFG and meta == {"note": "x"}
    a, b = model.named_parameters(), back.named_parameters()
    assert list(a) == list(b)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()


def test_documented_names():
    names = set(TiDEModel(CFG).named_parameters())
    for expected in ("feature_projection.W1", "encoder.block0.W1", "encoder.block1.ln_gain",
                     "decoder.block0.W_skip", "temporal_decoder.W2", "global_residual.W", "revin.gain"):
        assert expected in names


def test_corruption_is_detected():
    blob = checkpoint.dumps(TiDEModel(CFG))
    with pytest.raises(CheckpointError):
        checkpoint.loads(b"NOTTIDE!" + blob[8:])
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:-8])
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob + b"\0")
    with pytest.raises(CheckpointError):
        checkpoint.loads(blob[:10])
    bad_version = blob[:8] + (99).to_bytes(4, "little") + blob[12:]
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.loads(bad_version)
