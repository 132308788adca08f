import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tidelab import tensor as T
from tidelab.data import WindowBatch
from tidelab.gradcheck import SUITE_TOLERANCE, finite_diff_gradcheck, gradcheck_suite
from tidelab.model import (
    ModelConfig, ResidualBlock, TiDEModel, decode, encode, forward, global_residual, init_params,
    param_count, project_features, residual_block, revin_denormalize, revin_normalize, temporal_decode,
)
from tidelab.tensor import ContractError, DimensionError, ParameterError, Tensor


def make_batch(cfg, B=3, seed=0):
    rng = np.random.default_rng(seed)
    return WindowBatch(
        lookback=rng.normal(size=(B, cfg.lookback)),
        target=rng.normal(size=(B, cfg.horizon)),
        covariates=rng.normal(size=(B, cfg.lookback + cfg.horizon, cfg.covariate_dim)),
        static=rng.normal(size=(B, cfg.static_dim)),
        series_index=np.arange(B) % cfg.num_series,
        anchor_t=np.arange(B),
    )


SMALL = ModelConfig(lookback=8, horizon=4, covariate_dim=3, temporal_width=2, hidden_size=6,
                    num_encoder_layers=2, num_decoder_layers=2, decoder_output_dim=3,
                    temporal_decoder_hidden=5, static_dim=2, num_series=3)


def zero_block(blk):
    for t in (blk.W1, blk.b1, blk.W2, blk.b2, blk.W_skip, blk.b_skip):
        if t is not None:
            t.data[...] = 0.0


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ParameterError):
        ModelConfig(lookback=0, horizon=1)
    with pytest.raises(ParameterError):
        ModelConfig(lookback=4, horizon=2, covariate_dim=2, temporal_width=3)
    with pytest.raises(ParameterError):
        ModelConfig(lookback=4, horizon=2, covariate_dim=0, temporal_width=1)
    with pytest.raises(ParameterError):
        ModelConfig(lookback=4, horizon=2, dropout=1.0)
    with pytest.raises(ParameterError):
        ModelConfig(lookback=4, horizon=2, linear_only=True, residual=False)
    assert ModelConfig(lookback=4, horizon=2, covariate_dim=0, temporal_width=0).encoder_input_dim == 4


def test_config_dict_round_trip():
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL
    with pytest.raises(ParameterError):
        ModelConfig.from_dict(SMALL.to_dict() | {"bogus": 1})


# ---------------------------------------------------------------- residual block


def test_residual_block_identity_skip():
    blk = ResidualBlock.init(3, 4, 3, np.random.default_rng(0), layer_norm=False)
    zero_block(blk)
    blk.W_skip.data[...] = np.eye(3)
    x = np.random.default_rng(1).normal(size=(5, 3))
    np.testing.assert_array_equal(residual_block(x, blk).data, x)


def test_residual_block_affine_skip_when_widths_differ():
    rng = np.random.default_rng(0)
    blk = ResidualBlock.init(3, 4, 2, rng, layer_norm=False)
    for t in (blk.W1, blk.b1, blk.W2, blk.b2):
        t.data[...] = 0.0
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(residual_block(x, blk).data, x @ blk.W_skip.data + blk.b_skip.data)


def test_residual_block_layer_norm_output_and_width_check():
    blk = ResidualBlock.init(3, 4, 5, np.random.default_rng(0))
    y = residual_block(np.random.default_rng(2).normal(size=(7, 3)), blk).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    with pytest.raises(DimensionError):
        residual_block(np.ones((2, 4)), blk)


def test_residual_block_gradcheck():
    rng = np.random.default_rng(5)
    blk = ResidualBlock.init(4, 6, 3, rng)
    for t in blk.named("b").values():
        t.data += rng.normal(0, 0.1, t.shape)
    x = rng.normal(size=(5, 4))
    y = rng.normal(size=(5, 3))
    err = finite_diff_gradcheck(lambda: T.mse_loss(residual_block(x, blk), y), blk.named("b"))
    assert err < SUITE_TOLERANCE


def test_width_one_block_has_no_layer_norm():
    blk = ResidualBlock.init(3, 4, 1, np.random.default_rng(0), layer_norm=True)
    assert blk.ln_gain is None


# ---------------------------------------------------------------- shapes


def test_widths_match_config():
    params = init_params(SMALL, 0)
    assert params.encoder[0].in_dim == SMALL.lookback + (SMALL.lookback + SMALL.horizon) * 2 + 2
    assert params.decoder[-1].out_dim == SMALL.decoder_output_dim * SMALL.horizon
    assert params.temporal_decoder.in_dim == SMALL.decoder_output_dim + SMALL.temporal_width
    assert params.temporal_decoder.out_dim == 1
    assert params.feature_projection.hidden_dim == max(3, 4)


def test_benchmark_shape_example():
    cfg = ModelConfig(lookback=720, horizon=96, covariate_dim=8, temporal_width=4, hidden_size=4,
                      temporal_decoder_hidden=4)
    assert cfg.encoder_input_dim == 3984
    params = init_params(cfg, 0)
    assert params.encoder[0].in_dim == 3984
    X = np.random.default_rng(0).normal(size=(816, 8))
    assert project_features(X, params, cfg).shape == (1, 816, 4)


def test_project_features_without_covariates():
    cfg = ModelConfig(lookback=5, horizon=2, hidden_size=4)
    params = init_params(cfg, 0)
    Xp = project_features(np.zeros((7, 0)), params, cfg)
    assert Xp.shape == (1, 7, 0)
    assert encode(np.ones(5), Xp, None, params, cfg).shape == (1, 4)


def test_project_features_row_checks_and_permutation():
    params = init_params(SMALL, 0)
    X = np.random.default_rng(0).normal(size=(12, 3))
    base = project_features(X, params, SMALL).data[0]
    perm = X.copy()
    perm[[2, 9]] = perm[[9, 2]]
    swapped = project_features(perm, params, SMALL).data[0]
    np.testing.assert_array_equal(swapped[[9, 2]], base[[2, 9]])
    with pytest.raises(ContractError):
        project_features(X[:11], params, SMALL)


def test_encode_single_layer_and_sensitivity():
    cfg = ModelConfig(lookback=6, horizon=2, covariate_dim=2, temporal_width=1, hidden_size=5,
                      num_encoder_layers=1)
    params = init_params(cfg, 1)
    assert len(params.encoder) == 1
    X = project_features(np.ones((8, 2)), params, cfg)
    rng = np.random.default_rng(0)
    e1 = encode(rng.normal(size=6), X, None, params, cfg).data
    e2 = encode(rng.normal(size=6), X, None, params, cfg).data
    assert not np.allclose(e1, e2)
    with pytest.raises(ContractError):
        encode(np.ones(5), X, None, params, cfg)


@pytest.mark.parametrize("p,H", [(1, 5), (3, 1), (3, 4)])
def test_decode_reshape(p, H):
    cfg = ModelConfig(lookback=4, horizon=H, hidden_size=6, decoder_output_dim=p, num_decoder_layers=1)
    params = init_params(cfg, 0)
    e = np.random.default_rng(0).normal(size=(2, 6))
    D = decode(e, params, cfg).data
    g = params.decoder[0](Tensor(e)).data
    assert D.shape == (2, H, p)
    np.testing.assert_array_equal(D.reshape(2, -1), g)
    for t in range(H):
        np.testing.assert_array_equal(D[:, t, :], g[:, t * p:(t + 1) * p])


def test_temporal_decode_zero_weights_and_step_swap():
    params = init_params(SMALL, 0)
    rng = np.random.default_rng(0)
    D = rng.normal(size=(1, 4, 3))
    Xf = rng.normal(size=(1, 4, 2))
    out = temporal_decode(D, Xf, params, SMALL).data[0]
    D2, X2 = D.copy(), Xf.copy()
    D2[0, [0, 3]] = D2[0, [3, 0]]
    X2[0, [0, 3]] = X2[0, [3, 0]]
    swapped = temporal_decode(D2, X2, params, SMALL).data[0]
    np.testing.assert_array_equal(swapped[[3, 0]], out[[0, 3]])
    zero_block(params.temporal_decoder)
    np.testing.assert_array_equal(temporal_decode(D, Xf, params, SMALL).data, 0.0)
    with pytest.raises(ContractError):
        temporal_decode(D, Xf[:, :3], params, SMALL)


def test_global_residual_examples():
    cfg = ModelConfig(lookback=5, horizon=5, hidden_size=3)
    params = init_params(cfg, 0)
    W, b = params.global_residual
    y = np.arange(5.0)
    W.data[...] = 0.0
    np.testing.assert_array_equal(global_residual(y, params).data, 0.0)
    W.data[...] = np.eye(5)
    np.testing.assert_array_equal(global_residual(y, params).data[0], y)


# ---------------------------------------------------------------- RevIN


def test_revin_constant_and_round_trip():
    z, stats = revin_normalize(np.full((1, 6), 3.0))
    np.testing.assert_array_equal(z.data, 0.0)
    np.testing.assert_allclose(revin_denormalize(np.zeros((1, 4)), stats).data, 3.0, atol=1e-12)
    x = np.random.default_rng(0).normal(5.0, 2.0, size=(3, 10))
    affine = (Tensor([1.5, 0.7, 2.0]), Tensor([0.1, -0.3, 0.0]))
    z, stats = revin_normalize(x, affine, series_index=[2, 0, 1])
    np.testing.assert_allclose(revin_denormalize(z, stats).data, x, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(-1e3, 1e3), st.floats(1e-3, 1e3))
def test_revin_round_trip_property(seed, loc, scale):
    x = np.random.default_rng(seed).normal(loc, scale, size=(2, 16))
    z, stats = revin_normalize(x)
    assert np.abs(revin_denormalize(z, stats).data - x).max() <= 1e-10 * max(1.0, abs(loc) + scale)


def test_revin_off_is_identity_in_forward():
    cfg = ModelConfig(lookback=6, horizon=3, hidden_size=4, revin=False)
    model = TiDEModel(cfg, seed=0)
    zero_block(model.params.temporal_decoder)
    W, b = model.params.global_residual
    batch = make_batch(cfg)
    np.testing.assert_allclose(model(batch), batch.lookback @ W.data + b.data, atol=1e-12)


# ---------------------------------------------------------------- full model


def test_linear_subclass():
    model = TiDEModel(SMALL, seed=3)
    zero_block(model.params.temporal_decoder)
    batch = make_batch(SMALL, B=1)
    W, b = model.params.global_residual
    np.testing.assert_allclose(model(batch), batch.lookback @ W.data + b.data, atol=1e-12, rtol=0)


def test_forward_shape_and_eval_determinism():
    model = TiDEModel(SMALL, seed=0)
    batch = make_batch(SMALL, B=5)
    a, b = model(batch), model(batch)
    assert a.shape == (5, SMALL.horizon)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_channel_independence(seed):
    cfg = ModelConfig(**(SMALL.to_dict() | {"revin": True}))
    model = TiDEModel(cfg, seed=seed)
    batch = make_batch(cfg, B=3, seed=seed)
    base = model(batch)
    perm = np.array([2, 0, 1])
    permuted = WindowBatch(batch.lookback[perm], batch.target[perm], batch.covariates[perm],
                           batch.static[perm], batch.series_index[perm], batch.anchor_t[perm])
    np.testing.assert_allclose(model(permuted), base[perm], rtol=1e-12, atol=1e-12)
    other = make_batch(cfg, B=3, seed=seed + 1)
    mixed = WindowBatch(np.r_[batch.lookback[:1], other.lookback[1:]], batch.target,
                        np.r_[batch.covariates[:1], other.covariates[1:]],
                        np.r_[batch.static[:1], other.static[1:]], batch.series_index, batch.anchor_t)
    np.testing.assert_allclose(model(mixed)[0], base[0], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("overrides", [
    {}, {"layer_norm": False}, {"residual": False}, {"temporal_decoder": False}, {"revin": True},
    {"covariate_dim": 0, "temporal_width": 0}, {"linear_only": True, "revin": True},
])
def test_param_count_matches_traversal(overrides):
    cfg = ModelConfig(**(SMALL.to_dict() | overrides))
    params = init_params(cfg, 0)
    assert param_count(cfg) == sum(t.data.size for _, t in params)


def test_no_residuals_removes_every_skip():
    params = init_params(ModelConfig(**(SMALL.to_dict() | {"residual": False})), 0)
    assert params.global_residual is None
    names = list(params.named_parameters())
    assert not any("skip" in n for n in names)


def test_linear_only_forward():
    cfg = ModelConfig(lookback=6, horizon=3, linear_only=True)
    model = TiDEModel(cfg, seed=0)
    assert set(model.named_parameters()) == {"global_residual.W", "global_residual.b"}
    batch = make_batch(cfg)
    W, b = model.params.global_residual
    np.testing.assert_allclose(model(batch), batch.lookback @ W.data + b.data)


def test_params_copy_is_independent():
    params = init_params(SMALL, 0)
    clone = params.copy()
    for (n1, a), (n2, b) in zip(params, clone):
        assert n1 == n2 and a is not b
        np.testing.assert_array_equal(a.data, b.data)
    clone.encoder[0].W1.data[...] = 0.0
    assert params.encoder[0].W1.data.any()


def test_forward_rejects_bad_lookback():
    with pytest.raises(ContractError):
        forward(make_batch(ModelConfig(**(SMALL.to_dict() | {"lookback": 9}))), init_params(SMALL, 0), SMALL)


def test_full_model_gradient_suite():
    errors = gradcheck_suite(seed=0)
    assert {"feature_projection", "temporal_decoder", "global_residual", "revin", "full_model"} <= set(errors)
    assert max(errors.values()) < SUITE_TOLERANCE
