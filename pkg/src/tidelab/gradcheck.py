"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backprop


def relu_margin(tape: Tape) -> float:
    """Smallest |pre-activation| fed to any ReLU on the tape (inf if none)."""
    m = np.inf
    for node in tape.nodes:
        if node.op == "relu":
            m = min(m, float(np.abs(node.inputs[0].data).min(initial=np.inf)))
    return m


def gradient_errors(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Max relative error per parameter between backprop and central differences.

    ``max_coords`` limits the number of coordinates probed per parameter
    (chosen with ``rng``); ``None`` probes all of them.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    with Tape() as tape:
        loss = f()
    analytic = backprop(tape, loss, params)
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = a_flat[i]
            denom = max(abs(a), abs(num), 1e-12)
            worst = max(worst, abs(a - num) / denom)
        errors[name] = worst
    return errors


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    errs = gradient_errors(f, params, eps, max_coords, rng)
    return max(errs.values(), default=0.0)


SUITE_TOLERANCE = 1e-4


def _toy_setup(seed: int):
    from .data import WindowBatch
    from .model import ModelConfig, init_params

    cfg = ModelConfig(lookback=6, horizon=3, covariate_dim=5, temporal_width=4, hidden_size=5,
                      num_encoder_layers=2, num_decoder_layers=2, decoder_output_dim=2,
                      temporal_decoder_hidden=4, dropout=0.2, revin=True, static_dim=2, num_series=2)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    # move off the zero-bias / unit-gain starting point so every path carries signal
    for _, t in params:
        t.data += rng.normal(0.0, 0.1, t.data.shape)
    B = 4
    batch = WindowBatch(
        lookback=rng.normal(size=(B, cfg.lookback)),
        target=rng.normal(size=(B, cfg.horizon)),
        covariates=rng.normal(size=(B, cfg.lookback + cfg.horizon, cfg.covariate_dim)),
        static=rng.normal(size=(B, cfg.static_dim)),
        series_index=np.array([0, 1, 1, 0]),
        anchor_t=np.arange(B),
    )
    return cfg, params, batch, rng


def gradcheck_suite(seed: int = 0, eps: float = 1e-5, min_margin: float = 1e-3,
                    max_tries: int = 20) -> dict[str, float]:
    """Max relative gradient error for every block of a small model and the model as a whole.

    Inputs are redrawn until no ReLU pre-activation lies within ``min_margin``
    of the kink, so central differences never straddle it.
    """
    from . import tensor as T
    from .model import forward

    for attempt in range(max_tries):
        cfg, params, batch, rng = _toy_setup(seed + 1000 * attempt)
        checks = _suite_checks(cfg, params, batch, rng)
        margins = []
        for f, _ in checks.values():
            with Tape() as tape:
                f()
            margins.append(relu_margin(tape))
        if min(margins) > min_margin:
            break
    else:
        raise RuntimeError("could not find inputs away from ReLU kinks")
    return {name: finite_diff_gradcheck(f, p, eps) for name, (f, p) in checks.items()}


def _suite_checks(cfg, params, batch, rng):
    from . import tensor as T
    from .model import forward, revin_denormalize, revin_normalize

    def block_check(block, in_dim):
        x = Tensor(rng.normal(size=(4, in_dim)))
        w = rng.normal(size=(4, block.out_dim))
        return (lambda: T.total(T.mul(block(x), Tensor(w)))), block.named("b")

    checks = {"feature_projection": block_check(params.feature_projection, cfg.covariate_dim)}
    for i, blk in enumerate(params.encoder):
        checks[f"encoder.block{i}"] = block_check(blk, blk.in_dim)
    for i, blk in enumerate(params.decoder):
        checks[f"decoder.block{i}"] = block_check(blk, blk.in_dim)
    checks["temporal_decoder"] = block_check(params.temporal_decoder, params.temporal_decoder.in_dim)

    W, b = params.global_residual
    y = Tensor(rng.normal(size=(4, cfg.lookback)))
    wg = Tensor(rng.normal(size=(4, cfg.horizon)))
    checks["global_residual"] = (lambda: T.total(T.mul(T.affine(y, W, b), wg)),
                                 {"global_residual.W": W, "global_residual.b": b})

    gain, bias = params.revin
    out = Tensor(rng.normal(size=(4, cfg.horizon)))

    def revin_loss():
        yt, stats = revin_normalize(batch.lookback, params.revin, batch.series_index)
        z = T.add(out, T.mean(yt))
        return T.total(T.mul(revin_denormalize(z, stats), wg))

    checks["revin"] = (revin_loss, {"revin.gain": gain, "revin.bias": bias})

    def model_loss():
        pred = forward(batch, params, cfg, training=True, rng=np.random.default_rng(7))
        return T.mse_loss(pred, batch.target)

    checks["full_model"] = (model_loss, params.named_parameters())
    return checks
