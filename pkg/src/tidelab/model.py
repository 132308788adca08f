"""The TiDE dense encoder-decoder.

Everything here is batched over windows: a batch of ``B`` look-backs of length
``L`` maps to ``B`` horizons of length ``H``.  Each window is treated on its
own (channel independence); weights are shared across all of them.

Parameter names are stable and used verbatim in checkpoints::

    feature_projection.{W1,b1,W2,b2,W_skip,b_skip,ln_gain,ln_bias}
    encoder.block{i}.*          i = 0 .. numEncoderLayers-1
    decoder.block{i}.*          i = 0 .. numDecoderLayers-1
    temporal_decoder.*          residual block (p + r~) -> 1
    step_head.{W,b}             replaces temporal_decoder when it is ablated
    global_residual.{W,b}       affine L -> H
    revin.{gain,bias}           per-series RevIN affine, shape (num_series,)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, ParameterError, Tensor

LAYER_NORM_EPS = 1e-6
REVIN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    lookback: int
    horizon: int
    covariate_dim: int = 0
    temporal_width: int = 0
    hidden_size: int = 256
    num_encoder_layers: int = 1
    num_decoder_layers: int = 1
    decoder_output_dim: int = 4
    temporal_decoder_hidden: int = 32
    dropout: float = 0.0
    layer_norm: bool = True
    revin: bool = False
    static_dim: int = 0
    num_series: int = 1
    # ablation switches
    temporal_decoder: bool = True
    residual: bool = True
    linear_only: bool = False  # keep only the global residual (plus RevIN)

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise ParameterError(f"lookback and horizon must be >= 1 (got {self.lookback}, {self.horizon})")
        r, rt = self.covariate_dim, self.temporal_width
        if r < 0 or rt < 0 or self.static_dim < 0:
            raise ParameterError("covariate_dim, temporal_width and static_dim must be >= 0")
        if r == 0 and rt != 0:
            raise ParameterError("temporal_width must be 0 when there are no covariates")
        if r > 0 and not 1 <= rt <= r:
            raise ParameterError(f"temporal_width must lie in [1, covariate_dim={r}], got {rt}")
        for name in ("hidden_size", "num_encoder_layers", "num_decoder_layers",
                     "decoder_output_dim", "temporal_decoder_hidden", "num_series"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.linear_only and not self.residual:
            raise ParameterError("linear_only needs the global residual (residual=True)")

    @property
    def projection_hidden(self) -> int:
        return max(self.covariate_dim, 2 * self.temporal_width)

    @property
    def encoder_input_dim(self) -> int:
        L, H = self.lookback, self.horizon
        return L + (L + H) * self.temporal_width + self.static_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class ResidualBlock:
    """One-hidden-layer ReLU MLP with a linear skip path.

    ``out = LN(dropout(W2 relu(W1 x + b1) + b2) + W_skip x + b_skip)``; the
    skip and layer norm are absent when their tensors are ``None``.
    """

    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W_skip: Tensor | None = None
    b_skip: Tensor | None = None
    ln_gain: Tensor | None = None
    ln_bias: Tensor | None = None

    @classmethod
    def init(cls, in_dim, hidden_dim, out_dim, rng, skip=True, layer_norm=True) -> "ResidualBlock":
        def p(a):
            return Tensor(a, requires_grad=True)

        blk = cls(
            W1=p(_glorot(rng, in_dim, hidden_dim)),
            b1=p(np.zeros(hidden_dim)),
            W2=p(_glorot(rng, hidden_dim, out_dim)),
            b2=p(np.zeros(out_dim)),
        )
        if skip:
            blk.W_skip = p(_glorot(rng, in_dim, out_dim))
            blk.b_skip = p(np.zeros(out_dim))
        # layer norm over a single output is constant, so it is left out there
        if layer_norm and out_dim > 1:
            blk.ln_gain = p(np.ones(out_dim))
            blk.ln_bias = p(np.zeros(out_dim))
        return blk

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            t = getattr(self, f.name)
            if t is not None:
                out[f"{prefix}.{f.name}"] = t
        return out

    def __call__(self, x, dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
        return residual_block(x, self, dropout, training, rng)


def residual_block(x, block: ResidualBlock, dropout: float = 0.0, training: bool = False, rng=None) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != block.in_dim:
        raise DimensionError(f"residual block expects (batch, {block.in_dim}) input, got {x.shape}")
    h = T.relu(T.affine(x, block.W1, block.b1))
    out = T.dropout(T.affine(h, block.W2, block.b2), dropout, training, rng)
    if block.W_skip is not None:
        out = out + T.affine(x, block.W_skip, block.b_skip)
    if block.ln_gain is not None:
        out = T.layer_norm(out, block.ln_gain, block.ln_bias, LAYER_NORM_EPS)
    return out


@dataclass
class TiDEParams:
    feature_projection: ResidualBlock | None
    encoder: list[ResidualBlock]
    decoder: list[ResidualBlock]
    temporal_decoder: ResidualBlock | None
    step_head: tuple[Tensor, Tensor] | None
    global_residual: tuple[Tensor, Tensor] | None
    revin: tuple[Tensor, Tensor] | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.feature_projection is not None:
            out.update(self.feature_projection.named("feature_projection"))
        for i, blk in enumerate(self.encoder):
            out.update(blk.named(f"encoder.block{i}"))
        for i, blk in enumerate(self.decoder):
            out.update(blk.named(f"decoder.block{i}"))
        if self.temporal_decoder is not None:
            out.update(self.temporal_decoder.named("temporal_decoder"))
        if self.step_head is not None:
            out["step_head.W"], out["step_head.b"] = self.step_head
        if self.global_residual is not None:
            out["global_residual.W"], out["global_residual.b"] = self.global_residual
        if self.revin is not None:
            out["revin.gain"], out["revin.bias"] = self.revin
        return out

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.named_parameters().items())

    def copy(self) -> "TiDEParams":
        clone = init_params_like(self)
        src = self.named_parameters()
        for name, t in clone.named_parameters().items():
            t.data[...] = src[name].data
        return clone


def init_params(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> TiDEParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    skip, ln = cfg.residual, cfg.layer_norm
    hs, p, H, rt = cfg.hidden_size, cfg.decoder_output_dim, cfg.horizon, cfg.temporal_width
    if cfg.linear_only:
        return TiDEParams(None, [], [], None, None, _global_residual(cfg, rng), _revin(cfg))

    proj = None
    if cfg.covariate_dim > 0:
        proj = ResidualBlock.init(cfg.covariate_dim, cfg.projection_hidden, rt, rng, skip, ln)

    enc = []
    width = cfg.encoder_input_dim
    for _ in range(cfg.num_encoder_layers):
        enc.append(ResidualBlock.init(width, hs, hs, rng, skip, ln))
        width = hs

    dec = []
    for i in range(cfg.num_decoder_layers):
        out = p * H if i == cfg.num_decoder_layers - 1 else hs
        dec.append(ResidualBlock.init(hs, hs, out, rng, skip, ln))

    td = head = None
    if cfg.temporal_decoder:
        td = ResidualBlock.init(p + rt, cfg.temporal_decoder_hidden, 1, rng, skip, ln)
    else:
        head = (Tensor(_glorot(rng, p, 1), requires_grad=True), Tensor(np.zeros(1), requires_grad=True))

    gres = _global_residual(cfg, rng) if cfg.residual else None
    return TiDEParams(proj, enc, dec, td, head, gres, _revin(cfg))


def _global_residual(cfg, rng):
    return (
        Tensor(_glorot(rng, cfg.lookback, cfg.horizon), requires_grad=True),
        Tensor(np.zeros(cfg.horizon), requires_grad=True),
    )


def _revin(cfg):
    if not cfg.revin:
        return None
    return (
        Tensor(np.ones(cfg.num_series), requires_grad=True),
        Tensor(np.zeros(cfg.num_series), requires_grad=True),
    )


def init_params_like(params: TiDEParams) -> TiDEParams:
    def blk(b):
        if b is None:
            return None
        return ResidualBlock(**{f.name: _clone(getattr(b, f.name)) for f in fields(b)})

    return TiDEParams(
        blk(params.feature_projection),
        [blk(b) for b in params.encoder],
        [blk(b) for b in params.decoder],
        blk(params.temporal_decoder),
        _pair(params.step_head),
        _pair(params.global_residual),
        _pair(params.revin),
    )


def _clone(t):
    return None if t is None else Tensor(t.data.copy(), requires_grad=t.requires_grad)


def _pair(pr):
    return None if pr is None else (_clone(pr[0]), _clone(pr[1]))


def param_count(cfg: ModelConfig) -> int:
    """Closed-form number of scalar parameters for ``cfg``."""

    def block(i, h, o):
        n = i * h + h + h * o + o
        if cfg.residual:
            n += i * o + o
        if cfg.layer_norm and o > 1:
            n += 2 * o
        return n

    L, H, hs, p = cfg.lookback, cfg.horizon, cfg.hidden_size, cfg.decoder_output_dim
    rt = cfg.temporal_width
    rev = 2 * cfg.num_series if cfg.revin else 0
    if cfg.linear_only:
        return L * H + H + rev
    n = 0
    if cfg.covariate_dim:
        n += block(cfg.covariate_dim, cfg.projection_hidden, rt)
    n += block(cfg.encoder_input_dim, hs, hs) + (cfg.num_encoder_layers - 1) * block(hs, hs, hs)
    n += (cfg.num_decoder_layers - 1) * block(hs, hs, hs) + block(hs, hs, p * H)
    n += block(p + rt, cfg.temporal_decoder_hidden, 1) if cfg.temporal_decoder else p + 1
    if cfg.residual:
        n += L * H + H
    return n + rev


# --------------------------------------------------------------------------
# forward pieces


@dataclass
class RevinStats:
    mean: np.ndarray  # (B, 1)
    std: np.ndarray  # (B, 1)
    series_index: np.ndarray | None = None
    affine: tuple[Tensor, Tensor] | None = field(default=None, repr=False)


def revin_normalize(y_past, affine: tuple[Tensor, Tensor] | None = None,
                    series_index=None, eps: float = REVIN_EPS):
    """Standardise each look-back by its own mean and std.

    Returns the normalised tensor and the statistics needed to undo it.  With
    ``affine`` (per-series gain, bias) the learnable scale and shift are applied
    after standardising, indexed by ``series_index``.
    """
    y = T.as_tensor(y_past)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    mu = y.data.mean(axis=1, keepdims=True)
    sd = np.sqrt(y.data.var(axis=1, keepdims=True) + eps)
    z = (y - mu) / sd
    stats = RevinStats(mu, sd, None if series_index is None else np.asarray(series_index), affine)
    if affine is not None:
        g, b = _gather_affine(affine, stats)
        z = z * g + b
    return z, stats


def revin_denormalize(y_hat, stats: RevinStats, eps: float = REVIN_EPS) -> Tensor:
    z = T.as_tensor(y_hat)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    if stats.affine is not None:
        g, b = _gather_affine(stats.affine, stats)
        z = (z - b) / (g + eps * eps)
    return z * stats.std + stats.mean


def _gather_affine(affine, stats):
    idx = stats.series_index
    if idx is None:
        idx = np.zeros(stats.mean.shape[0], dtype=np.int64)
    gain, bias = affine
    return gain[idx].reshape(-1, 1), bias[idx].reshape(-1, 1)


def project_features(X, params: TiDEParams, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """Apply the shared projection block to every time step: (B, L+H, r) -> (B, L+H, r~)."""
    X = T.as_tensor(X)
    if X.ndim == 2:
        X = X.reshape(1, *X.shape)
    B, steps, r = X.shape
    if steps != cfg.lookback + cfg.horizon:
        raise ContractError(f"covariates cover {steps} steps, expected L+H = {cfg.lookback + cfg.horizon}")
    if r != cfg.covariate_dim:
        raise DimensionError(f"covariates have width {r}, config says {cfg.covariate_dim}")
    if r == 0:
        return Tensor(np.zeros((B, steps, 0)))
    flat = X.reshape(B * steps, r)
    out = params.feature_projection(flat, cfg.dropout, training, rng)
    return out.reshape(B, steps, cfg.temporal_width)


def _run_stack(x, blocks, cfg, training, rng):
    for blk in blocks:
        x = blk(x, cfg.dropout, training, rng)
    return x


def encode(y_past, X_proj, static, params: TiDEParams, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """Dense encoder over concat(look-back, flattened projected covariates, static)."""
    y = T.as_tensor(y_past)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    B = y.shape[0]
    Xp = T.as_tensor(X_proj)
    if y.shape[1] != cfg.lookback:
        raise ContractError(f"look-back has length {y.shape[1]}, expected {cfg.lookback}")
    parts = [y]
    if cfg.temporal_width:
        parts.append(Xp.reshape(B, -1))
    if cfg.static_dim:
        a = T.as_tensor(static).reshape(B, cfg.static_dim)
        parts.append(a)
    x = T.concat(parts, axis=1) if len(parts) > 1 else y
    if x.shape[1] != cfg.encoder_input_dim:
        raise ContractError(f"encoder input width {x.shape[1]} != {cfg.encoder_input_dim}")
    return _run_stack(x, params.encoder, cfg, training, rng)


def decode(e, params: TiDEParams, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """Dense decoder; returns (B, H, p) where row t is the decoded vector d_t = g[t*p:(t+1)*p]."""
    e = T.as_tensor(e)
    if e.ndim == 1:
        e = e.reshape(1, -1)
    if e.shape[1] != cfg.hidden_size:
        raise DimensionError(f"encoding has width {e.shape[1]}, expected {cfg.hidden_size}")
    g = _run_stack(e, params.decoder, cfg, training, rng)
    return g.reshape(e.shape[0], cfg.horizon, cfg.decoder_output_dim)


def temporal_decode(D, X_future, params: TiDEParams, cfg: ModelConfig, training=False, rng=None) -> Tensor:
    """Per-horizon-step block on concat(d_t, projected covariates at L+t): -> (B, H)."""
    D = T.as_tensor(D)
    B, H, p = D.shape
    Xf = T.as_tensor(X_future)
    if Xf.ndim == 2:
        Xf = Xf.reshape(1, *Xf.shape)
    if H != cfg.horizon or Xf.shape[1] != H:
        raise ContractError(f"decoded steps {H}, future covariate steps {Xf.shape[1]}, horizon {cfg.horizon}")
    if params.temporal_decoder is None:
        W, b = params.step_head
        return T.affine(D.reshape(B * H, p), W, b).reshape(B, H)
    x = T.concat([D, Xf], axis=2) if cfg.temporal_width else D
    x = x.reshape(B * H, p + cfg.temporal_width)
    out = params.temporal_decoder(x, cfg.dropout, training, rng)
    return out.reshape(B, H)


def global_residual(y_past, params: TiDEParams) -> Tensor:
    y = T.as_tensor(y_past)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    W, b = params.global_residual
    return T.affine(y, W, b)


def forward(batch, params: TiDEParams, cfg: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Predict the horizon for every window of ``batch``: -> (B, H)."""
    y = np.asarray(batch.lookback, dtype=np.float64)
    B = y.shape[0]
    if y.ndim != 2 or y.shape[1] != cfg.lookback:
        raise ContractError(f"look-back batch has shape {y.shape}, expected (B, {cfg.lookback})")
    cov = batch.covariates
    if cov is None:
        cov = np.zeros((B, cfg.lookback + cfg.horizon, 0))
    stats = None
    if cfg.revin:
        yt, stats = revin_normalize(y, params.revin, getattr(batch, "series_index", None))
    else:
        yt = Tensor(y)
    if cfg.linear_only:
        out = global_residual(yt, params)
        return revin_denormalize(out, stats) if stats is not None else out
    Xp = project_features(cov, params, cfg, training, rng)
    e = encode(yt, Xp, getattr(batch, "static", None), params, cfg, training, rng)
    D = decode(e, params, cfg, training, rng)
    Xf = Xp[:, cfg.lookback:, :]
    out = temporal_decode(D, Xf, params, cfg, training, rng)
    if params.global_residual is not None:
        out = out + global_residual(yt, params)
    if stats is not None:
        out = revin_denormalize(out, stats)
    return out


class TiDEModel:
    """Configuration plus parameters, callable on a window batch."""

    def __init__(self, cfg: ModelConfig, params: TiDEParams | None = None, seed: int = 0):
        self.config = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named_parameters()

    def forward(self, batch, training=False, rng=None) -> Tensor:
        return forward(batch, self.params, self.config, training, rng)

    def __call__(self, batch) -> np.ndarray:
        return self.forward(batch).data

    @property
    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.named_parameters().values())
