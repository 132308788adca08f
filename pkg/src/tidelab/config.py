"""Run configuration: a flat ``key = value`` file resolved into model and training configs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

from . import presets
from .data import ConfigurationError
from .evaluation import TrainConfig
from .model import ModelConfig
from .tensor import ParameterError

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False, "on": True, "off": False}

# keys that belong to the model; None means "take it from the preset or the default"
_MODEL_KEYS = ("hidden_size", "num_encoder_layers", "num_decoder_layers", "decoder_output_dim",
               "temporal_decoder_hidden", "dropout", "layer_norm", "revin", "temporal_width")


@dataclass
class RunConfig:
    data: str | None = None
    covariates: str | None = None
    dataset: str | None = None
    preset: str | None = None
    lookback: int = presets.LOOKBACK
    horizon: int = 96
    hidden_size: int | None = None
    num_encoder_layers: int | None = None
    num_decoder_layers: int | None = None
    decoder_output_dim: int | None = None
    temporal_decoder_hidden: int | None = None
    dropout: float | None = None
    layer_norm: bool | None = None
    revin: bool | None = None
    temporal_width: int | None = None
    temporal_decoder: bool = True
    residual: bool = True
    linear_only: bool = False
    time_features: bool = True
    normalize: bool = True
    max_series: int | None = None
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = presets.BATCH_SIZE
    seed: int = 0
    learning_rate: float | None = None
    max_batches_per_epoch: int | None = None
    eval_batch_size: int = 1024

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, raw: dict[str, Any]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, v in raw.items():
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = _coerce(key, known[key].type, v)
        return cls(**values)

    def updated(self, raw: dict[str, Any]) -> "RunConfig":
        """Copy with the keys of ``raw`` overridden."""
        parsed = RunConfig.from_mapping(raw)
        return RunConfig(**(asdict(self) | {k: getattr(parsed, k) for k in raw}))

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if v is None:
                continue
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    def train_config(self) -> TrainConfig:
        lr = self.learning_rate
        if lr is None:
            lr = presets.get_preset(self.preset).learning_rate if self.preset else 1e-3
        return TrainConfig(max_epochs=self.max_epochs, patience=self.patience, batch_size=self.batch_size,
                           seed=self.seed, learning_rate=lr, max_batches_per_epoch=self.max_batches_per_epoch,
                           eval_batch_size=self.eval_batch_size)

    def model_config(self, covariate_dim: int, num_series: int, static_dim: int = 0) -> ModelConfig:
        chosen = {k: getattr(self, k) for k in _MODEL_KEYS if getattr(self, k) is not None}
        if self.preset:
            p = presets.get_preset(self.preset)
            if self.horizon not in presets.HORIZONS:
                raise ConfigurationError(f"horizon must be one of {presets.HORIZONS} with a preset, got {self.horizon}")
            presets.check_ranges(chosen | {"batch_size": self.batch_size}, p)
            if self.learning_rate is not None:
                presets.check_ranges({"learning_rate": self.learning_rate}, p)
            base = {k: getattr(p, k) for k in _MODEL_KEYS if hasattr(p, k)}
            base["temporal_width"] = min(presets.TEMPORAL_WIDTH, covariate_dim)
            base.update(chosen)
            chosen = base
        elif "temporal_width" not in chosen:
            chosen["temporal_width"] = min(presets.TEMPORAL_WIDTH, covariate_dim)
        if covariate_dim == 0:
            chosen["temporal_width"] = 0
        try:
            return ModelConfig(lookback=self.lookback, horizon=self.horizon, covariate_dim=covariate_dim,
                               static_dim=static_dim, num_series=num_series,
                               temporal_decoder=self.temporal_decoder, residual=self.residual,
                               linear_only=self.linear_only, **chosen)
        except ParameterError as exc:
            raise ConfigurationError(str(exc)) from exc


def _coerce(key: str, annotation: str, v: Any):
    if not isinstance(v, str):
        return v
    s = v.strip()
    if s.lower() in ("none", "null", "") and "None" in annotation:
        return None
    try:
        if annotation.startswith("bool"):
            return _BOOL[s.lower()]
        if annotation.startswith("int"):
            return int(s)
        if annotation.startswith("float"):
            return float(s)
    except (KeyError, ValueError):
        raise ConfigurationError(f"config key {key!r}: cannot parse {v!r} as {annotation.split(' ')[0]}") from None
    return s


def parse_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_run_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return RunConfig.from_mapping(parse_text(p.read_text()))
