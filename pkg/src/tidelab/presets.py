"""Published per-dataset hyper-parameters, tuning ranges and dataset shapes."""
from __future__ import annotations

from dataclasses import dataclass

from .data import ConfigurationError, Frequency
from .model import ModelConfig

LOOKBACK = 720
HORIZONS = (96, 192, 336, 720)
BATCH_SIZE = 512
TEMPORAL_WIDTH = 4
NUM_TIME_FEATURES = 8


@dataclass(frozen=True)
class Preset:
    hidden_size: int
    num_encoder_layers: int
    num_decoder_layers: int
    decoder_output_dim: int
    temporal_decoder_hidden: int
    dropout: float
    layer_norm: bool
    learning_rate: float
    revin: bool


PRESETS: dict[str, Preset] = {
    "traffic": Preset(256, 1, 1, 16, 64, 0.3, False, 6.55e-5, True),
    "electricity": Preset(1024, 2, 2, 8, 64, 0.5, True, 9.99e-4, False),
    "ettm1": Preset(1024, 1, 1, 8, 128, 0.5, True, 8.39e-5, False),
    "ettm2": Preset(512, 2, 2, 16, 128, 0.0, True, 2.52e-4, True),
    "etth1": Preset(256, 2, 2, 8, 128, 0.3, True, 3.82e-5, True),
    "etth2": Preset(512, 2, 2, 32, 16, 0.2, True, 2.24e-4, True),
    "weather": Preset(512, 1, 1, 8, 16, 0.0, True, 3.01e-5, False),
}


@dataclass(frozen=True)
class DatasetShape:
    num_series: int
    num_steps: int
    frequency: Frequency


DATASETS: dict[str, DatasetShape] = {
    "electricity": DatasetShape(321, 26304, Frequency.HOURLY),
    "traffic": DatasetShape(862, 17544, Frequency.HOURLY),
    "weather": DatasetShape(21, 52696, Frequency.MIN10),
    "etth1": DatasetShape(7, 17420, Frequency.HOURLY),
    "etth2": DatasetShape(7, 17420, Frequency.HOURLY),
    "ettm1": DatasetShape(7, 69680, Frequency.MIN15),
    "ettm2": DatasetShape(7, 69680, Frequency.MIN15),
}

# Tuning ranges; learning_rate is a closed interval, the rest are choice sets.
RANGES: dict[str, tuple] = {
    "hidden_size": (256, 512, 1024),
    "num_encoder_layers": (1, 2, 3),
    "num_decoder_layers": (1, 2, 3),
    "decoder_output_dim": (4, 8, 16, 32),
    "temporal_decoder_hidden": (32, 64, 128),
    "dropout": (0.0, 0.1, 0.2, 0.3, 0.5),
    "layer_norm": (True, False),
    "revin": (True, False),
}
LEARNING_RATE_RANGE = (1e-5, 1e-2)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def check_ranges(values: dict, preset: Preset | None = None) -> None:
    """Reject tuned hyper-parameters outside the published ranges.

    A value equal to the preset's own published setting is always accepted,
    since two published rows use a temporal decoder width outside the range.
    """
    for key, allowed in RANGES.items():
        if key not in values:
            continue
        v = values[key]
        if preset is not None and v == getattr(preset, key):
            continue
        if v not in allowed:
            raise ConfigurationError(f"{key} = {v!r} is outside the tuning range {list(allowed)}")
    if "learning_rate" in values:
        lr = values["learning_rate"]
        lo, hi = LEARNING_RATE_RANGE
        if not (lo <= lr <= hi) and not (preset is not None and lr == preset.learning_rate):
            raise ConfigurationError(f"learning_rate = {lr!r} is outside [{lo}, {hi}]")
    if "temporal_width" in values and values["temporal_width"] != TEMPORAL_WIDTH:
        raise ConfigurationError(f"temporal_width is fixed to {TEMPORAL_WIDTH} for presets")
    if "batch_size" in values and values["batch_size"] != BATCH_SIZE:
        raise ConfigurationError(f"batch_size is fixed to {BATCH_SIZE} for presets")


def preset_model_config(name: str, horizon: int, num_series: int = 1, covariate_dim: int = NUM_TIME_FEATURES,
                        lookback: int = LOOKBACK, static_dim: int = 0) -> ModelConfig:
    if horizon not in HORIZONS:
        raise ConfigurationError(f"horizon must be one of {HORIZONS}, got {horizon}")
    p = get_preset(name)
    return ModelConfig(
        lookback=lookback,
        horizon=horizon,
        covariate_dim=covariate_dim,
        temporal_width=min(TEMPORAL_WIDTH, covariate_dim),
        hidden_size=p.hidden_size,
        num_encoder_layers=p.num_encoder_layers,
        num_decoder_layers=p.num_decoder_layers,
        decoder_output_dim=p.decoder_output_dim,
        temporal_decoder_hidden=p.temporal_decoder_hidden,
        dropout=p.dropout,
        layer_norm=p.layer_norm,
        revin=p.revin,
        static_dim=static_dim,
        num_series=num_series,
    )
