"""tidelab: a dense encoder-decoder forecaster with its own autodiff, data pipeline and LDS lab."""
from ._kernels import BACKEND
from .data import SplitSpec, TimeSeriesDataset, WindowBatch
from .evaluation import MetricsReport, TrainConfig, rolling_evaluate, train_loop
from .model import ModelConfig, TiDEModel, init_params
from .tensor import ContractError, DimensionError, ParameterError, Tensor

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractError",
    "DimensionError",
    "MetricsReport",
    "ModelConfig",
    "ParameterError",
    "SplitSpec",
    "Tensor",
    "TiDEModel",
    "TimeSeriesDataset",
    "TrainConfig",
    "WindowBatch",
    "init_params",
    "rolling_evaluate",
    "train_loop",
]
