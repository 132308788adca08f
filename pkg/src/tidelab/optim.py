"""Adam and the cosine learning-rate decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import DimensionError, ParameterError, Tensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-7


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
):
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient {g.shape} for parameter {name!r} of shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass(frozen=True)
class ScheduleConfig:
    max_lr: float
    total_steps: int

    def __post_init__(self):
        if not self.max_lr > 0:
            raise ParameterError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be >= 1, got {self.total_steps}")


def cosine_lr(step: int, cfg: ScheduleConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ParameterError(f"step {step} outside [0, {cfg.total_steps}]")
    return cfg.max_lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))
