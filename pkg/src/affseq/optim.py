"""Adam with decoupled weight decay.

Decay applies only to the 2-d weight matrices (never biases, layer-norm
affines, or the fixed position table) and runs before the moment update,
so it never leaks into the running averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .model import ModelParams


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64          # segments per step
    lr: float = 1e-3
    weight_decay: float = 1.0 / 64.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    grad_clip: float = 0.0        # global-norm clip; 0 disables
    class_weighting: bool = True
    va_loss: str = "ccc"          # or "mse"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        for name in ("lr", "beta1", "beta2", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ConfigError("adam betas must be < 1")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("weight_decay and grad_clip must be >= 0")
        if self.va_loss not in ("ccc", "mse"):
            raise ConfigError(f"va_loss must be 'ccc' or 'mse', got {self.va_loss!r}")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        state = cls()
        for name, tensor in params.trainable():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(params: ModelParams, state: OptimizerState, cfg: TrainConfig) -> None:
    """One in-place update from the gradients currently on the parameters."""
    grads = {}
    for name, p in params.trainable():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}: "
                               f"|g|_max={np.abs(g[np.isfinite(g)]).max(initial=0.0):.3e}, step {state.t + 1}")
        grads[name] = g

    if cfg.grad_clip > 0:
        norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
            grads = {n: g * scale for n, g in grads.items()}

    state.t += 1
    t = state.t
    decayed = params.decayed_names()
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.trainable():
        g = grads[name]
        if cfg.weight_decay > 0 and name in decayed:
            p.data -= (cfg.lr * cfg.weight_decay) * p.data
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if not np.isfinite(p.data).all():
            raise NumericError(f"non-finite parameter {name} after step {t}")
