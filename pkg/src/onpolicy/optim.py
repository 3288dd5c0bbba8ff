"""Adam and RMSProp over a flat parameter vector, and the linear LR schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

OPTIMIZERS = ("Adam", "RMSProp")


@dataclass(frozen=True)
class OptimCfg:
    kind: str = "Adam"
    lr: float = 3e-4
    momentum: float = 0.9
    eps: float = 1e-7
    centered: bool = False
    beta2: float = 0.999
    rms_decay: float = 0.9
    lr_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.kind!r}", "optimizer")
        if not self.lr >= 0:
            raise ConfigError("learning rate must be nonnegative", "lr")
        if not self.eps > 0:
            raise ConfigError("epsilon must be positive", "eps")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)", "momentum")
        if not 0.0 <= self.lr_decay <= 1.0:
            raise ConfigError("lrdecay must lie in [0, 1]", "lrdecay")


@dataclass
class OptimState:
    t: int = 0
    m: np.ndarray | None = None      # Adam first moment / RMSProp momentum buffer
    v: np.ndarray | None = None      # Adam second moment / RMSProp mean square
    mg: np.ndarray | None = None     # centered RMSProp mean gradient
    extra: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, size):
        return cls(0, np.zeros(size), np.zeros(size), np.zeros(size))

    def to_dict(self):
        return {"t": self.t, "m": self.m.tolist(), "v": self.v.tolist(), "mg": self.mg.tolist()}


def lr_at(cfg: OptimCfg, progress: float) -> float:
    """Linear interpolation from lr to lr * lr_decay as progress goes 0 -> 1."""
    return cfg.lr * ((1.0 - progress) + progress * cfg.lr_decay)


def adam_step(state: OptimState, params, grads, lr_t, cfg: OptimCfg):
    """Bias-corrected Adam; updates ``params`` in place."""
    b1, b2 = cfg.momentum, cfg.beta2
    state.t += 1
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    params -= lr_t * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state, params


def rmsprop_step(state: OptimState, params, grads, lr_t, cfg: OptimCfg):
    """RMSProp (optionally centered) with a momentum buffer when momentum > 0."""
    rho = cfg.rms_decay
    state.t += 1
    state.v *= rho
    state.v += (1.0 - rho) * grads * grads
    if cfg.centered:
        state.mg *= rho
        state.mg += (1.0 - rho) * grads
        ms = np.maximum(state.v - state.mg * state.mg, 0.0)
    else:
        ms = state.v
    update = lr_t * grads / (np.sqrt(ms) + cfg.eps)
    if cfg.momentum > 0:
        state.m *= cfg.momentum
        state.m += update
        params -= state.m
    else:
        params -= update
    return state, params


def optimizer_step(state, params, grads, lr_t, cfg: OptimCfg):
    if cfg.kind == "Adam":
        return adam_step(state, params, grads, lr_t, cfg)
    return rmsprop_step(state, params, grads, lr_t, cfg)
