"""SGD (Nesterov) and Adam parameter updates on flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimConfig:
    method: str = "adam"  # or "sgd_momentum"
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_schedule: tuple = ()  # ((epoch, multiplier), ...), applied cumulatively
    epochs: int = 100
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.method not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.method!r}")

    def lr_at(self, epoch):
        lr = self.lr
        for e, mult in self.lr_schedule:
            if epoch >= e:
                lr *= mult
        return lr


@dataclass
class OptimState:
    step: int = 0
    m: np.ndarray | None = None       # adam first moment
    v: np.ndarray | None = None       # adam second moment
    buf: np.ndarray | None = None     # sgd momentum buffer
    skipped: int = 0

    def _ensure(self, n):
        if self.m is None:
            self.m = np.zeros(n)
            self.v = np.zeros(n)
            self.buf = np.zeros(n)


def optimize_step(mlp, grad, state, cfg, lr=None):
    """One in-place parameter update; returns True when applied.

    Non-finite gradients skip the step (flagged in state.skipped). Adam uses
    bias correction with betas (0.9, 0.999) and eps 1e-8; weight decay is
    additive on the gradient for both methods.
    """
    grad = np.asarray(grad, dtype=np.float64)
    theta = mlp.get_params()
    if grad.shape != theta.shape:
        raise ValueError(f"gradient length {grad.shape} != parameter count {theta.shape}")
    if not np.all(np.isfinite(grad)):
        state.skipped += 1
        return False
    state._ensure(theta.size)
    lr = cfg.lr if lr is None else lr
    g = grad + cfg.weight_decay * theta if cfg.weight_decay else grad
    state.step += 1
    if cfg.method == "adam":
        b1, b2, eps = 0.9, 0.999, 1e-8
        state.m = b1 * state.m + (1 - b1) * g
        state.v = b2 * state.v + (1 - b2) * g * g
        mhat = state.m / (1 - b1**state.step)
        vhat = state.v / (1 - b2**state.step)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    else:  # sgd with nesterov momentum
        state.buf = cfg.momentum * state.buf + g
        theta = theta - lr * (g + cfg.momentum * state.buf)
    mlp.set_params(theta)
    return True
