"""Projected gradient descent attacks in the L-inf ball, with both the
cross-entropy and margin objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..losses import MarginField, cross_entropy_input_grad


@dataclass
class AttackConfig:
    eps_attack: float = 0.3
    steps: int = 40
    step_size: float = 0.01
    objective: str = "xent"  # or "margin"
    random_start: bool = True
    restarts: int = 1

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.objective not in ("xent", "margin"):
            raise ValueError(f"unknown attack objective {self.objective!r}")


def _margin_values_and_grads(mlp, X, y):
    """Per-example margin of the true class and its input gradient."""
    vals = np.empty(X.shape[0])
    grads = np.empty_like(X)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        view = MarginField(mlp, cls)
        vals[idx] = view.forward(X[idx])[:, 0]
        grads[idx] = view.jacobian_input(X[idx])[:, 0, :]
    return vals, grads


def predict(mlp, X):
    """Predicted class per row; scalar nets return +-1 with sign(0) = +1."""
    logits = mlp.forward(X)
    if mlp.output_dim == 1:
        return np.where(logits[:, 0] >= 0.0, 1, -1)
    return np.argmax(logits, axis=1)


def _labels_match(mlp, pred, y):
    if mlp.output_dim == 1:
        return pred == np.where(np.asarray(y) > 0, 1, -1)
    return pred == np.asarray(y)


def pgd_attack(mlp, X, y, cfg, clip_box=None, rng_seed=0):
    """Iterated signed-gradient attack, projected onto the eps ball (and the
    data box when given) after every step. Returns the worst iterate found
    across restarts, judged by the true-class margin."""
    X0 = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(rng_seed)
    eps = cfg.eps_attack
    lo = X0 - eps
    hi = X0 + eps
    if clip_box is not None:
        lo = np.maximum(lo, clip_box[0])
        hi = np.minimum(hi, clip_box[1])

    best = X0.copy()
    best_margin, _ = _margin_values_and_grads(mlp, best, y)
    for _ in range(max(cfg.restarts, 1)):
        cur = X0 + rng.uniform(-eps, eps, size=X0.shape) if cfg.random_start else X0.copy()
        cur = np.clip(cur, lo, hi)
        for _ in range(cfg.steps):
            if cfg.objective == "xent":
                g = cross_entropy_input_grad(mlp, cur, y)
                cur = cur + cfg.step_size * np.sign(g)
            else:
                _, g = _margin_values_and_grads(mlp, cur, y)
                cur = cur - cfg.step_size * np.sign(g)
            cur = np.clip(cur, lo, hi)
        margin, _ = _margin_values_and_grads(mlp, cur, y)
        take = margin < best_margin
        best[take] = cur[take]
        best_margin[take] = margin[take]
    return best


def robust_accuracy(mlp, X, y, cfg, clip_box=None, rng_seed=0):
    """Fraction of examples still classified correctly after the attack."""
    adv = pgd_attack(mlp, X, y, cfg, clip_box, rng_seed)
    return float(np.mean(_labels_match(mlp, predict(mlp, adv), y)))
