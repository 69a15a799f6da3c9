"""Adam and the plateau learning-rate / early-stop schedule."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LR_PATIENCE = 5
STOP_PATIENCE = 10
LR_FACTOR = 0.2
MIN_DELTA = 1e-4


def adam_step(params, grads, lr, step, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place; ``step`` counts from 1."""
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


@dataclass(frozen=True)
class TrainState:
    step: int = 0
    learning_rate: float = 1e-3
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    epochs_since_lr_change: int = 0
    stop: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def scheduler_update(
    state: TrainState,
    val_loss: float,
    lr_patience: int = LR_PATIENCE,
    stop_patience: int = STOP_PATIENCE,
    factor: float = LR_FACTOR,
    min_delta: float = MIN_DELTA,
) -> TrainState:
    """Epoch-end update.

    The learning rate drops by ``factor`` after ``lr_patience`` epochs
    without an improvement of at least ``min_delta``; training stops after
    ``stop_patience`` such epochs in a row.
    """
    if val_loss < state.best_val_loss - min_delta:
        return replace(
            state,
            best_val_loss=float(val_loss),
            epochs_since_improvement=0,
            epochs_since_lr_change=0,
            stop=False,
        )
    stale = state.epochs_since_improvement + 1
    wait = state.epochs_since_lr_change + 1
    lr = state.learning_rate
    if wait >= lr_patience:
        lr *= factor
        wait = 0
    return replace(
        state,
        learning_rate=lr,
        epochs_since_improvement=stale,
        epochs_since_lr_change=wait,
        stop=stale >= stop_patience,
    )
