"""SGD with momentum and weight decay, plus the per-epoch learning-rate decay."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class SGD:
    """Momentum SGD with decoupled-from-nothing (classic) weight decay.

    Update rule per parameter:
        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v
    Grads are zeroed after each step.

    ``clip_norm`` optionally rescales the whole gradient (global L2 norm over
    every parameter) before the update; None disables clipping and leaves the
    recurrence above exact.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 momentum: float = 0.9, weight_decay: float = 0.01,
                 clip_norm: float | None = None):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.clip_norm = None if clip_norm is None else float(clip_norm)
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"sgd step: parameter '{name}' has no gradient")
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                                for p in self.params.values()))
            if total > self.clip_norm:
                scale = np.float32(self.clip_norm / total)
                for p in self.params.values():
                    p.grad = p.grad * scale
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data = p.data - self.lr * v
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def lr_at_epoch(initial_lr: float, decay: float, epoch: int) -> float:
    """Learning rate after ``epoch`` whole epochs of multiplicative decay."""
    lr = float(initial_lr)
    for _ in range(epoch):
        lr *= decay
    return lr
