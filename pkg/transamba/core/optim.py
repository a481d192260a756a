from __future__ import annotations

import math
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from .module import Parameter


class SGD:
    """Stochastic gradient descent with heavy-ball momentum.

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: List[Optional[np.ndarray]] = [None] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self._velocity[i]
            v = g.copy() if v is None else self.momentum * v + g
            self._velocity[i] = v
            p.data = (p.data - self.lr * v).astype(p.dtype, copy=False)


class AdamW:
    """Adam with bias-corrected moments and decoupled weight decay.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ValueError(f"betas must be in [0, 1), got {betas}")
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: List[Optional[np.ndarray]] = [None] * len(self.params)
        self._v: List[Optional[np.ndarray]] = [None] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        beta1, beta2 = self.betas
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            m = (1.0 - beta1) * g if self._m[i] is None else beta1 * self._m[i] + (1.0 - beta1) * g
            v = (1.0 - beta2) * g * g if self._v[i] is None else beta2 * self._v[i] + (1.0 - beta2) * g * g
            self._m[i], self._v[i] = m, v
            m_hat = m / (1.0 - beta1**self.t)
            v_hat = v / (1.0 - beta2**self.t)
            update = m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.dtype, copy=False)


class CosineSchedule:
    """Linear warmup over ``warmup_steps``, then cosine decay to ``min_lr``.

    The decay spans the ``total_steps - warmup_steps`` steps after warmup.
    """

    def __init__(self, base_lr: float, total_steps: int, min_lr: float = 0.0, warmup_steps: int = 0):
        if warmup_steps < 0:
            raise ValueError(f"warmup_steps must be >= 0, got {warmup_steps}")
        self.base_lr = base_lr
        self.total_steps = max(1, total_steps)
        self.min_lr = min_lr
        self.warmup_steps = min(warmup_steps, self.total_steps - 1)

    def __call__(self, step: int) -> float:
        step = max(step, 0)
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / (self.warmup_steps + 1)
        span = self.total_steps - self.warmup_steps
        progress = min(step - self.warmup_steps, span) / span
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


Optimizer = Union[SGD, AdamW]


def build_optimizer(
    name: str,
    params: Iterable[Parameter],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> Optimizer:
    """``sgd`` or ``adamw``; for AdamW ``momentum`` is the first-moment decay."""
    if name == "sgd":
        return SGD(params, lr, momentum=momentum, weight_decay=weight_decay)
    if name == "adamw":
        return AdamW(params, lr, betas=(momentum, 0.999), weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r} (expected sgd or adamw)")


__all__ = ["AdamW", "CosineSchedule", "Optimizer", "SGD", "build_optimizer"]
