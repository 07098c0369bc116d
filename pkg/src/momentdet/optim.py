"""Adam with decoupled weight decay, warmup/cosine schedule, EMA, clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    base_lr: float
    warmup_steps: int
    total_steps: int
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor]) -> float:
        """One Adam update over named parameters; returns the lr used."""
        self.step_count += 1
        lr = lr_at(self.step_count - 1, self.base_lr, self.warmup_steps, self.total_steps)
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m = self.first_moment.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
                self.first_moment[name] = m
                self.second_moment[name] = v
            else:
                v = self.second_moment[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype, copy=False)
        return lr


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class EmaState:
    decay: float
    shadow: dict = field(default_factory=dict)

    def update(self, params: dict[str, Tensor]):
        """shadow <- decay * shadow + (1 - decay) * params."""
        for name, p in params.items():
            s = self.shadow.get(name)
            if s is None:
                self.shadow[name] = p.data.copy()
            else:
                s *= self.decay
                s += (1.0 - self.decay) * p.data

    def copy_to(self, params: dict[str, Tensor]):
        for name, p in params.items():
            if name in self.shadow:
                p.data[...] = self.shadow[name]
