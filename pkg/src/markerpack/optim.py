"""Adaptive-moment gradient descent with linear warmup then linear decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def update(
        self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float
    ) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step
        bias2 = 1.0 - b2 ** self.step
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            tensors[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def linear_schedule(step: int, total_steps: int, warmup_fraction: float, peak_lr: float) -> float:
    """Learning rate at a 0-based step: linear ramp up, then linear decay to 0."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0.0 <= warmup_fraction <= 1.0:
        raise ConfigError("warmup_fraction must be in [0, 1]")
    warmup = max(int(round(total_steps * warmup_fraction)), 0)
    if step < warmup:
        return peak_lr * (step + 1) / warmup
    if total_steps == warmup:
        return peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warmup)
