"""SGD with Nesterov momentum and L2 weight decay.

Per parameter theta with raw gradient g0 the step is

    g = g0 + weight_decay * theta
    v = momentum * v + g
    theta -= lr * (g + momentum * v)

i.e. decay is folded into the gradient before the velocity update and the
lookahead term g + momentum*v is applied, matching the convention of the
mainstream training frameworks. With momentum = weight_decay = 0 this reduces
exactly to theta -= lr * g0.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class NesterovSGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-4,
                 momentum: float = 0.5, weight_decay: float = 0.005):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update params in place; velocity tracks each parameter by name."""
        for name, theta in params.items():
            g0 = grads[name]
            v = self.velocity[name]
            if g0.shape != theta.shape or v.shape != theta.shape:
                raise ShapeError(
                    f"{name}: parameter {theta.shape}, gradient {g0.shape} and "
                    f"velocity {v.shape} shapes must agree"
                )
            g = g0 + self.weight_decay * theta if self.weight_decay else g0
            v *= self.momentum
            v += g
            theta -= self.lr * (g + self.momentum * v)
