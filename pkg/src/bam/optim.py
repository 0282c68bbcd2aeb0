"""Adam optimizer with bias correction and an external halving schedule."""

from __future__ import annotations

import numpy as np


class GradientError(RuntimeError):
    """Raised when a step is refused because a gradient is not finite."""


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        for name, p in self.params:
            g = p.grad
            if g is not None and not np.isfinite(g).all():
                raise GradientError(f"non-finite gradient in parameter {name!r}; step refused")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_arrays(self):
        """Flat view of optimizer state for checkpointing."""
        out = {"t": self.t}
        for name, _ in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, t, moments):
        self.t = int(t)
        for name, _ in self.params:
            self.m[name] = moments[f"m.{name}"].copy()
            self.v[name] = moments[f"v.{name}"].copy()


def halved_lr(base_lr, epoch, period):
    """Learning rate for ``epoch`` under halve-every-``period``-epochs."""
    if period <= 0:
        return base_lr
    return base_lr * 0.5 ** (epoch // period)
