"""SGD with momentum/weight decay and the polynomial learning-rate schedule."""

from __future__ import annotations

import numpy as np


def poly_lr(base_lr, iteration, total_iters, power=0.9):
    """base_lr * (1 - iteration/total_iters) ** power."""
    if total_iters <= 0:
        raise ValueError(f"poly_lr: total_iters must be positive, got {total_iters}")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"poly_lr: iteration {iteration} outside [0, {total_iters}]")
    return base_lr * (1.0 - iteration / total_iters) ** power


class SGD:
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.

    Built from named parameters so the velocity buffers can ride along in
    checkpoints.
    """

    def __init__(self, named_params, momentum=0.9, weight_decay=5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._params = list(named_params)
        self._velocity = {name: np.zeros_like(p.data) for name, p in self._params}

    def zero_grad(self):
        for _, p in self._params:
            p.zero_grad()

    def step(self, lr):
        if lr <= 0:
            raise ValueError(f"SGD.step: lr must be positive, got {lr}")
        for name, p in self._params:
            if p.grad is None:
                continue
            v = self._velocity[name]
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= (p.data.dtype.type(lr)) * v

    def state_dict(self):
        return {name: v for name, v in self._velocity.items()}

    def load_state_dict(self, state):
        for name, v in self._velocity.items():
            if name not in state:
                raise KeyError(f"optimizer state missing {name!r}")
            if state[name].shape != v.shape:
                raise ValueError(f"optimizer state {name!r}: shape {state[name].shape} "
                                 f"does not match {v.shape}")
            v[...] = state[name]
