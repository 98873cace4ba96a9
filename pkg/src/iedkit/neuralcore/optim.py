"""RMSprop without momentum or centering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-7
    accumulators: dict = field(default_factory=dict)


def rmsprop_step(params, grads, state):
    """Update trainable parameters in place and return them with the state.

    a <- rho*a + (1-rho)*g**2;  theta <- theta - lr*g / (sqrt(a) + eps)

    ``grads`` maps parameter name to gradient; a missing or ``None`` gradient
    counts as zero. Frozen parameters are skipped entirely.
    """
    for p in params:
        if not p.trainable:
            continue
        g = grads.get(p.name)
        if g is None:
            g = np.zeros_like(p.data)
        acc = state.accumulators.get(p.name)
        if acc is None:
            acc = np.zeros_like(p.data)
        acc = state.rho * acc + (1.0 - state.rho) * g * g
        state.accumulators[p.name] = acc
        p.data -= state.lr * g / (np.sqrt(acc) + state.eps)
    return params, state


class RMSprop:
    def __init__(self, params, lr=1e-3, rho=0.9, eps=1e-7):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, rho=rho, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = {p.name: p.grad for p in self.params if p.trainable}
        rmsprop_step(self.params, grads, self.state)
