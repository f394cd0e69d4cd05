"""AdamW with decoupled weight decay over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError


class AdamWState:
    """Per-parameter first/second moment accumulators plus step counter.

    Defaults follow the training recipe this stack ships with
    (lr 3e-4, weight decay 1e-4).
    """

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-4):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.frozen = set()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set_frozen(self, names):
        names = set(names)
        unknown = names - set(self.params)
        if unknown:
            raise KeyError(f"freezing unknown parameters: {sorted(unknown)}")
        self.frozen = names

    def step(self):
        """One AdamW update over all unfrozen params with a gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if name in self.frozen:
                continue
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"'{name}' shape {p.data.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps) \
                - self.lr * self.weight_decay * p.data


def adamw_step(state):
    state.step()
    return state
