"""Lightweight parameter containers.

A Module is any object holding Parameter tensors and/or sub-Modules as
attributes; ``named_params`` walks them in insertion order, which gives
every parameter a stable, unique registry name.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, parameter


class Module:
    def named_params(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield f"{prefix}{key}", val
            elif isinstance(val, Module):
                yield from val.named_params(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{key}.{i}.")

    def param_dict(self, prefix=""):
        return dict(self.named_params(prefix))

    def num_params(self):
        return sum(p.data.size for _, p in self.named_params())


def linear_param(rng, fan_in, fan_out, name=None):
    """Weight matrix with entries ~ N(0, 1/fan_in)."""
    return parameter(rng.normal(0.0, fan_in ** -0.5, (fan_in, fan_out)), name=name)


def zeros_param(shape, name=None):
    return parameter(np.zeros(shape), name=name)


def const_param(shape, value, name=None):
    return parameter(np.full(shape, float(value)), name=name)
