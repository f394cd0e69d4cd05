"""Central finite-difference gradient verification.

The harness treats the function under test as a black box from raw numpy
arrays to a scalar: analytic gradients come from one taped backward pass,
numeric gradients from central differences (f(x+h) - f(x-h)) / 2h applied
element by element. The two paths share no code below the function itself,
which is what makes this an independent oracle.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor

DEFAULT_H = 1e-5
REL_FLOOR = 1e-8


def rel_err(analytic, numeric):
    """max |a - n| / (|n| + floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / (np.abs(n) + REL_FLOOR)))


def numeric_grad(f, arrays, index, h=DEFAULT_H):
    """Central-difference gradient of scalar f(*arrays) wrt arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    out = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(*base)
        flat[i] = orig - h
        fm = f(*base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def check_grads(build, arrays, h=DEFAULT_H, wrt=None):
    """Compare taped gradients of a scalar graph against central differences.

    ``build(*tensors) -> scalar Tensor`` constructs the graph each call;
    ``arrays`` are the leaf values. Returns the max relative error over the
    checked leaves.
    """
    idxs = range(len(arrays)) if wrt is None else wrt

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build(*leaves)
    tape.backward(loss)

    def scalar_f(*vals):
        plain = [Tensor(v) for v in vals]
        return build(*plain).item()

    worst = 0.0
    for i in idxs:
        num = numeric_grad(scalar_f, arrays, i, h=h)
        ana = leaves[i].grad
        if ana is None:
            ana = np.zeros_like(num)
        worst = max(worst, rel_err(ana, num))
    return worst


def spot_check_params(forward_loss, params, n_samples, rng, h=1e-4):
    """Finite-difference a random sample of scalar entries across params.

    ``forward_loss() -> float`` recomputes the loss from current parameter
    values; ``params`` is a name -> Tensor dict whose ``.grad`` slots are
    already populated. Returns (max relative error, per-entry records).
    """
    names = sorted(params)
    entries = []
    for name in names:
        p = params[name]
        for j in range(p.data.size):
            entries.append((name, j))
    pick = rng.choice(len(entries), size=min(n_samples, len(entries)),
                      replace=False)
    records = []
    worst = 0.0
    for idx in pick:
        name, j = entries[int(idx)]
        p = params[name]
        flat = p.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = forward_loss()
        flat[j] = orig - h
        fm = forward_loss()
        flat[j] = orig
        num = (fp - fm) / (2.0 * h)
        ana = 0.0 if p.grad is None else float(p.grad.reshape(-1)[j])
        err = abs(ana - num) / (abs(num) + REL_FLOOR)
        records.append((name, j, ana, num, err))
        worst = max(worst, err)
    return worst, records
