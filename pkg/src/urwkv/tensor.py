"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

Every operation is a pure function: it reads immutable input buffers,
produces a fresh output buffer, and (when a tape is active and a gradient
is needed) appends one node to the tape. Gradients flow by walking the
tape once, in reverse. There is no graph retained on the tensors
themselves, so activations are freed as soon as the tape is dropped.

Debug mode (``set_debug(True)`` or env ``URWKV_DEBUG=1``) checks every op
output for NaN/Inf; release mode skips the check.
"""

from __future__ import annotations

import itertools
import os

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "tensor",
    "parameter",
    "record_op",
    "push_tape",
    "pop_tape",
    "active_tape",
    "set_debug",
    "debug_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "affine",
    "matmul",
    "exp",
    "log",
    "sigmoid",
    "squared_relu",
    "clip01",
    "layer_norm",
    "log_softmax",
    "sum_",
    "mean_",
    "reshape",
    "transpose",
    "concat",
    "slice_axis",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """Debug-mode sentinel: an op produced NaN or Inf from finite inputs."""


class TapeError(RuntimeError):
    """Tape misuse: reused tape, detached or non-scalar loss."""


_ids = itertools.count()
_DEBUG = os.environ.get("URWKV_DEBUG", "") not in ("", "0")


def set_debug(flag):
    global _DEBUG
    _DEBUG = bool(flag)


def debug_enabled():
    return _DEBUG


class Tensor:
    """A shaped view over a contiguous float64 buffer.

    ``requires_grad`` marks trainable leaves; interior results are tracked
    by the active tape, not by this flag. ``grad`` is populated (summed)
    by ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "tid", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tid = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad}{tag})"


def tensor(data):
    """Constant (non-trainable) tensor."""
    return Tensor(data, requires_grad=False)


def parameter(data, name=None):
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("op", "inputs", "out_tid", "needs", "bwd")

    def __init__(self, op, inputs, out_tid, needs, bwd):
        self.op = op
        self.inputs = inputs
        self.out_tid = out_tid
        self.needs = needs
        self.bwd = bwd


class Tape:
    """Ordered record of executed ops; single-use for one backward pass."""

    def __init__(self):
        self.nodes = []
        self._tracked = set()
        self._consumed = False

    def __enter__(self):
        push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        pop_tape(self)
        return False

    def tracks(self, t):
        return t.tid in self._tracked

    def backward(self, loss):
        """Accumulate gradients of a scalar loss into ``.grad`` slots.

        Returns the full tid -> gradient dict (leaves and interiors).
        """
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        if loss.tid not in self._tracked:
            raise TapeError("loss is detached from this tape")
        self._consumed = True

        grads = {loss.tid: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node.out_tid, None)
            if g is None:
                continue
            contribs = node.bwd(g, node.needs)
            for t, c, needed in zip(node.inputs, contribs, node.needs):
                if not needed or c is None:
                    continue
                prev = grads.get(t.tid)
                grads[t.tid] = c if prev is None else prev + c
                if t.requires_grad:
                    # leaves keep their running total visible via .grad
                    t.grad = grads[t.tid]
        return grads


_tape_stack = []


def push_tape(tape):
    _tape_stack.append(tape)


def pop_tape(tape):
    popped = _tape_stack.pop()
    if popped is not tape:
        raise TapeError("tape stack corrupted: mismatched push/pop")


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


def record_op(op, inputs, out_data, bwd):
    """Finalize an op: wrap the result, debug-check it, record on the tape.

    ``bwd(g, needs)`` must return one gradient array (or None) per input,
    aligned with ``inputs``. This hook is how other modules register custom
    differentiable primitives (WKV, shifts, wavelets, resampling).
    """
    if _DEBUG and not np.isfinite(out_data).all():
        raise NonFiniteError(f"non-finite values produced by op '{op}'")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        needs = tuple(
            t.requires_grad or t.tid in tape._tracked for t in inputs
        )
        if any(needs):
            tape._tracked.add(out.tid)
            tape.nodes.append(_Node(op, tuple(inputs), out.tid, needs, bwd))
    return out


def _unbroadcast(g, shape):
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    out = a.data + b.data

    def bwd(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(g, b.data.shape) if needs[1] else None,
        )

    return record_op("add", (a, b), out, bwd)


def sub(a, b):
    out = a.data - b.data

    def bwd(g, needs):
        return (
            _unbroadcast(g, a.data.shape) if needs[0] else None,
            _unbroadcast(-g, b.data.shape) if needs[1] else None,
        )

    return record_op("sub", (a, b), out, bwd)


def mul(a, b):
    out = a.data * b.data

    def bwd(g, needs):
        return (
            _unbroadcast(g * b.data, a.data.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.data.shape) if needs[1] else None,
        )

    return record_op("mul", (a, b), out, bwd)


def div(a, b):
    out = a.data / b.data

    def bwd(g, needs):
        ga = _unbroadcast(g / b.data, a.data.shape) if needs[0] else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if needs[1] else None
        )
        return ga, gb

    return record_op("div", (a, b), out, bwd)


def affine(a, scale=1.0, shift=0.0):
    """Elementwise a*scale + shift with python-scalar coefficients."""
    out = a.data * scale + shift

    def bwd(g, needs):
        return (g * scale,)

    return record_op("affine", (a,), out, bwd)


def exp(a):
    with np.errstate(over="ignore"):  # the debug sentinel reports non-finites
        out = np.exp(a.data)

    def bwd(g, needs):
        return (g * out,)

    return record_op("exp", (a,), out, bwd)


def log(a):
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)

    def bwd(g, needs):
        return (g / a.data,)

    return record_op("log", (a,), out, bwd)


def sigmoid(a):
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bwd(g, needs):
        return (g * out * (1.0 - out),)

    return record_op("sigmoid", (a,), out, bwd)


def squared_relu(a):
    r = np.maximum(a.data, 0.0)
    out = r * r

    def bwd(g, needs):
        return (g * 2.0 * r,)

    return record_op("squared_relu", (a,), out, bwd)


def clip01(a):
    """Clamp to [0, 1]; gradient passes only through the interior."""
    out = np.clip(a.data, 0.0, 1.0)

    def bwd(g, needs):
        inside = (a.data > 0.0) & (a.data < 1.0)
        return (g * inside,)

    return record_op("clip01", (a,), out, bwd)


# ---------------------------------------------------------------------------
# Linear algebra / normalization
# ---------------------------------------------------------------------------

def matmul(a, b):
    """a[..., M, K] @ b[K, N]; leading axes of ``a`` are batch axes."""
    if a.ndim < 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects a.ndim>=2 and 2-D b, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g, needs):
        ga = g @ b.data.T if needs[0] else None
        if needs[1]:
            am = a.data.reshape(-1, a.shape[-1])
            gm = g.reshape(-1, b.data.shape[1])
            gb = am.T @ gm
        else:
            gb = None
        return ga, gb

    return record_op("matmul", (a, b), out, bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({c},), "
            f"got gamma {gamma.shape}, beta {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g, needs):
        gh = g * gamma.data
        if needs[0]:
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (gh - m1 - xhat * m2)
        else:
            gx = None
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if needs[1] else None
        gbeta = g.sum(axis=lead) if needs[2] else None
        return gx, ggamma, gbeta

    return record_op("layer_norm", (x, gamma, beta), out, bwd)


def log_softmax(x, axis=-1):
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g, needs):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return record_op("log_softmax", (x,), out, bwd)


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if axis is not None:
        raw = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(sorted(ax % x.ndim for ax in raw))
    else:
        axes = None

    def bwd(g, needs):
        if axes is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return record_op("sum", (x,), np.asarray(out), bwd)


def mean_(x, axis=None, keepdims=False):
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.data.shape[ax]
    return affine(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    out = x.data.reshape(shape)

    def bwd(g, needs):
        return (g.reshape(x.data.shape),)

    return record_op("reshape", (x,), out, bwd)


def transpose(x, axes):
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def bwd(g, needs):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return record_op("transpose", (x,), out, bwd)


def concat(parts, axis=-1):
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g, needs):
        grads = []
        for i, p in enumerate(parts):
            if needs[i]:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(bounds[i], bounds[i + 1])
                grads.append(np.ascontiguousarray(g[tuple(sl)]))
            else:
                grads.append(None)
        return tuple(grads)

    return record_op("concat", tuple(parts), out, bwd)


def slice_axis(x, axis, start, stop):
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = np.ascontiguousarray(x.data[sl])

    def bwd(g, needs):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return record_op("slice", (x,), out, bwd)
