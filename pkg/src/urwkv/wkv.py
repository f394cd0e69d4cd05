"""Bidirectional WKV attention: O(T^2) reference and O(T) streaming scan.

Each output token is a convex combination of all value vectors, weighted by
exponential key scores decayed with token distance. The distance term
divides by T, which makes the effective decay resolution dependent: running
a model at a different token count than it was trained at changes the decay
profile. This module follows that formula literally.

Two mathematically identical forms are exposed; ``wkv_scan`` is the one the
model uses, ``wkv_naive`` is the reference the scan is verified against.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .tensor import ShapeError, record_op

BENCH_CSV_HEADER = "form,T,C,ns_per_token"


class EmptySequenceError(ValueError):
    """WKV over zero tokens is undefined."""


class MissingActivationsError(RuntimeError):
    """Backward called without the forward pass's saved activations."""


class WkvParams:
    """Per-channel decay vector w and current-token gain vector u.

    w is deliberately unconstrained; the attention formula is well defined
    for any real decay. Default init: w linearly spaced in [-1, 1] so
    channels start with diverse effective receptive fields, u = 0.5.
    """

    def __init__(self, w, u):
        w = np.asarray(w, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if w.ndim != 1 or w.shape != u.shape:
            raise ShapeError(f"w and u must be equal-length vectors, got {w.shape} vs {u.shape}")
        if not (np.isfinite(w).all() and np.isfinite(u).all()):
            raise ValueError("WkvParams must be finite")
        self.w = w
        self.u = u

    @classmethod
    def default_init(cls, channels):
        if channels == 1:
            w = np.zeros(1)
        else:
            w = np.linspace(-1.0, 1.0, channels)
        return cls(w, np.full(channels, 0.5))

    @property
    def channels(self):
        return self.w.shape[0]


def _check_inputs(k, v, params):
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if k.ndim != 2 or k.shape != v.shape:
        raise ShapeError(f"k and v must be matching (T, C) arrays, got {k.shape} vs {v.shape}")
    if k.shape[0] == 0:
        raise EmptySequenceError("WKV requires at least one token (T >= 1)")
    if k.shape[1] != params.channels:
        raise ShapeError(f"channel mismatch: inputs have {k.shape[1]}, params have {params.channels}")
    return k, v


def wkv_naive(k, v, params, backend="active"):
    """O(T^2) reference evaluation with per-(t, c) exponent shifting."""
    k, v = _check_inputs(k, v, params)
    out, _, _ = kernels.get_backend(backend).forward_naive(k, v, params.w, params.u)
    return out


def wkv_scan(k, v, params, backend="active"):
    """O(T) two-pass prefix/suffix scan; identical value to wkv_naive."""
    k, v = _check_inputs(k, v, params)
    return kernels.get_backend(backend).forward_scan_light(k, v, params.w, params.u)


def wkv_forward(k, v, params, form="scan", backend="active"):
    """Forward pass that also returns the saved activations for backward."""
    k, v = _check_inputs(k, v, params)
    mod = kernels.get_backend(backend)
    fn = mod.forward_scan if form == "scan" else mod.forward_naive
    out, m, dtil = fn(k, v, params.w, params.u)
    return out, (out, m, dtil)


def wkv_backward(k, v, params, upstream, saved, form="scan", backend="active"):
    """Exact gradients (dk, dv, dw, du) of the attention output.

    ``saved`` is the activation triple from wkv_forward; the backward
    differentiates the shifted-stable expressions directly instead of
    re-deriving the unshifted formula, so the scan form stays O(T).
    """
    if saved is None:
        raise MissingActivationsError("wkv_backward requires the saved activations from wkv_forward")
    k, v = _check_inputs(k, v, params)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != k.shape:
        raise ShapeError(f"upstream grad shape {upstream.shape} != input shape {k.shape}")
    out, m, dtil = saved
    mod = kernels.get_backend(backend)
    fn = mod.backward_scan if form == "scan" else mod.backward_naive
    return fn(k, v, params.w, params.u, out, m, dtil, upstream)


def wkv_attention(k, v, w, u, form="scan"):
    """Taped (B, T, C) attention op over Tensor inputs.

    k, v: Tensor[B, T, C]; w, u: Tensor[C]. Channels and batch elements are
    independent; the batch loop simply reuses the per-sample kernel.
    """
    if k.shape != v.shape or k.ndim != 3:
        raise ShapeError(f"wkv_attention expects matching (B, T, C), got {k.shape} vs {v.shape}")
    B, T, C = k.shape
    if T == 0:
        raise EmptySequenceError("WKV requires at least one token (T >= 1)")
    if w.shape != (C,) or u.shape != (C,):
        raise ShapeError(f"w/u must have shape ({C},), got {w.shape} and {u.shape}")
    mod = kernels.get_backend()
    fwd = mod.forward_scan if form == "scan" else mod.forward_naive
    bwd = mod.backward_scan if form == "scan" else mod.backward_naive

    out = np.empty((B, T, C))
    saved = []
    for b in range(B):
        kb = np.ascontiguousarray(k.data[b])
        vb = np.ascontiguousarray(v.data[b])
        ob, mb, db = fwd(kb, vb, w.data, u.data)
        out[b] = ob
        saved.append((kb, vb, ob, mb, db))

    def backward(g, needs):
        dk = np.empty((B, T, C)) if needs[0] else None
        dv = np.empty((B, T, C)) if needs[1] else None
        dw = np.zeros(C)
        du = np.zeros(C)
        for b in range(B):
            kb, vb, ob, mb, db = saved[b]
            gb = np.ascontiguousarray(g[b])
            dkb, dvb, dwb, dub = bwd(kb, vb, w.data, u.data, ob, mb, db, gb)
            if dk is not None:
                dk[b] = dkb
            if dv is not None:
                dv[b] = dvb
            dw += dwb
            du += dub
        return dk, dv, dw if needs[2] else None, du if needs[3] else None

    return record_op("wkv", (k, v, w, u), out, backward)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def bench_wkv(t_list, channels, repetitions, forms=("naive", "scan"),
              backend="active", seed=0):
    """Time both kernel forms; returns rows of (form, T, C, ns_per_token).

    Each measurement is the best of ``repetitions`` timed runs on the same
    random inputs (best-of is robust to scheduler noise).
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if list(t_list) != sorted(t_list) or len(t_list) == 0:
        raise ValueError("t_list must be non-empty and ascending")
    mod = kernels.get_backend(backend)
    rng = np.random.default_rng(seed)
    rows = []
    for T in t_list:
        k = rng.uniform(-1, 1, (T, channels))
        v = rng.uniform(-1, 1, (T, channels))
        w = rng.uniform(-1, 1, channels)
        u = rng.uniform(-1, 1, channels)
        for form in forms:
            fn = mod.forward_scan_light if form == "scan" else mod.forward_naive
            best = float("inf")
            for _ in range(repetitions):
                t0 = time.perf_counter()
                fn(k, v, w, u)
                best = min(best, time.perf_counter() - t0)
            rows.append((form, int(T), int(channels), best / T * 1e9))
    return rows


def rows_to_csv(rows):
    lines = [BENCH_CSV_HEADER]
    for form, T, C, ns in rows:
        lines.append(f"{form},{T},{C},{ns:.3f}")
    return "\n".join(lines) + "\n"


def loglog_slope(rows, form):
    """Least-squares slope of log(total time) vs log(T) for one form."""
    pts = [(T, ns * T) for f, T, C, ns in rows if f == form]
    if len(pts) < 2:
        raise ValueError(f"need at least two T values for form {form!r}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])
