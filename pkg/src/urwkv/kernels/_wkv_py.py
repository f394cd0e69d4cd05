"""Pure-numpy WKV kernels (fallback backend).

Same contracts as the compiled extension: per-sample (T, C) float64 arrays
in, (out, m, dtil) or (dk, dv, dw, du) out. ``m`` and ``dtil`` are the
per-token exponent shift and shifted denominator saved for backward:
the true denominator is ``dtil * exp(m)``.

Token t attends to every token i with weight exp(-(|t-i|-1)/T * w + k_i)
for i != t and exp(u + k_t) for itself; the output is the weight-normalized
sum of values. The scan forms factor the distance weight into a geometric
decay with per-channel ratio exp(-w/T) and keep a running exponent offset
per accumulator so no intermediate ever leaves exp's safe range.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def forward_naive(k, v, w, u):
    T, C = k.shape
    out = np.empty((T, C))
    m = np.empty((T, C))
    dtil = np.empty((T, C))
    idx = np.arange(T)
    for t in range(T):
        d = np.abs(t - idx) - 1.0
        a = (-d[:, None] / T) * w[None, :] + k  # (T, C)
        a[t] = u + k[t]
        mx = a.max(axis=0)
        e = np.exp(a - mx)
        den = e.sum(axis=0)
        num = (e * v).sum(axis=0)
        out[t] = num / den
        m[t] = mx
        dtil[t] = den
    return out, m, dtil


def forward_scan(k, v, w, u):
    T, C = k.shape
    decay = w / T

    def sweep(order):
        A = np.empty((T, C))
        B = np.empty((T, C))
        P = np.empty((T, C))
        aa = np.zeros(C)
        bb = np.zeros(C)
        pp = np.full(C, NEG_INF)
        for t in order:
            A[t] = aa
            B[t] = bb
            P[t] = pp
            ww = pp - decay
            q = np.maximum(ww, k[t])
            e1 = np.exp(ww - q)
            e2 = np.exp(k[t] - q)
            aa = e1 * aa + e2 * v[t]
            bb = e1 * bb + e2
            pp = q
        return A, B, P

    Ap, Bp, Pp = sweep(range(T))
    Am, Bm, Pm = sweep(range(T - 1, -1, -1))

    s = u[None, :] + k
    mm = np.maximum(np.maximum(Pp, Pm), s)
    ep = np.exp(Pp - mm)
    em = np.exp(Pm - mm)
    es = np.exp(s - mm)
    num = Ap * ep + Am * em + v * es
    den = Bp * ep + Bm * em + es
    return num / den, mm, den


def forward_scan_light(k, v, w, u):
    """Scan forward without saved activations: suffix sweep stored, prefix
    sweep fused with the combine step. Lower memory traffic than
    forward_scan; used for inference and benchmarking."""
    T, C = k.shape
    decay = w / T
    Am = np.empty((T, C))
    Bm = np.empty((T, C))
    Pm = np.empty((T, C))
    aa = np.zeros(C)
    bb = np.zeros(C)
    pp = np.full(C, NEG_INF)
    for t in range(T - 1, -1, -1):
        Am[t] = aa
        Bm[t] = bb
        Pm[t] = pp
        ww = pp - decay
        q = np.maximum(ww, k[t])
        e1 = np.exp(ww - q)
        e2 = np.exp(k[t] - q)
        aa = e1 * aa + e2 * v[t]
        bb = e1 * bb + e2
        pp = q

    out = np.empty((T, C))
    aa = np.zeros(C)
    bb = np.zeros(C)
    pp = np.full(C, NEG_INF)
    for t in range(T):
        s = u + k[t]
        mm = np.maximum(np.maximum(pp, Pm[t]), s)
        ep = np.exp(pp - mm)
        em = np.exp(Pm[t] - mm)
        es = np.exp(s - mm)
        out[t] = (aa * ep + Am[t] * em + v[t] * es) / (bb * ep + Bm[t] * em + es)
        ww = pp - decay
        q = np.maximum(ww, k[t])
        e1 = np.exp(ww - q)
        e2 = np.exp(k[t] - q)
        aa = e1 * aa + e2 * v[t]
        bb = e1 * bb + e2
        pp = q
    return out


def backward_naive(k, v, w, u, out, m, dtil, g):
    T, C = k.shape
    dk = np.zeros((T, C))
    dv = np.zeros((T, C))
    dw = np.zeros(C)
    du = np.zeros(C)
    idx = np.arange(T)
    for t in range(T):
        gt = g[t]
        d = np.abs(t - idx) - 1.0
        wn = np.exp((-d[:, None] / T) * w[None, :] + k - m[t]) / dtil[t]
        wn[t] = 0.0
        gw = gt * wn  # (T, C)
        dv += gw
        resid = v - out[t]
        dk += gw * resid
        dw += -(d[:, None] / T * gw * resid).sum(axis=0)
        sw = gt * np.exp(u + k[t] - m[t]) / dtil[t]
        dv[t] += sw
        tmp = sw * (v[t] - out[t])
        dk[t] += tmp
        du += tmp
    return dk, dv, dw, du


def backward_scan(k, v, w, u, out, m, dtil, g):
    T, C = k.shape
    decay = w / T
    fphi = g / dtil
    fpsi = g * out / dtil

    def sweep(order):
        UF = np.empty((T, C))
        US = np.empty((T, C))
        CF = np.empty((T, C))
        CS = np.empty((T, C))
        P = np.empty((T, C))
        uf = np.zeros(C)
        us = np.zeros(C)
        cf = np.zeros(C)
        cs = np.zeros(C)
        pp = np.full(C, NEG_INF)
        for t in order:
            UF[t] = uf
            US[t] = us
            CF[t] = cf
            CS[t] = cs
            P[t] = pp
            ww = pp - decay
            e_in = -m[t]
            q = np.maximum(ww, e_in)
            e1 = np.exp(ww - q)
            e2 = np.exp(e_in - q)
            # distance-weighted first: uses the pre-update plain sums
            cf = e1 * (cf + uf)
            cs = e1 * (cs + us)
            uf = e1 * uf + e2 * fphi[t]
            us = e1 * us + e2 * fpsi[t]
            pp = q
        return UF, US, CF, CS, P

    UFp, USp, CFp, CSp, Pp = sweep(range(T))
    UFm, USm, CFm, CSm, Pm = sweep(range(T - 1, -1, -1))

    # exp(P + k) stays bounded: P tracks -m_t offsets and m_t >= k_i - |w|
    efp = np.exp(Pp + k)
    efm = np.exp(Pm + k)
    S = UFp * efp + UFm * efm
    Sp = USp * efp + USm * efm
    Z = CFp * efp + CFm * efm
    Zp = CSp * efp + CSm * efm

    sw = g * np.exp(u[None, :] + k - m) / dtil
    resid = v - out
    dv = S + sw
    dk = v * S - Sp + sw * resid
    du = (sw * resid).sum(axis=0)
    dw = (-(v * Z - Zp) / T).sum(axis=0)
    return dk, dv, dw, du
