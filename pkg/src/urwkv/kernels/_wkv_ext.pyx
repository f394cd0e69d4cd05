# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled WKV kernels: naive O(T^2) and two-pass O(T) scan, fwd + bwd.

Mirrors _wkv_py exactly; see that module for the math. All buffers are
C-contiguous float64.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fmax, INFINITY

cnp.import_array()


def forward_naive(double[:, ::1] k, double[:, ::1] v,
                  double[::1] w, double[::1] u):
    cdef Py_ssize_t T = k.shape[0]
    cdef Py_ssize_t C = k.shape[1]
    out_arr = np.empty((T, C))
    m_arr = np.empty((T, C))
    dtil_arr = np.empty((T, C))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] m = m_arr
    cdef double[:, ::1] dtil = dtil_arr
    num_arr = np.empty(C)
    den_arr = np.empty(C)
    mx_arr = np.empty(C)
    cdef double[::1] num = num_arr
    cdef double[::1] den = den_arr
    cdef double[::1] mx = mx_arr
    cdef Py_ssize_t t, i, c
    cdef double d, a, e, tf = <double> T

    for t in range(T):
        for c in range(C):
            mx[c] = u[c] + k[t, c]
        for i in range(T):
            if i == t:
                continue
            d = <double> ((t - i if t > i else i - t) - 1)
            for c in range(C):
                a = -(d * w[c]) / tf + k[i, c]
                if a > mx[c]:
                    mx[c] = a
        for c in range(C):
            num[c] = 0.0
            den[c] = 0.0
        for i in range(T):
            if i == t:
                continue
            d = <double> ((t - i if t > i else i - t) - 1)
            for c in range(C):
                e = exp(-(d * w[c]) / tf + k[i, c] - mx[c])
                num[c] += e * v[i, c]
                den[c] += e
        for c in range(C):
            e = exp(u[c] + k[t, c] - mx[c])
            num[c] += e * v[t, c]
            den[c] += e
            out[t, c] = num[c] / den[c]
            m[t, c] = mx[c]
            dtil[t, c] = den[c]
    return out_arr, m_arr, dtil_arr


def forward_scan(double[:, ::1] k, double[:, ::1] v,
                 double[::1] w, double[::1] u):
    cdef Py_ssize_t T = k.shape[0]
    cdef Py_ssize_t C = k.shape[1]
    cdef double tf = <double> T
    out_arr = np.empty((T, C))
    m_arr = np.empty((T, C))
    dtil_arr = np.empty((T, C))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] m = m_arr
    cdef double[:, ::1] dtil = dtil_arr

    Ap_a = np.empty((T, C)); Bp_a = np.empty((T, C)); Pp_a = np.empty((T, C))
    Am_a = np.empty((T, C)); Bm_a = np.empty((T, C)); Pm_a = np.empty((T, C))
    cdef double[:, ::1] Ap = Ap_a, Bp = Bp_a, Pp = Pp_a
    cdef double[:, ::1] Am = Am_a, Bm = Bm_a, Pm = Pm_a
    aa_a = np.zeros(C); bb_a = np.zeros(C); pp_a = np.full(C, -INFINITY)
    cdef double[::1] aa = aa_a, bb = bb_a, pp = pp_a
    cdef Py_ssize_t t, c
    cdef double ww, q, e1, e2, s, mm, ep, em, es, nume, dene

    for t in range(T):
        for c in range(C):
            Ap[t, c] = aa[c]
            Bp[t, c] = bb[c]
            Pp[t, c] = pp[c]
            ww = pp[c] - w[c] / tf
            q = fmax(ww, k[t, c])
            e1 = exp(ww - q)
            e2 = exp(k[t, c] - q)
            aa[c] = e1 * aa[c] + e2 * v[t, c]
            bb[c] = e1 * bb[c] + e2
            pp[c] = q
    for c in range(C):
        aa[c] = 0.0
        bb[c] = 0.0
        pp[c] = -INFINITY
    for t in range(T - 1, -1, -1):
        for c in range(C):
            Am[t, c] = aa[c]
            Bm[t, c] = bb[c]
            Pm[t, c] = pp[c]
            ww = pp[c] - w[c] / tf
            q = fmax(ww, k[t, c])
            e1 = exp(ww - q)
            e2 = exp(k[t, c] - q)
            aa[c] = e1 * aa[c] + e2 * v[t, c]
            bb[c] = e1 * bb[c] + e2
            pp[c] = q
    for t in range(T):
        for c in range(C):
            s = u[c] + k[t, c]
            mm = fmax(fmax(Pp[t, c], Pm[t, c]), s)
            ep = exp(Pp[t, c] - mm)
            em = exp(Pm[t, c] - mm)
            es = exp(s - mm)
            nume = Ap[t, c] * ep + Am[t, c] * em + v[t, c] * es
            dene = Bp[t, c] * ep + Bm[t, c] * em + es
            out[t, c] = nume / dene
            m[t, c] = mm
            dtil[t, c] = dene
    return out_arr, m_arr, dtil_arr


def forward_scan_light(double[:, ::1] k, double[:, ::1] v,
                       double[::1] w, double[::1] u):
    """Scan forward without saved activations; see _wkv_py for the scheme."""
    cdef Py_ssize_t T = k.shape[0]
    cdef Py_ssize_t C = k.shape[1]
    cdef double tf = <double> T
    out_arr = np.empty((T, C))
    cdef double[:, ::1] out = out_arr
    Am_a = np.empty((T, C)); Bm_a = np.empty((T, C)); Pm_a = np.empty((T, C))
    cdef double[:, ::1] Am = Am_a, Bm = Bm_a, Pm = Pm_a
    aa_a = np.zeros(C); bb_a = np.zeros(C); pp_a = np.full(C, -INFINITY)
    cdef double[::1] aa = aa_a, bb = bb_a, pp = pp_a
    cdef Py_ssize_t t, c
    cdef double ww, q, e1, e2, s, mm, ep, em, es

    for t in range(T - 1, -1, -1):
        for c in range(C):
            Am[t, c] = aa[c]
            Bm[t, c] = bb[c]
            Pm[t, c] = pp[c]
            ww = pp[c] - w[c] / tf
            q = fmax(ww, k[t, c])
            e1 = exp(ww - q)
            e2 = exp(k[t, c] - q)
            aa[c] = e1 * aa[c] + e2 * v[t, c]
            bb[c] = e1 * bb[c] + e2
            pp[c] = q
    for c in range(C):
        aa[c] = 0.0
        bb[c] = 0.0
        pp[c] = -INFINITY
    for t in range(T):
        for c in range(C):
            s = u[c] + k[t, c]
            mm = fmax(fmax(pp[c], Pm[t, c]), s)
            ep = exp(pp[c] - mm)
            em = exp(Pm[t, c] - mm)
            es = exp(s - mm)
            out[t, c] = (aa[c] * ep + Am[t, c] * em + v[t, c] * es) \
                / (bb[c] * ep + Bm[t, c] * em + es)
            ww = pp[c] - w[c] / tf
            q = fmax(ww, k[t, c])
            e1 = exp(ww - q)
            e2 = exp(k[t, c] - q)
            aa[c] = e1 * aa[c] + e2 * v[t, c]
            bb[c] = e1 * bb[c] + e2
            pp[c] = q
    return out_arr


def backward_naive(double[:, ::1] k, double[:, ::1] v,
                   double[::1] w, double[::1] u,
                   double[:, ::1] out, double[:, ::1] m,
                   double[:, ::1] dtil, double[:, ::1] g):
    cdef Py_ssize_t T = k.shape[0]
    cdef Py_ssize_t C = k.shape[1]
    cdef double tf = <double> T
    dk_a = np.zeros((T, C)); dv_a = np.zeros((T, C))
    dw_a = np.zeros(C); du_a = np.zeros(C)
    cdef double[:, ::1] dk = dk_a, dv = dv_a
    cdef double[::1] dw = dw_a, du = du_a
    cdef Py_ssize_t t, i, c
    cdef double d, wn, gw, resid, sw, tmp

    for t in range(T):
        for i in range(T):
            if i == t:
                continue
            d = <double> ((t - i if t > i else i - t) - 1)
            for c in range(C):
                wn = exp(-(d * w[c]) / tf + k[i, c] - m[t, c]) / dtil[t, c]
                gw = g[t, c] * wn
                resid = v[i, c] - out[t, c]
                dv[i, c] += gw
                dk[i, c] += gw * resid
                dw[c] += -(d / tf) * gw * resid
        for c in range(C):
            sw = g[t, c] * exp(u[c] + k[t, c] - m[t, c]) / dtil[t, c]
            dv[t, c] += sw
            tmp = sw * (v[t, c] - out[t, c])
            dk[t, c] += tmp
            du[c] += tmp
    return dk_a, dv_a, dw_a, du_a


def backward_scan(double[:, ::1] k, double[:, ::1] v,
                  double[::1] w, double[::1] u,
                  double[:, ::1] out, double[:, ::1] m,
                  double[:, ::1] dtil, double[:, ::1] g):
    cdef Py_ssize_t T = k.shape[0]
    cdef Py_ssize_t C = k.shape[1]
    cdef double tf = <double> T
    dk_a = np.zeros((T, C)); dv_a = np.zeros((T, C))
    dw_a = np.zeros(C); du_a = np.zeros(C)
    cdef double[:, ::1] dk = dk_a, dv = dv_a
    cdef double[::1] dw = dw_a, du = du_a

    UFp_a = np.empty((T, C)); USp_a = np.empty((T, C))
    CFp_a = np.empty((T, C)); CSp_a = np.empty((T, C)); Pp_a = np.empty((T, C))
    UFm_a = np.empty((T, C)); USm_a = np.empty((T, C))
    CFm_a = np.empty((T, C)); CSm_a = np.empty((T, C)); Pm_a = np.empty((T, C))
    cdef double[:, ::1] UFp = UFp_a, USp = USp_a, CFp = CFp_a, CSp = CSp_a, Pp = Pp_a
    cdef double[:, ::1] UFm = UFm_a, USm = USm_a, CFm = CFm_a, CSm = CSm_a, Pm = Pm_a
    uf_a = np.zeros(C); us_a = np.zeros(C); cf_a = np.zeros(C); cs_a = np.zeros(C)
    pp_a = np.full(C, -INFINITY)
    cdef double[::1] uf = uf_a, us = us_a, cf = cf_a, cs = cs_a, pp = pp_a
    cdef Py_ssize_t t, c
    cdef double ww, q, e1, e2, fphi, fpsi, efp, efm, S, Sp_, Z, Zp_, sw, resid

    for t in range(T):
        for c in range(C):
            UFp[t, c] = uf[c]
            USp[t, c] = us[c]
            CFp[t, c] = cf[c]
            CSp[t, c] = cs[c]
            Pp[t, c] = pp[c]
            ww = pp[c] - w[c] / tf
            q = fmax(ww, -m[t, c])
            e1 = exp(ww - q)
            e2 = exp(-m[t, c] - q)
            fphi = g[t, c] / dtil[t, c]
            fpsi = fphi * out[t, c]
            cf[c] = e1 * (cf[c] + uf[c])
            cs[c] = e1 * (cs[c] + us[c])
            uf[c] = e1 * uf[c] + e2 * fphi
            us[c] = e1 * us[c] + e2 * fpsi
            pp[c] = q
    for c in range(C):
        uf[c] = 0.0
        us[c] = 0.0
        cf[c] = 0.0
        cs[c] = 0.0
        pp[c] = -INFINITY
    for t in range(T - 1, -1, -1):
        for c in range(C):
            UFm[t, c] = uf[c]
            USm[t, c] = us[c]
            CFm[t, c] = cf[c]
            CSm[t, c] = cs[c]
            Pm[t, c] = pp[c]
            ww = pp[c] - w[c] / tf
            q = fmax(ww, -m[t, c])
            e1 = exp(ww - q)
            e2 = exp(-m[t, c] - q)
            fphi = g[t, c] / dtil[t, c]
            fpsi = fphi * out[t, c]
            cf[c] = e1 * (cf[c] + uf[c])
            cs[c] = e1 * (cs[c] + us[c])
            uf[c] = e1 * uf[c] + e2 * fphi
            us[c] = e1 * us[c] + e2 * fpsi
            pp[c] = q

    for t in range(T):
        for c in range(C):
            efp = exp(Pp[t, c] + k[t, c])
            efm = exp(Pm[t, c] + k[t, c])
            S = UFp[t, c] * efp + UFm[t, c] * efm
            Sp_ = USp[t, c] * efp + USm[t, c] * efm
            Z = CFp[t, c] * efp + CFm[t, c] * efm
            Zp_ = CSp[t, c] * efp + CSm[t, c] * efm
            sw = g[t, c] * exp(u[c] + k[t, c] - m[t, c]) / dtil[t, c]
            resid = v[t, c] - out[t, c]
            dv[t, c] = S + sw
            dk[t, c] = v[t, c] * S - Sp_ + sw * resid
            du[c] += sw * resid
            dw[c] += -(v[t, c] * Z - Zp_) / tf
    return dk_a, dv_a, dw_a, du_a
